//! Output collection: LFS -> IFS staging, flush policy, batched archive
//! writes to GFS, and the synchronous per-output GFS baseline.
//!
//! IFS layout per server: `scratch/` receives copies in progress,
//! `staging/` holds complete outputs waiting for a flush, `cache/` keeps
//! flushed outputs for later readers until space is needed. Names inside
//! these directories are [`flat_name`]s of the object names.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::Cursor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{archive_len, create_archive, ArchiveError, DirectoryEntry, HEADER_LEN};
use crate::cluster::{NodeId, MB};
use crate::simnet::SimTime;
use crate::store::{flat_name, join, Content, FileObject, Store, StoreError};
use crate::workload::OutputSpec;

pub const SCRATCH_DIR: &str = "scratch";
pub const STAGING_DIR: &str = "staging";
pub const CACHE_DIR: &str = "cache";
/// Where tasks leave their outputs on the LFS.
pub const LFS_OUT_DIR: &str = "out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectorPolicy {
    pub max_delay_s: f64,
    pub max_data: u64,
    pub min_free_space: u64,
    pub gfs_block_size: u64,
    /// Keep flushed outputs on the IFS as an evictable read cache.
    pub retain_cache: bool,
}

impl Default for CollectorPolicy {
    fn default() -> Self {
        CollectorPolicy {
            max_delay_s: 10.0,
            max_data: 256 * MB,
            min_free_space: 128 * MB,
            gfs_block_size: 4 * MB,
            retain_cache: true,
        }
    }
}

impl CollectorPolicy {
    pub fn max_delay(&self) -> SimTime {
        SimTime::from_secs_f64(self.max_delay_s)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_delay_s.is_nan() || self.max_delay_s <= 0.0 {
            return Err("collector max_delay_s must be positive".into());
        }
        if self.max_data == 0 || self.min_free_space == 0 || self.gfs_block_size == 0 {
            return Err("collector max_data, min_free_space and gfs_block_size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlushReason {
    None,
    Delay,
    Data,
    Space,
    /// Unconditional flush at workload end.
    Drain,
    /// Staging an output failed for lack of IFS space.
    Full,
}

impl FlushReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FlushReason::None => "none",
            FlushReason::Delay => "delay",
            FlushReason::Data => "data",
            FlushReason::Space => "space",
            FlushReason::Drain => "drain",
            FlushReason::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::None, Self::Delay, Self::Data, Self::Space, Self::Drain, Self::Full]
            .into_iter()
            .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for FlushReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlushDecision {
    pub flush: bool,
    pub reason: FlushReason,
}

/// The three policy conditions with strict comparisons, reason taken from
/// the first that holds (delay, data, space).
pub fn flush_condition(
    elapsed: SimTime,
    buffered: u64,
    ifs_free: u64,
    policy: &CollectorPolicy,
) -> FlushDecision {
    let reason = if elapsed > policy.max_delay() {
        FlushReason::Delay
    } else if buffered > policy.max_data {
        FlushReason::Data
    } else if ifs_free < policy.min_free_space {
        FlushReason::Space
    } else {
        FlushReason::None
    };
    FlushDecision { flush: reason != FlushReason::None, reason }
}

pub fn should_flush(state: &CollectorState, now: SimTime, ifs_free: u64, policy: &CollectorPolicy) -> FlushDecision {
    flush_condition(now.saturating_sub(state.last_write), state.buffered_bytes, ifs_free, policy)
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedObject {
    pub name: String,
    pub size: u64,
}

/// Members claimed by one flush, in staging order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlushSnapshot {
    pub ifs_node: NodeId,
    pub seq: u32,
    pub reason: FlushReason,
    pub members: Vec<StagedObject>,
    pub started_at: SimTime,
}

impl FlushSnapshot {
    pub fn bytes(&self) -> u64 {
        self.members.iter().map(|m| m.size).sum()
    }

    pub fn archive_name(&self) -> String {
        archive_name(self.ifs_node, self.seq)
    }

    /// Each flush writes into its own GFS directory, so a drain that
    /// overlaps a regular flush does not queue behind its create.
    pub fn gfs_dir(&self) -> String {
        format!("archives/ifs-{}/f{}", self.ifs_node.0, self.seq)
    }

    pub fn gfs_path(&self) -> String {
        join(&self.gfs_dir(), &self.archive_name())
    }

    /// Size of the packed archive.
    pub fn archive_size(&self) -> u64 {
        archive_len(self.members.iter().map(|m| (m.name.len(), m.size)))
    }
}

pub fn archive_name(ifs_node: NodeId, seq: u32) -> String {
    format!("cio-{}-{}.cioa", ifs_node.0, seq)
}

pub const FLUSH_HEADER: &str = "time_us,ifs_node,reason,members,bytes,archive_name";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlushRecord {
    pub time_us: u64,
    pub ifs_node: NodeId,
    pub reason: FlushReason,
    pub members: usize,
    pub bytes: u64,
    pub archive: String,
}

impl FlushRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.time_us, self.ifs_node.0, self.reason, self.members, self.bytes, self.archive
        )
    }
}

/// Where a flushed output ended up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveLocation {
    pub archive: String,
    pub offset: u64,
    pub size: u64,
}

/// Collector bookkeeping for one IFS server. `buffered_bytes` counts
/// staged outputs not yet claimed by a flush; claimed members stay in the
/// staging directory until their flush commits.
#[derive(Debug, Clone)]
pub struct CollectorState {
    pub ifs_node: NodeId,
    staged: Vec<StagedObject>,
    pub buffered_bytes: u64,
    pub last_write: SimTime,
    next_seq: u32,
    in_flight: u32,
    cache: VecDeque<StagedObject>,
    cache_bytes: u64,
    pub history: Vec<FlushRecord>,
}

impl CollectorState {
    pub fn new(ifs_node: NodeId, start: SimTime) -> Self {
        CollectorState {
            ifs_node,
            staged: Vec::new(),
            buffered_bytes: 0,
            last_write: start,
            next_seq: 0,
            in_flight: 0,
            cache: VecDeque::new(),
            cache_bytes: 0,
            history: Vec::new(),
        }
    }

    pub fn staged(&self) -> &[StagedObject] {
        &self.staged
    }

    pub fn in_flight(&self) -> u32 {
        self.in_flight
    }

    pub fn is_idle(&self) -> bool {
        self.staged.is_empty() && self.in_flight == 0
    }

    fn note_staged(&mut self, obj: StagedObject) {
        self.buffered_bytes += obj.size;
        self.staged.push(obj);
    }

    /// Claims every unclaimed staged member. Returns `None` when there is
    /// nothing to flush.
    pub fn begin_flush(&mut self, reason: FlushReason, now: SimTime) -> Option<FlushSnapshot> {
        if self.staged.is_empty() {
            return None;
        }
        let members = std::mem::take(&mut self.staged);
        self.buffered_bytes = 0;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.in_flight += 1;
        Some(FlushSnapshot { ifs_node: self.ifs_node, seq, reason, members, started_at: now })
    }

    /// Returns the members of a failed flush to the unclaimed set.
    pub fn abort_flush(&mut self, snap: FlushSnapshot) {
        self.in_flight -= 1;
        let mut members = snap.members;
        self.buffered_bytes += members.iter().map(|m| m.size).sum::<u64>();
        members.append(&mut self.staged);
        self.staged = members;
    }

    /// Cleans up after the archive is on GFS: staged copies move to the
    /// cache or are deleted.
    pub fn finish_flush(
        &mut self,
        snap: &FlushSnapshot,
        ifs: &dyn Store,
        policy: &CollectorPolicy,
        now: SimTime,
    ) -> Result<FlushRecord, CollectError> {
        if policy.retain_cache {
            ifs.mkdir(CACHE_DIR)?;
        }
        for m in &snap.members {
            let flat = flat_name(&m.name);
            if policy.retain_cache {
                ifs.atomic_move(STAGING_DIR, CACHE_DIR, &flat)?;
                self.cache_bytes += m.size;
                self.cache.push_back(m.clone());
            } else {
                ifs.delete(&join(STAGING_DIR, &flat))?;
            }
        }
        self.in_flight -= 1;
        self.last_write = now;
        let rec = FlushRecord {
            time_us: now.0,
            ifs_node: self.ifs_node,
            reason: snap.reason,
            members: snap.members.len(),
            bytes: snap.bytes(),
            archive: snap.gfs_path(),
        };
        self.history.push(rec.clone());
        Ok(rec)
    }

    /// Frees cached outputs, oldest first, until `needed` bytes are free.
    /// Returns the evicted names.
    pub fn evict_cache(&mut self, ifs: &dyn Store, needed: u64) -> Result<Vec<String>, StoreError> {
        let mut evicted = Vec::new();
        while ifs.free_space() < needed {
            let Some(obj) = self.cache.pop_front() else { break };
            self.cache_bytes -= obj.size;
            ifs.delete(&join(CACHE_DIR, &flat_name(&obj.name)))?;
            evicted.push(obj.name);
        }
        Ok(evicted)
    }

    /// Bytes held in the cache. They count as free space for the flush
    /// policy, since they can be evicted at any time.
    pub fn cache_bytes(&self) -> u64 {
        self.cache_bytes
    }

    pub fn cached(&self, name: &str) -> bool {
        self.cache.iter().any(|o| o.name == name)
    }

    /// Drops a cache entry whose object was removed out of band.
    pub fn forget_cached(&mut self, name: &str) {
        self.cache.retain(|o| o.name != name);
        self.cache_bytes = self.cache.iter().map(|o| o.size).sum();
    }
}

/// Copies each output from the LFS into IFS scratch, moves it into
/// staging and deletes the LFS copy. On a full IFS the cache is evicted
/// and the copy retried once; a second failure is returned with the
/// outputs staged so far left in place.
pub fn stage_task_output(
    outputs: &[OutputSpec],
    lfs: &dyn Store,
    ifs: &dyn Store,
    state: &mut CollectorState,
) -> Result<Vec<FileObject>, StoreError> {
    let mut staged = Vec::with_capacity(outputs.len());
    if !outputs.is_empty() {
        ifs.mkdir(STAGING_DIR)?;
    }
    for o in outputs {
        let local = join(LFS_OUT_DIR, &o.name);
        let content = lfs.get(&local)?;
        let flat = flat_name(&o.name);
        let scratch = join(SCRATCH_DIR, &flat);
        if let Err(StoreError::Full { needed, .. }) = ifs.put(&scratch, content.clone()) {
            state.evict_cache(ifs, needed)?;
            ifs.put(&scratch, content)?;
        }
        let obj = ifs.atomic_move(SCRATCH_DIR, STAGING_DIR, &flat)?;
        lfs.delete(&local)?;
        state.note_staged(StagedObject { name: o.name.clone(), size: obj.size });
        staged.push(obj);
    }
    Ok(staged)
}

/// Archive content for a snapshot plus member locations. Size-only
/// members yield a size-only archive with the same layout.
pub fn pack_snapshot(snap: &FlushSnapshot, ifs: &dyn Store) -> Result<(Content, Vec<DirectoryEntry>), CollectError> {
    let mut contents = Vec::with_capacity(snap.members.len());
    let mut all_bytes = true;
    for m in &snap.members {
        let c = ifs.get(&join(STAGING_DIR, &flat_name(&m.name)))?;
        all_bytes &= c.bytes().is_some();
        contents.push(c);
    }
    if all_bytes {
        let mut w = create_archive(Cursor::new(Vec::new()))?;
        for (m, c) in snap.members.iter().zip(&contents) {
            w.append_member(&m.name, c.bytes().unwrap_or_default())?;
        }
        w.finalize()?;
        let entries = w.entries().to_vec();
        Ok((Content::Bytes(w.into_inner().into_inner()), entries))
    } else {
        let mut pos = HEADER_LEN;
        let entries = snap
            .members
            .iter()
            .map(|m| {
                let e = DirectoryEntry { path: m.name.clone(), offset: pos, size: m.size, crc32: 0 };
                pos += m.size;
                e
            })
            .collect();
        Ok((Content::Sized(snap.archive_size()), entries))
    }
}

/// Packs the snapshot and writes it to GFS as one object in
/// `gfs_block_size` writes. Staging is not touched, so a failure here can
/// be retried.
pub fn flush_to_gfs(
    snap: &FlushSnapshot,
    ifs: &dyn Store,
    gfs: &dyn Store,
    policy: &CollectorPolicy,
) -> Result<Vec<(String, ArchiveLocation)>, CollectError> {
    let (content, entries) = pack_snapshot(snap, ifs)?;
    let path = snap.gfs_path();
    gfs.put_blocked(&path, content, policy.gfs_block_size)?;
    Ok(entries
        .into_iter()
        .map(|e| (e.path, ArchiveLocation { archive: path.clone(), offset: e.offset, size: e.size }))
        .collect())
}

/// GFS directory for a node's outputs in GFS-direct mode.
pub fn baseline_dir(node: NodeId) -> String {
    format!("out/node-{}", node.0)
}

pub fn baseline_path(node: NodeId, output: &str) -> String {
    join(&baseline_dir(node), &flat_name(output))
}

/// GFS-direct store side: each output becomes its own GFS file in the
/// node's directory. Timing (one create and one write per output, on the
/// task's critical path) is charged by the caller's network model.
pub fn synchronous_baseline_write(
    node: NodeId,
    outputs: &[OutputSpec],
    lfs: &dyn Store,
    gfs: &dyn Store,
) -> Result<Vec<FileObject>, StoreError> {
    outputs
        .iter()
        .map(|o| {
            let local = join(LFS_OUT_DIR, &o.name);
            let obj = gfs.put(&baseline_path(node, &o.name), lfs.get(&local)?)?;
            lfs.delete(&local)?;
            Ok(obj)
        })
        .collect()
}

/// Index from object name to archive location, built from flush results.
pub type LocationRegistry = BTreeMap<String, ArchiveLocation>;
