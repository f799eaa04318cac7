use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::sync::{Arc, Mutex};

use crate::cluster::{NodeId, MB};

use super::{join, normalize, split_path, Content, FileObject, Store, StoreError, StoreResult, Tier};

pub const DEFAULT_CHUNK_SIZE: u64 = MB;

/// Chunks live on the servers under this directory.
const CHUNK_DIR: &str = "stripe";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlacement {
    pub index: u64,
    /// Position of the server in the stripe.
    pub server: usize,
    pub node: NodeId,
    pub range: Range<u64>,
}

/// Where each chunk of one object lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StripeMap {
    pub name: String,
    pub size: u64,
    pub chunk_size: u64,
    pub checksum: Option<u32>,
    pub chunks: Vec<ChunkPlacement>,
    id: u64,
}

impl StripeMap {
    /// Round-robin layout of `size` bytes over `servers` starting at server 0.
    pub fn layout(name: &str, size: u64, chunk_size: u64, nodes: &[NodeId]) -> StripeMap {
        let count = size.div_ceil(chunk_size).max(1);
        let chunks = (0..count)
            .map(|i| {
                let server = (i % nodes.len() as u64) as usize;
                let start = i * chunk_size;
                ChunkPlacement { index: i, server, node: nodes[server], range: start..(start + chunk_size).min(size) }
            })
            .collect();
        StripeMap { name: name.to_string(), size, chunk_size, checksum: None, chunks, id: 0 }
    }

    /// Bytes each server holds, indexed by stripe position.
    pub fn bytes_per_server(&self, width: usize) -> Vec<u64> {
        let mut per = vec![0u64; width];
        for c in &self.chunks {
            per[c.server] += c.range.end - c.range.start;
        }
        per
    }

    fn chunk_name(&self, index: u64) -> String {
        format!("{CHUNK_DIR}/{}.{index}", self.id)
    }
}

#[derive(Debug, Default)]
struct Inner {
    dirs: BTreeSet<String>,
    maps: BTreeMap<String, BTreeMap<String, StripeMap>>,
    next_id: u64,
}

/// An IFS composed from several server stores, each object split into
/// fixed-size chunks placed round-robin.
pub struct StripedStore {
    servers: Vec<(NodeId, Arc<dyn Store>)>,
    chunk_size: u64,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for StripedStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StripedStore")
            .field("width", &self.servers.len())
            .field("chunk_size", &self.chunk_size)
            .finish()
    }
}

/// Builds a striped store over `servers`.
pub fn stripe_create(servers: Vec<(NodeId, Arc<dyn Store>)>, chunk_size: u64) -> StoreResult<StripedStore> {
    if servers.is_empty() {
        return Err(StoreError::NoServers);
    }
    if chunk_size == 0 {
        return Err(StoreError::ZeroChunk);
    }
    let mut inner = Inner::default();
    inner.dirs.insert(String::new());
    Ok(StripedStore { servers, chunk_size, inner: Mutex::new(inner) })
}

impl StripedStore {
    pub fn width(&self) -> usize {
        self.servers.len()
    }

    pub fn chunk_size(&self) -> u64 {
        self.chunk_size
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        self.servers.iter().map(|(n, _)| *n).collect()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Splits `content` into chunks and writes them round-robin. If any
    /// chunk write fails the chunks already written are removed.
    pub fn stripe_put(&self, name: &str, content: Content) -> StoreResult<StripeMap> {
        let (dir, base) = split_path(name)?;
        let full = join(&dir, &base);
        let size = content.len();
        let mut map = StripeMap::layout(&full, size, self.chunk_size, &self.nodes());
        map.checksum = content.checksum();
        {
            let mut inner = self.lock();
            if inner.maps.get(&dir).is_some_and(|d| d.contains_key(&base)) {
                return Err(StoreError::Exists(full));
            }
            map.id = inner.next_id;
            inner.next_id += 1;
        }

        let need = map.bytes_per_server(self.width());
        for (i, (_, s)) in self.servers.iter().enumerate() {
            let free = s.free_space();
            if need[i] > free {
                return Err(StoreError::Full { needed: need[i], free });
            }
        }

        let mut written: Vec<(usize, String)> = Vec::new();
        for c in &map.chunks {
            let piece = match &content {
                Content::Bytes(b) => Content::Bytes(b[c.range.start as usize..c.range.end as usize].to_vec()),
                Content::Sized(_) => Content::Sized(c.range.end - c.range.start),
            };
            let chunk_name = map.chunk_name(c.index);
            match self.servers[c.server].1.put(&chunk_name, piece) {
                Ok(_) => written.push((c.server, chunk_name)),
                Err(e) => {
                    for (s, n) in written {
                        let _ = self.servers[s].1.delete(&n);
                    }
                    return Err(e);
                }
            }
        }

        let mut inner = self.lock();
        if inner.maps.get(&dir).is_some_and(|d| d.contains_key(&base)) {
            drop(inner);
            for (s, n) in written {
                let _ = self.servers[s].1.delete(&n);
            }
            return Err(StoreError::Exists(full));
        }
        ensure_dir(&mut inner, &dir);
        inner.maps.entry(dir).or_default().insert(base, map.clone());
        Ok(map)
    }

    pub fn stripe_map(&self, name: &str) -> StoreResult<StripeMap> {
        let (dir, base) = split_path(name)?;
        let inner = self.lock();
        inner
            .maps
            .get(&dir)
            .and_then(|d| d.get(&base))
            .cloned()
            .ok_or_else(|| StoreError::NotFound(name.to_string()))
    }

    /// Reassembles the object from its chunks.
    pub fn stripe_get(&self, name: &str) -> StoreResult<Content> {
        let map = self.stripe_map(name)?;
        let mut out = Vec::with_capacity(map.size as usize);
        for c in &map.chunks {
            match self.servers[c.server].1.get(&map.chunk_name(c.index))? {
                Content::Bytes(b) => out.extend_from_slice(&b),
                Content::Sized(_) => return Ok(Content::Sized(map.size)),
            }
        }
        if map.checksum.is_some_and(|c| c != crc32fast::hash(&out)) {
            return Err(StoreError::Corrupt(map.name));
        }
        Ok(Content::Bytes(out))
    }
}

fn ensure_dir(inner: &mut Inner, dir: &str) {
    let mut cur = String::new();
    for part in dir.split('/').filter(|p| !p.is_empty()) {
        cur = join(&cur, part);
        inner.dirs.insert(cur.clone());
    }
}

fn to_object(m: &StripeMap) -> FileObject {
    FileObject { name: m.name.clone(), size: m.size, checksum: m.checksum }
}

impl Store for StripedStore {
    fn tier(&self) -> Tier {
        Tier::Ifs
    }

    fn capacity(&self) -> u64 {
        self.servers.iter().map(|(_, s)| s.capacity()).sum()
    }

    fn used(&self) -> u64 {
        self.servers.iter().map(|(_, s)| s.used()).sum()
    }

    fn put(&self, name: &str, content: Content) -> StoreResult<FileObject> {
        self.stripe_put(name, content).map(|m| to_object(&m))
    }

    fn get(&self, name: &str) -> StoreResult<Content> {
        self.stripe_get(name)
    }

    fn stat(&self, name: &str) -> StoreResult<FileObject> {
        self.stripe_map(name).map(|m| to_object(&m))
    }

    fn read_range(&self, name: &str, offset: u64, len: u64) -> StoreResult<Vec<u8>> {
        let map = self.stripe_map(name)?;
        let end = offset.checked_add(len).filter(|&e| e <= map.size).ok_or_else(|| StoreError::OutOfRange {
            name: name.to_string(),
            offset,
            len,
            size: map.size,
        })?;
        let mut out = Vec::with_capacity(len as usize);
        for c in map.chunks.iter().filter(|c| c.range.start < end && c.range.end > offset) {
            let lo = offset.max(c.range.start);
            let hi = end.min(c.range.end);
            let piece = self.servers[c.server].1.read_range(&map.chunk_name(c.index), lo - c.range.start, hi - lo)?;
            out.extend_from_slice(&piece);
        }
        Ok(out)
    }

    fn delete(&self, name: &str) -> StoreResult<FileObject> {
        let (dir, base) = split_path(name)?;
        let map = {
            let mut inner = self.lock();
            inner
                .maps
                .get_mut(&dir)
                .and_then(|d| d.remove(&base))
                .ok_or_else(|| StoreError::NotFound(name.to_string()))?
        };
        for c in &map.chunks {
            self.servers[c.server].1.delete(&map.chunk_name(c.index))?;
        }
        Ok(to_object(&map))
    }

    fn list(&self, dir: &str) -> StoreResult<Vec<String>> {
        Ok(self.list_many(&[dir])?.remove(0))
    }

    fn list_many(&self, dirs: &[&str]) -> StoreResult<Vec<Vec<String>>> {
        let inner = self.lock();
        dirs.iter()
            .map(|d| {
                let d = normalize(d)?;
                if !inner.dirs.contains(&d) {
                    return Err(StoreError::NotFound(d));
                }
                Ok(inner.maps.get(&d).map(|m| m.keys().cloned().collect()).unwrap_or_default())
            })
            .collect()
    }

    fn mkdir(&self, dir: &str) -> StoreResult<()> {
        let dir = normalize(dir)?;
        ensure_dir(&mut self.lock(), &dir);
        Ok(())
    }

    fn atomic_move(&self, from_dir: &str, to_dir: &str, name: &str) -> StoreResult<FileObject> {
        let from = normalize(from_dir)?;
        let to = normalize(to_dir)?;
        let (_, base) = split_path(name)?;
        let mut inner = self.lock();
        if !inner.dirs.contains(&to) {
            return Err(StoreError::NotFound(to));
        }
        if inner.maps.get(&to).is_some_and(|d| d.contains_key(&base)) {
            return Err(StoreError::Exists(join(&to, &base)));
        }
        let mut map = inner
            .maps
            .get_mut(&from)
            .and_then(|d| d.remove(&base))
            .ok_or_else(|| StoreError::NotFound(join(&from, &base)))?;
        map.name = join(&to, &base);
        let obj = to_object(&map);
        inner.maps.entry(to).or_default().insert(base, map);
        Ok(obj)
    }

    fn objects(&self) -> Vec<FileObject> {
        let inner = self.lock();
        let mut all: Vec<FileObject> = inner.maps.values().flat_map(|d| d.values().map(to_object)).collect();
        all.sort_by(|a, b| a.name.cmp(&b.name));
        all
    }
}
