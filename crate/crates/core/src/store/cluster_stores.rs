use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::cluster::{NodeId, Topology};

use super::{DirStore, MemStore, Store, StoreResult, Tier};

/// Capacity used for the global file system.
const GFS_CAPACITY: u64 = u64::MAX / 4;

/// The stores of one cluster: a GFS, one LFS per compute node and one IFS
/// per IFS server.
#[derive(Clone)]
pub struct ClusterStores {
    pub gfs: Arc<dyn Store>,
    pub lfs: Vec<Arc<dyn Store>>,
    pub ifs: BTreeMap<NodeId, Arc<dyn Store>>,
}

impl std::fmt::Debug for ClusterStores {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClusterStores").field("lfs", &self.lfs.len()).field("ifs", &self.ifs.len()).finish()
    }
}

impl ClusterStores {
    /// In-memory stores; `sizes_only` drops byte content.
    pub fn in_memory(topology: &Topology, sizes_only: bool) -> Self {
        let profile = topology.profile();
        let mk = |tier, cap| -> Arc<dyn Store> {
            if sizes_only {
                Arc::new(MemStore::sizes_only(tier, cap))
            } else {
                Arc::new(MemStore::new(tier, cap))
            }
        };
        ClusterStores {
            gfs: mk(Tier::Gfs, GFS_CAPACITY),
            lfs: (0..topology.compute_nodes()).map(|_| mk(Tier::Lfs, profile.lfs_capacity)).collect(),
            ifs: topology.ifs_servers().iter().map(|&n| (n, mk(Tier::Ifs, profile.ifs_capacity))).collect(),
        }
    }

    /// Directory-backed stores under `root`: `gfs/` for the shared store and
    /// `node-<k>/{lfs,ifs}/` per compute node.
    pub fn on_disk(root: &Path, topology: &Topology) -> StoreResult<Self> {
        let profile = topology.profile();
        let gfs: Arc<dyn Store> = Arc::new(DirStore::open(root, Tier::Gfs, GFS_CAPACITY)?);
        let mut lfs: Vec<Arc<dyn Store>> = Vec::new();
        for k in 0..topology.compute_nodes() {
            lfs.push(Arc::new(DirStore::open(root.join(format!("node-{k}")), Tier::Lfs, profile.lfs_capacity)?));
        }
        let mut ifs = BTreeMap::new();
        for &n in topology.ifs_servers() {
            let s: Arc<dyn Store> = Arc::new(DirStore::open(root.join(format!("node-{}", n.0)), Tier::Ifs, profile.ifs_capacity)?);
            ifs.insert(n, s);
        }
        Ok(ClusterStores { gfs, lfs, ifs })
    }

    pub fn lfs(&self, node: NodeId) -> &Arc<dyn Store> {
        &self.lfs[node.index()]
    }

    pub fn ifs(&self, server: NodeId) -> &Arc<dyn Store> {
        &self.ifs[&server]
    }
}
