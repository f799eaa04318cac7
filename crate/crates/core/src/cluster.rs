//! Simulated cluster topology: compute nodes grouped into psets, one IO node
//! per pset, and a single aggregate GFS endpoint.
//!
//! Node ids are dense. Compute nodes occupy `[0, nodes)`, IO nodes follow
//! (one per pset) and the GFS endpoint is the last id. Within every pset the
//! lowest-indexed `ifs_per_pset` compute nodes serve an IFS; the rest execute
//! tasks.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Decimal units. Rates are MB/s, which is exactly one byte per microsecond.
pub const KB: u64 = 1_000;
pub const MB: u64 = 1_000_000;
pub const GB: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRole {
    Executor,
    IfsServer,
    IoNode,
    GfsServer,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeRole::Executor => "executor",
            NodeRole::IfsServer => "ifs-server",
            NodeRole::IoNode => "io-node",
            NodeRole::GfsServer => "gfs-server",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkClass {
    /// Compute node to compute node (point-to-point over the torus).
    Torus,
    /// Compute node to its pset's IO node.
    CollectiveTree,
    /// The shared GFS bandwidth pool.
    GfsUplink,
    /// Copies that stay on one node.
    NodeLocal,
}

impl fmt::Display for LinkClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkClass::Torus => "torus",
            LinkClass::CollectiveTree => "collective-tree",
            LinkClass::GfsUplink => "gfs-uplink",
            LinkClass::NodeLocal => "node-local",
        })
    }
}

/// A link class together with its capacity in MB/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub class: LinkClass,
    pub capacity: f64,
}

/// Named bundle of measured rates and GFS behaviour.
///
/// The defaults are measured (not peak) values of the machine the model was
/// calibrated against; see [`CalibrationProfile::bgp_2008`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationProfile {
    pub name: String,
    /// Effective point-to-point torus rate per node direction, MB/s.
    pub torus_mbps: f64,
    /// Collective (tree) network rate per pset direction, MB/s.
    pub tree_mbps: f64,
    /// Aggregate GFS bandwidth shared by all clients, MB/s.
    pub gfs_mbps: f64,
    /// Node-local copy rate, MB/s.
    pub local_mbps: f64,
    /// Time to create one file on the GFS, seconds.
    pub gfs_create_latency_s: f64,
    /// Extra create latency per create already in service, seconds.
    #[serde(default)]
    pub gfs_create_contention_s: f64,
    /// Creates the GFS metadata service handles at once; `None` is unbounded.
    pub gfs_create_slots: Option<u32>,
    /// Creates in one directory are served one at a time.
    pub same_dir_serialize: bool,
    /// Free LFS space per compute node, bytes.
    pub lfs_capacity: u64,
    /// Capacity of one IFS, bytes.
    pub ifs_capacity: u64,
}

impl Default for CalibrationProfile {
    fn default() -> Self {
        Self::bgp_2008()
    }
}

impl CalibrationProfile {
    /// Measured BG/P rates: 140 MB/s torus-over-IP, 760 MB/s ZOID over the
    /// tree, 2.4 GB/s for the GPFS file system under test.
    ///
    /// The create constants are fitted: 4.0 s plus 0.2 ms per concurrent
    /// create, capped at 1050 in service, gives a 250 creates/s metadata
    /// ceiling. A ~4 s per-file cost is what brings 4 s tasks below 50%
    /// efficiency at 256 processors while 32 s tasks stay near 90%.
    pub fn bgp_2008() -> Self {
        CalibrationProfile {
            name: "bgp-2008".to_string(),
            torus_mbps: 140.0,
            tree_mbps: 760.0,
            gfs_mbps: 2400.0,
            local_mbps: 1000.0,
            gfs_create_latency_s: 4.0,
            gfs_create_contention_s: 0.0002,
            gfs_create_slots: Some(1050),
            same_dir_serialize: true,
            lfs_capacity: GB,
            ifs_capacity: 2 * GB,
        }
    }

    /// Hardware peak rates (850 MB/s tree, 425 MB/s torus link, 8 GB/s GPFS)
    /// with no create penalty. Useful as an upper bound.
    pub fn bgp_peak() -> Self {
        CalibrationProfile {
            name: "bgp-peak".to_string(),
            torus_mbps: 425.0,
            tree_mbps: 850.0,
            gfs_mbps: 8000.0,
            local_mbps: 1000.0,
            gfs_create_latency_s: 0.0,
            gfs_create_contention_s: 0.0,
            gfs_create_slots: None,
            same_dir_serialize: false,
            lfs_capacity: 2 * GB,
            ifs_capacity: 2 * GB,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "bgp-2008" => Some(Self::bgp_2008()),
            "bgp-peak" => Some(Self::bgp_peak()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let rates = [
            ("torus_mbps", self.torus_mbps),
            ("tree_mbps", self.tree_mbps),
            ("gfs_mbps", self.gfs_mbps),
            ("local_mbps", self.local_mbps),
        ];
        for (key, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(TopologyError::InvalidProfile(format!("{key} must be > 0")));
            }
        }
        for (key, v) in [
            ("gfs_create_latency_s", self.gfs_create_latency_s),
            ("gfs_create_contention_s", self.gfs_create_contention_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TopologyError::InvalidProfile(format!("{key} must be >= 0")));
            }
        }
        if self.gfs_create_slots == Some(0) {
            return Err(TopologyError::InvalidProfile("gfs_create_slots must be >= 1".into()));
        }
        Ok(())
    }

    pub fn link(&self, class: LinkClass) -> LinkSpec {
        let capacity = match class {
            LinkClass::Torus => self.torus_mbps,
            LinkClass::CollectiveTree => self.tree_mbps,
            LinkClass::GfsUplink => self.gfs_mbps,
            LinkClass::NodeLocal => self.local_mbps,
        };
        LinkSpec { class, capacity }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyConfig {
    pub nodes: u32,
    pub pset_size: u32,
    pub ifs_per_pset: u32,
    pub cores_per_node: u32,
    pub profile: CalibrationProfile,
}

impl TopologyConfig {
    pub fn new(nodes: u32, pset_size: u32, ifs_per_pset: u32) -> Self {
        TopologyConfig {
            nodes,
            pset_size,
            ifs_per_pset,
            cores_per_node: 1,
            profile: CalibrationProfile::bgp_2008(),
        }
    }

    pub fn with_profile(mut self, profile: CalibrationProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_cores(mut self, cores: u32) -> Self {
        self.cores_per_node = cores;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("topology has zero compute nodes")]
    ZeroNodes,
    #[error("pset_size must be at least 1")]
    ZeroPsetSize,
    #[error("cores_per_node must be at least 1")]
    ZeroCores,
    #[error("ifs_per_pset ({ifs}) must be smaller than pset_size ({pset})")]
    TooManyIfsServers { ifs: u32, pset: u32 },
    #[error("last pset has {size} nodes, leaving no executors beside {ifs} IFS servers")]
    PartialPsetTooSmall { size: u32, ifs: u32 },
    #[error("invalid calibration profile: {0}")]
    InvalidProfile(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not an executor")]
    NotAnExecutor(NodeId),
    #[error("topology has no IFS servers")]
    NoIfsConfigured,
}

/// An immutable cluster description.
#[derive(Debug, Clone)]
pub struct Topology {
    compute_nodes: u32,
    pset_size: u32,
    ifs_per_pset: u32,
    cores_per_node: u32,
    profile: CalibrationProfile,
    roles: Vec<NodeRole>,
    /// For each compute node, its IFS server (executors only).
    ifs_map: Vec<Option<NodeId>>,
    executors: Vec<NodeId>,
    ifs_servers: Vec<NodeId>,
}

pub fn build_topology(config: &TopologyConfig) -> Result<Topology, TopologyError> {
    Topology::build(config)
}

impl Topology {
    pub fn build(config: &TopologyConfig) -> Result<Topology, TopologyError> {
        if config.nodes == 0 {
            return Err(TopologyError::ZeroNodes);
        }
        if config.pset_size == 0 {
            return Err(TopologyError::ZeroPsetSize);
        }
        if config.cores_per_node == 0 {
            return Err(TopologyError::ZeroCores);
        }
        if config.ifs_per_pset >= config.pset_size {
            return Err(TopologyError::TooManyIfsServers {
                ifs: config.ifs_per_pset,
                pset: config.pset_size,
            });
        }
        config.profile.validate()?;

        let n = config.nodes;
        let psets = n.div_ceil(config.pset_size);
        let last = n - (psets - 1) * config.pset_size;
        if last <= config.ifs_per_pset {
            return Err(TopologyError::PartialPsetTooSmall { size: last, ifs: config.ifs_per_pset });
        }

        let mut roles = Vec::with_capacity((n + psets + 1) as usize);
        let mut ifs_map = vec![None; n as usize];
        let mut executors = Vec::new();
        let mut ifs_servers = Vec::new();
        for p in 0..psets {
            let first = p * config.pset_size;
            let end = (first + config.pset_size).min(n);
            let servers: Vec<NodeId> = (first..first + config.ifs_per_pset).map(NodeId).collect();
            for id in first..end {
                let k = id - first;
                if k < config.ifs_per_pset {
                    roles.push(NodeRole::IfsServer);
                    ifs_servers.push(NodeId(id));
                } else {
                    roles.push(NodeRole::Executor);
                    executors.push(NodeId(id));
                    if !servers.is_empty() {
                        let e = (k - config.ifs_per_pset) as usize;
                        ifs_map[id as usize] = Some(servers[e % servers.len()]);
                    }
                }
            }
        }
        roles.extend(std::iter::repeat_n(NodeRole::IoNode, psets as usize));
        roles.push(NodeRole::GfsServer);

        Ok(Topology {
            compute_nodes: n,
            pset_size: config.pset_size,
            ifs_per_pset: config.ifs_per_pset,
            cores_per_node: config.cores_per_node,
            profile: config.profile.clone(),
            roles,
            ifs_map,
            executors,
            ifs_servers,
        })
    }

    pub fn compute_nodes(&self) -> u32 {
        self.compute_nodes
    }

    pub fn node_count(&self) -> u32 {
        self.roles.len() as u32
    }

    pub fn pset_size(&self) -> u32 {
        self.pset_size
    }

    pub fn ifs_per_pset(&self) -> u32 {
        self.ifs_per_pset
    }

    pub fn cores_per_node(&self) -> u32 {
        self.cores_per_node
    }

    pub fn pset_count(&self) -> u32 {
        self.compute_nodes.div_ceil(self.pset_size)
    }

    pub fn profile(&self) -> &CalibrationProfile {
        &self.profile
    }

    pub fn gfs_aggregate_capacity(&self) -> f64 {
        self.profile.gfs_mbps
    }

    pub fn torus_rate(&self) -> f64 {
        self.profile.torus_mbps
    }

    pub fn tree_rate(&self) -> f64 {
        self.profile.tree_mbps
    }

    pub fn executors(&self) -> &[NodeId] {
        &self.executors
    }

    pub fn ifs_servers(&self) -> &[NodeId] {
        &self.ifs_servers
    }

    pub fn has_ifs(&self) -> bool {
        !self.ifs_servers.is_empty()
    }

    pub fn gfs_node(&self) -> NodeId {
        NodeId(self.roles.len() as u32 - 1)
    }

    pub fn io_node(&self, pset: u32) -> NodeId {
        NodeId(self.compute_nodes + pset)
    }

    pub fn is_compute(&self, node: NodeId) -> bool {
        node.0 < self.compute_nodes
    }

    /// Pset of a compute node or IO node.
    pub fn pset_of(&self, node: NodeId) -> Result<u32, TopologyError> {
        if node.0 < self.compute_nodes {
            Ok(node.0 / self.pset_size)
        } else if node.0 < self.compute_nodes + self.pset_count() {
            Ok(node.0 - self.compute_nodes)
        } else {
            Err(TopologyError::UnknownNode(node))
        }
    }

    pub fn role_of(&self, node: NodeId) -> Result<NodeRole, TopologyError> {
        self.roles.get(node.index()).copied().ok_or(TopologyError::UnknownNode(node))
    }

    pub fn ifs_server_for(&self, node: NodeId) -> Result<NodeId, TopologyError> {
        match self.role_of(node)? {
            NodeRole::Executor => {}
            _ => return Err(TopologyError::NotAnExecutor(node)),
        }
        self.ifs_map[node.index()].ok_or(TopologyError::NoIfsConfigured)
    }

    /// Executors served by one IFS server, in id order.
    pub fn executors_served_by(&self, server: NodeId) -> Vec<NodeId> {
        self.executors
            .iter()
            .copied()
            .filter(|e| self.ifs_map[e.index()] == Some(server))
            .collect()
    }

    /// The link classes a transfer between two nodes crosses, in order.
    pub fn link_classes_between(&self, src: NodeId, dst: NodeId) -> Vec<LinkClass> {
        let gfs = self.gfs_node();
        if src == dst {
            vec![LinkClass::NodeLocal]
        } else if src == gfs || dst == gfs {
            vec![LinkClass::CollectiveTree, LinkClass::GfsUplink]
        } else if self.is_compute(src) && self.is_compute(dst) {
            vec![LinkClass::Torus]
        } else {
            vec![LinkClass::CollectiveTree]
        }
    }
}
