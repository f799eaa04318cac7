//! Collective IO for file-based many-task computing: a flow-level cluster
//! simulator, tiered object stores, an indexed archive format, input
//! distribution, output collection and the experiment harness.

pub mod archive;
pub mod cluster;
pub mod simnet;
pub mod store;
pub mod workload;
pub mod distribute;
pub mod collect;
pub mod harness;

pub use cluster::{CalibrationProfile, NodeId, NodeRole, Topology, TopologyConfig, GB, KB, MB};
pub use collect::{CollectorPolicy, FlushReason, FlushRecord};
pub use distribute::{PlacementPlan, PlacementPolicy};
pub use harness::{Mode, RunReport, RunSettings, ScenarioConfig};
pub use simnet::{Network, SimTime};
pub use store::{ClusterStores, Content, Store, StoreError, Tier};
pub use workload::{OutputSpec, TaskId, TaskSpec, Workload};
