//! Scenario configuration (TOML).
//!
//! ```toml
//! [topology]
//! nodes = 4096
//! pset_size = 64
//! ifs_per_pset = 1
//! profile = "bgp-2008"
//!
//! [mode]
//! kind = "cio"          # or "gfs-direct"
//! dispatch_rate = 1000.0
//! seed = 7
//!
//! [workload]
//! kind = "synthetic"
//! tasks = 8192
//! compute_s = 4.0
//! output_size = 131072
//!
//! [output]
//! dir = "runs/demo"
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{build_topology, CalibrationProfile, Topology, TopologyConfig};
use crate::collect::CollectorPolicy;
use crate::distribute::PlacementPolicy;
use crate::simnet::SimTime;
use crate::workload::{
    dock_like_workflow, generate_synthetic, parse_workload, DockLayout, DockParams, SyntheticParams, Workload,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Mode {
    #[default]
    #[serde(rename = "cio")]
    Cio,
    #[serde(rename = "gfs-direct")]
    GfsDirect,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Cio => "cio",
            Mode::GfsDirect => "gfs-direct",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "cio" => Some(Mode::Cio),
            "gfs-direct" => Some(Mode::GfsDirect),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub nodes: u32,
    pub pset_size: u32,
    pub ifs_per_pset: u32,
    pub cores_per_node: u32,
    pub profile: String,
    pub torus_mbps: Option<f64>,
    pub tree_mbps: Option<f64>,
    pub gfs_mbps: Option<f64>,
    pub local_mbps: Option<f64>,
    pub gfs_create_latency_s: Option<f64>,
    pub gfs_create_contention_s: Option<f64>,
    pub gfs_create_slots: Option<u32>,
    pub same_dir_serialize: Option<bool>,
    pub lfs_capacity: Option<u64>,
    pub ifs_capacity: Option<u64>,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            nodes: 256,
            pset_size: 64,
            ifs_per_pset: 1,
            cores_per_node: 1,
            profile: "bgp-2008".into(),
            torus_mbps: None,
            tree_mbps: None,
            gfs_mbps: None,
            local_mbps: None,
            gfs_create_latency_s: None,
            gfs_create_contention_s: None,
            gfs_create_slots: None,
            same_dir_serialize: None,
            lfs_capacity: None,
            ifs_capacity: None,
        }
    }
}

impl TopologySection {
    pub fn profile(&self) -> Result<CalibrationProfile, ConfigError> {
        let mut p = CalibrationProfile::by_name(&self.profile)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown calibration profile {:?}", self.profile)))?;
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { p.$f = v; } )* };
        }
        over!(torus_mbps, tree_mbps, gfs_mbps, local_mbps, gfs_create_latency_s, gfs_create_contention_s, same_dir_serialize, lfs_capacity, ifs_capacity);
        if self.gfs_create_slots.is_some() {
            p.gfs_create_slots = self.gfs_create_slots;
        }
        Ok(p)
    }

    pub fn topology_config(&self) -> Result<TopologyConfig, ConfigError> {
        Ok(TopologyConfig::new(self.nodes, self.pset_size, self.ifs_per_pset)
            .with_cores(self.cores_per_node)
            .with_profile(self.profile()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeSection {
    pub kind: Mode,
    /// Task dispatches per second; 0 disables the cap.
    pub dispatch_rate: f64,
    pub seed: u64,
}

impl Default for ModeSection {
    fn default() -> Self {
        ModeSection { kind: Mode::Cio, dispatch_rate: 1000.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    #[default]
    Synthetic,
    Dock,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    pub kind: WorkloadKind,
    /// Workload file for `kind = "file"`, relative to the config file.
    pub path: Option<PathBuf>,
    pub tasks: u32,
    pub compute_s: f64,
    pub output_size: u64,
    pub output_size_max: Option<u64>,
    pub shared_input: Option<String>,
    pub shared_input_size: u64,
    /// DOCK shard count for CIO runs; 0 uses one shard per IFS server.
    pub dock_shards: u32,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            kind: WorkloadKind::Synthetic,
            path: None,
            tasks: 256,
            compute_s: 4.0,
            output_size: 1000,
            output_size_max: None,
            shared_input: None,
            shared_input_size: 0,
            dock_shards: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Record every flow start/end in flows.csv.
    pub flow_log: bool,
    /// Carry real bytes through the stores instead of sizes only.
    pub materialize: bool,
    /// Worker threads for emulation.
    pub workers: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("cio-run"), flow_log: true, materialize: false, workers: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: TopologySection,
    pub mode: ModeSection,
    pub placement: PlacementPolicy,
    pub collector: CollectorPolicy,
    pub workload: WorkloadSection,
    pub output: OutputSection,
    /// Directory relative workload paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn build_topology(&self) -> Result<Topology, ConfigError> {
        let topo = build_topology(&self.topology.topology_config()?).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.mode.kind == Mode::Cio && !topo.has_ifs() {
            return Err(ConfigError::Invalid("mode cio needs ifs_per_pset >= 1".into()));
        }
        Ok(topo)
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build_topology()?;
        if !(self.mode.dispatch_rate.is_finite() && self.mode.dispatch_rate >= 0.0) {
            return Err(ConfigError::Invalid("dispatch_rate must be >= 0".into()));
        }
        if self.placement.lfs_max_bytes == 0 {
            return Err(ConfigError::Invalid("placement lfs_max_bytes must be positive".into()));
        }
        self.collector.validate().map_err(ConfigError::Invalid)?;
        if self.workload.kind != WorkloadKind::File
            && !(self.workload.compute_s.is_finite() && self.workload.compute_s >= 0.0)
        {
            return Err(ConfigError::Invalid("workload compute_s must be >= 0".into()));
        }
        Ok(())
    }

    pub fn load_workload(&self, topology: &Topology) -> Result<Workload, ConfigError> {
        let w = &self.workload;
        let workload = match w.kind {
            WorkloadKind::File => {
                let path = w.path.as_ref().ok_or_else(|| ConfigError::Invalid("workload kind file needs path".into()))?;
                let path = self.base_dir.join(path);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
                parse_workload(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?
            }
            WorkloadKind::Synthetic => {
                let mut p = SyntheticParams::new(w.tasks, 0, w.output_size);
                p.compute = SimTime::from_secs_f64(w.compute_s);
                p.output_size_max = w.output_size_max;
                p.shared_input = w.shared_input.clone().map(|n| (n, w.shared_input_size));
                p.seed = self.mode.seed;
                generate_synthetic(&p)
            }
            WorkloadKind::Dock => {
                if w.tasks == 0 {
                    return Err(ConfigError::Invalid("dock workload needs tasks >= 1".into()));
                }
                let layout = match self.mode.kind {
                    Mode::GfsDirect => DockLayout::Gfs,
                    Mode::Cio => DockLayout::Cio {
                        shards: if w.dock_shards == 0 { topology.ifs_servers().len() as u32 } else { w.dock_shards },
                    },
                };
                dock_like_workflow(w.tasks, &DockParams { layout, ..Default::default() })
            }
        };
        workload.validate().map_err(|errs| {
            ConfigError::Invalid(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })?;
        for t in &workload.tasks {
            if let Some(p) = t.pin {
                if !topology.executors().contains(&p) {
                    return Err(ConfigError::Invalid(format!("task {} pinned to non-executor node {p}", t.id)));
                }
            }
        }
        Ok(workload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg = ScenarioConfig::from_toml(
            r#"
[topology]
nodes = 128
gfs_mbps = 1000.0
[mode]
kind = "gfs-direct"
dispatch_rate = 0.0
[collector]
max_delay_s = 5.0
[workload]
kind = "synthetic"
tasks = 10
"#,
        )
        .unwrap();
        assert_eq!(cfg.mode.kind, Mode::GfsDirect);
        assert_eq!(cfg.topology.profile().unwrap().gfs_mbps, 1000.0);
        assert_eq!(cfg.collector.max_delay_s, 5.0);
        assert_eq!(cfg.collector.max_data, CollectorPolicy::default().max_data);
        cfg.validate().unwrap();
        let again = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_contradictions() {
        assert!(matches!(ScenarioConfig::from_toml("[mode]\nkind = \"x\""), Err(ConfigError::Syntax(_))));
        assert!(matches!(ScenarioConfig::from_toml("[bogus]\n"), Err(ConfigError::Syntax(_))));
        let cfg = ScenarioConfig::from_toml("[topology]\nifs_per_pset = 0\n").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let cfg = ScenarioConfig::from_toml("[topology]\nprofile = \"nope\"\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
