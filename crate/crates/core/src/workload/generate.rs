//! Workload generators.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OutputSpec, TaskId, TaskSpec, Workload};
use crate::cluster::{NodeId, Topology, KB, MB};
use crate::simnet::SimTime;

/// Deterministic pseudo-random bytes for object `name`.
pub fn content_for(seed: u64, name: &str, size: u64) -> Vec<u8> {
    // FNV-1a of the name, mixed with the run seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h ^ seed.rotate_left(17));
    let mut buf = vec![0u8; size as usize];
    rng.fill_bytes(&mut buf);
    buf
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub n_tasks: u32,
    pub compute: SimTime,
    pub output_size: u64,
    /// When set, each output size is drawn uniformly from
    /// `[output_size, output_size_max]`.
    pub output_size_max: Option<u64>,
    /// A manifest object read by every task.
    pub shared_input: Option<(String, u64)>,
    pub seed: u64,
}

impl SyntheticParams {
    pub fn new(n_tasks: u32, compute_secs: u64, output_size: u64) -> Self {
        SyntheticParams {
            n_tasks,
            compute: SimTime::from_secs(compute_secs),
            output_size,
            output_size_max: None,
            shared_input: None,
            seed: 0,
        }
    }
}

/// Independent tasks, one output each.
pub fn generate_synthetic(p: &SyntheticParams) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut w = Workload::default();
    if let Some((name, size)) = &p.shared_input {
        w.manifest.insert(name.clone(), *size);
    }
    w.tasks = (0..p.n_tasks)
        .map(|id| {
            let size = match p.output_size_max {
                Some(max) if max > p.output_size => rng.gen_range(p.output_size..=max),
                _ => p.output_size,
            };
            TaskSpec {
                inputs: p.shared_input.iter().map(|(n, _)| n.clone()).collect(),
                outputs: vec![OutputSpec::new(format!("syn/t{id:07}.out"), size)],
                ..TaskSpec::new(id, p.compute)
            }
        })
        .collect();
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DockLayout {
    /// Stage 2 and 3 are single tasks reading from GFS.
    Gfs,
    /// Stage 2 is split into shards, one per IFS group; stage 1 outputs
    /// are already archived by the collectors, so stage 3 packs only the
    /// stage-2 results.
    Cio { shards: u32 },
}

/// Docking workflow shape. The stage-2 and stage-3 cost constants are
/// calibration values, not measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct DockParams {
    pub stage1_compute_s: f64,
    pub stage1_output: u64,
    /// Shared receptor file read by every stage-1 task; 0 disables it.
    pub receptor_size: u64,
    pub stage2_overhead_s: f64,
    pub stage2_s_per_mb: f64,
    /// Summary output size as a fraction of bytes scanned.
    pub summary_fraction: f64,
    pub stage3_overhead_s: f64,
    pub stage3_s_per_mb: f64,
    pub layout: DockLayout,
}

impl Default for DockParams {
    fn default() -> Self {
        DockParams {
            stage1_compute_s: 550.0,
            stage1_output: 10 * KB,
            receptor_size: MB,
            stage2_overhead_s: 54.0,
            stage2_s_per_mb: 4.17,
            summary_fraction: 0.01,
            stage3_overhead_s: 26.9,
            stage3_s_per_mb: 0.085,
            layout: DockLayout::Gfs,
        }
    }
}

const RECEPTOR: &str = "dock/receptor.pdb";

/// Three-stage docking workflow: dock, summarize/sort/select, archive.
pub fn dock_like_workflow(n_stage1: u32, p: &DockParams) -> Workload {
    assert!(n_stage1 >= 1, "stage 1 needs at least one task");
    let mut w = Workload { stage_barrier: true, ..Default::default() };
    if p.receptor_size > 0 {
        w.manifest.insert(RECEPTOR.to_string(), p.receptor_size);
    }
    let s1_name = |j: u32| format!("dock/s1/{j:06}.out");
    for j in 0..n_stage1 {
        w.tasks.push(TaskSpec {
            inputs: if p.receptor_size > 0 { vec![RECEPTOR.to_string()] } else { Vec::new() },
            outputs: vec![OutputSpec::new(s1_name(j), p.stage1_output)],
            ..TaskSpec::new(j, SimTime::from_secs_f64(p.stage1_compute_s))
        });
    }

    let shards = match p.layout {
        DockLayout::Gfs => 1,
        DockLayout::Cio { shards } => shards.clamp(1, n_stage1),
    };
    let mut next: TaskId = n_stage1;
    let mut summaries = Vec::new();
    for i in 0..shards {
        let inputs: Vec<String> = (i..n_stage1).step_by(shards as usize).map(s1_name).collect();
        let scanned = inputs.len() as u64 * p.stage1_output;
        let out = OutputSpec::new(
            format!("dock/s2/summary-{i:04}"),
            ((scanned as f64 * p.summary_fraction) as u64).max(1),
        );
        let secs = p.stage2_overhead_s + p.stage2_s_per_mb * scanned as f64 / MB as f64;
        summaries.push(out.clone());
        w.tasks.push(TaskSpec {
            inputs,
            outputs: vec![out],
            stage: 2,
            ..TaskSpec::new(next, SimTime::from_secs_f64(secs))
        });
        next += 1;
    }

    let mut inputs: Vec<String> = summaries.iter().map(|o| o.name.clone()).collect();
    let mut bytes: u64 = summaries.iter().map(|o| o.size).sum();
    if p.layout == DockLayout::Gfs {
        inputs.extend((0..n_stage1).map(s1_name));
        bytes += n_stage1 as u64 * p.stage1_output;
    }
    let secs = p.stage3_overhead_s + p.stage3_s_per_mb * bytes as f64 / MB as f64;
    w.tasks.push(TaskSpec {
        inputs,
        outputs: vec![OutputSpec::new("dock/results.cioa", bytes)],
        stage: 3,
        ..TaskSpec::new(next, SimTime::from_secs_f64(secs))
    });
    w
}

/// Task shape for [`run_on_all`]. `{node}` in any name is replaced by the
/// node index of each instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTemplate {
    pub inputs: Vec<String>,
    pub outputs: Vec<OutputSpec>,
    pub compute: SimTime,
    pub stage: u32,
}

/// One instance of `template` pinned to every executor, ids from `first_id`.
pub fn run_on_all(template: &TaskTemplate, topology: &Topology, first_id: TaskId) -> Vec<TaskSpec> {
    let fill = |s: &str, n: NodeId| s.replace("{node}", &n.0.to_string());
    topology
        .executors()
        .iter()
        .enumerate()
        .map(|(k, &node)| TaskSpec {
            id: first_id + k as TaskId,
            inputs: template.inputs.iter().map(|i| fill(i, node)).collect(),
            outputs: template.outputs.iter().map(|o| OutputSpec::new(fill(&o.name, node), o.size)).collect(),
            compute: template.compute,
            stage: template.stage,
            pin: Some(node),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{build_topology, TopologyConfig};
    use crate::workload::write_workload;

    #[test]
    fn synthetic_shape() {
        let w = generate_synthetic(&SyntheticParams::new(256, 4, MB));
        assert_eq!(w.tasks.len(), 256);
        assert!(w.tasks.iter().all(|t| t.compute == SimTime::from_secs(4) && t.outputs[0].size == MB));
        assert!(w.validate().is_ok());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let mut p = SyntheticParams::new(50, 32, KB);
        p.output_size_max = Some(MB);
        p.seed = 9;
        let a = write_workload(&generate_synthetic(&p));
        assert_eq!(a, write_workload(&generate_synthetic(&p)));
        p.seed = 10;
        assert_ne!(a, write_workload(&generate_synthetic(&p)));
    }

    #[test]
    fn dock_shape() {
        let w = dock_like_workflow(15351, &DockParams::default());
        assert!(w.validate().is_ok());
        let s1: Vec<_> = w.tasks.iter().filter(|t| t.stage == 1).collect();
        assert_eq!(s1.len(), 15351);
        assert_eq!(s1.iter().map(|t| t.output_bytes()).sum::<u64>(), 15351 * 10 * KB);
        let s2 = w.tasks.iter().find(|t| t.stage == 2).unwrap();
        assert!((s2.compute.as_secs_f64() - 694.1).abs() < 0.5);

        let cio = dock_like_workflow(15351, &DockParams { layout: DockLayout::Cio { shards: 128 }, ..Default::default() });
        let shards: Vec<_> = cio.tasks.iter().filter(|t| t.stage == 2).collect();
        assert_eq!(shards.len(), 128);
        assert!((shards[0].compute.as_secs_f64() - 59.0).abs() < 0.5);
    }

    #[test]
    fn run_on_all_pins() {
        let topo = build_topology(&TopologyConfig::new(65, 65, 1)).unwrap();
        let t = TaskTemplate {
            inputs: vec!["prev/{node}.out".into()],
            outputs: vec![OutputSpec::new("re/{node}.out", 5)],
            compute: SimTime::from_secs(1),
            stage: 2,
        };
        let tasks = run_on_all(&t, &topo, 100);
        assert_eq!(tasks.len(), 64);
        for task in &tasks {
            let n = task.pin.unwrap();
            assert_eq!(task.inputs, vec![format!("prev/{}.out", n.0)]);
        }
    }

    #[test]
    fn content_is_deterministic() {
        assert_eq!(content_for(1, "a", 100), content_for(1, "a", 100));
        assert_ne!(content_for(1, "a", 100), content_for(1, "b", 100));
        assert_ne!(content_for(1, "a", 100), content_for(2, "a", 100));
    }
}
