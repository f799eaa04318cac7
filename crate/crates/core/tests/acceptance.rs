//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single PASS/FAIL line with its runtime. The tests share one lock so the
//! wall-clock budgets are measured without contention from each other.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use cio_core::archive::{append_to_existing, create_archive, open_archive, HEADER_LEN};
use cio_core::cluster::{CalibrationProfile, NodeId, Topology, TopologyConfig, KB, MB};
use cio_core::collect::{should_flush, CollectorPolicy, CollectorState, FlushReason};
use cio_core::distribute::{
    doubling_rounds, execute_plan, spanning_tree_schedule, Access, AccessClass, Method, Placement, PlacementPlan, Target,
};
use cio_core::harness::experiments::{
    audit_durability, distribution_experiment, dock_experiment, efficiency_sweep, fingerprint, striping_experiment,
    sweep_point, SweepParams, SweepPoint, DOCK_STAGE1_TASKS,
};
use cio_core::harness::{emit_csv, emulate_scenario, run_with, Mode, RunSettings, ScenarioConfig};
use cio_core::simnet::{Network, SimTime};
use cio_core::store::{ClusterStores, Content, Tier};
use cio_core::workload::{content_for, generate_synthetic, DockParams, SyntheticParams};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the criterion line and fails the test on any problem.
fn report(id: u32, name: &str, started: Instant, budget: Duration, problems: Vec<String>, summary: String) {
    let took = started.elapsed();
    let mut problems = problems;
    if took > budget {
        problems.push(format!("runtime {:.1}s over budget {:.0}s", took.as_secs_f64(), budget.as_secs_f64()));
    }
    let verdict = if problems.is_empty() { "PASS" } else { "FAIL" };
    // Straight to the process stdout so the line shows without --nocapture.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id:>2} {verdict} {name}: {summary} [{:.2}s]", took.as_secs_f64());
    for p in &problems {
        let _ = writeln!(out, "    {p}");
    }
    assert!(problems.is_empty(), "criterion {id} failed: {problems:?}");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn c01_collector_truth_table() {
    let _g = serial();
    let t0 = Instant::now();
    let policy = CollectorPolicy::default();
    let d = policy.max_delay().as_micros();
    let (b, f) = (policy.max_data, policy.min_free_space);
    let mut problems = Vec::new();
    let mut cases = 0;
    for elapsed in [0, d, d + 1] {
        for buffered in [0, b, b + 1] {
            for free in [f - 1, f, f + 1] {
                cases += 1;
                let mut st = CollectorState::new(NodeId(0), SimTime(1_000));
                st.buffered_bytes = buffered;
                let got = should_flush(&st, SimTime(1_000 + elapsed), free, &policy);
                let want = elapsed > d || buffered > b || free < f;
                if got.flush != want || (got.reason == FlushReason::None) == want {
                    problems.push(format!("elapsed={elapsed} buffered={buffered} free={free}: got {got:?}"));
                }
            }
        }
    }
    let ok = cases - problems.len();
    report(1, "collector truth table", t0, secs(1), problems, format!("{ok}/{cases} cases"));
}

fn random_path(rng: &mut ChaCha8Rng, i: usize) -> String {
    const POOL: &[char] = &['a', 'z', 'Q', '0', '_', '-', '.', ' ', 'é', 'ß', 'Ж', 'λ', '中', '文', '🦀', '∑'];
    let segments = rng.gen_range(1..4);
    let mut parts = Vec::new();
    for _ in 0..segments {
        let len = rng.gen_range(1..12);
        parts.push((0..len).map(|_| POOL[rng.gen_range(0..POOL.len())]).collect::<String>());
    }
    // Suffix keeps paths unique.
    format!("{}#{i}", parts.join("/"))
}

/// Sizes spread log-uniformly over 0..=4 MB, with some exact zeros.
fn random_size(rng: &mut ChaCha8Rng) -> u64 {
    if rng.gen_bool(0.05) {
        return 0;
    }
    let exp: f64 = rng.gen_range(0.0..(4.0 * MB as f64).log2());
    (2f64.powf(exp) as u64).min(4 * MB)
}

#[test]
fn c02_archive_round_trip() {
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let members: Vec<(String, u64)> = (0..1000).map(|i| (random_path(&mut rng, i), random_size(&mut rng))).collect();
    let total: u64 = members.iter().map(|m| m.1).sum();
    let mut problems = Vec::new();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("round.cioa");
    let (first, rest) = members.split_at(600);
    {
        let mut w = create_archive(std::fs::File::create(&path).unwrap()).unwrap();
        for (p, size) in first {
            w.append_member(p, &content_for(2, p, *size)).unwrap();
        }
        w.finalize().unwrap();
    }
    let before = std::fs::read(&path).unwrap();
    let old_dir_offset = open_archive(before.as_slice()).unwrap().footer().directory_offset as usize;
    {
        let f = std::fs::OpenOptions::new().read(true).write(true).open(&path).unwrap();
        let mut w = append_to_existing(f).unwrap();
        for (p, size) in rest {
            w.append_member(p, &content_for(2, p, *size)).unwrap();
        }
        w.finalize().unwrap();
    }
    let bytes = std::fs::read(&path).unwrap();
    if bytes[..old_dir_offset] != before[..old_dir_offset] {
        problems.push("append changed bytes before the old directory".into());
    }

    let reader = open_archive(std::fs::File::open(&path).unwrap()).unwrap();
    if reader.entries().len() != members.len() {
        problems.push(format!("{} entries, expected {}", reader.entries().len(), members.len()));
    }
    // Full-scan oracle: members sit back to back from the header on.
    let mut offset = HEADER_LEN;
    for ((p, size), e) in members.iter().zip(reader.entries()) {
        let scanned = &bytes[offset as usize..(offset + size) as usize];
        let extracted = reader.extract_member(p).unwrap();
        if e.path != *p || e.offset != offset || e.size != *size {
            problems.push(format!("directory entry for {p:?} is {e:?}, scan says offset {offset}"));
        } else if extracted != content_for(2, p, *size) || extracted != scanned {
            problems.push(format!("member {p:?} differs"));
        }
        offset += size;
    }
    if problems.len() > 5 {
        problems.truncate(5);
    }

    // Flip one byte inside each of a few non-empty members in turn.
    let non_empty: Vec<usize> = (0..members.len()).filter(|&i| members[i].1 > 0).collect();
    for k in 0..5 {
        let victim = non_empty[rng.gen_range(0..non_empty.len())];
        let e = reader.entries()[victim].clone();
        let mut bad = bytes.clone();
        let at = (e.offset + rng.gen_range(0..e.size)) as usize;
        bad[at] ^= 1 << (k % 8);
        let flagged: Vec<String> =
            open_archive(bad.as_slice()).unwrap().verify().unwrap().into_iter().filter(|m| !m.ok).map(|m| m.path).collect();
        if flagged != [e.path.clone()] {
            problems.push(format!("corrupting {:?} flagged {flagged:?}", e.path));
        }
    }

    let summary = format!("1000 members, {:.1} MB, appended 400 onto 600", total as f64 / MB as f64);
    report(2, "archive round trip", t0, secs(30), problems, summary);
}

fn broadcast_replicas(n: usize) -> Result<(u32, u32, usize), String> {
    let topo = Topology::build(&TopologyConfig::new(n as u32 + 1, 64, 0)).map_err(|e| e.to_string())?;
    let nodes = topo.executors().to_vec();
    let object = "bcast/object";
    let size = 4 * KB;
    let stores = ClusterStores::in_memory(&topo, false);
    stores.gfs.put(object, Content::Bytes(content_for(3, object, size))).map_err(|e| e.to_string())?;
    let plan = PlacementPlan {
        placements: vec![Placement {
            object: object.into(),
            size,
            access: Access { class: AccessClass::ReadMany, readers: nodes.len() as u32 },
            tier: Tier::Lfs,
            target: Target::Nodes(nodes.clone()),
            method: Method::Broadcast,
        }],
    };
    let mut net = Network::for_topology(&topo);
    let r = execute_plan(&plan, &topo, &mut net, &stores, &BTreeMap::new()).map_err(|e| e.to_string())?;
    let want = stores.gfs.get(object).unwrap().checksum();
    let identical = nodes.iter().filter(|&&n| stores.lfs(n).get(&format!("in/{object}")).ok().and_then(|c| c.checksum()) == want).count();
    Ok((r.gfs_reads, r.copies, identical))
}

#[test]
fn c03_spanning_tree_structure() {
    let _g = serial();
    let t0 = Instant::now();
    let mut problems = Vec::new();
    for n in 1..=4096usize {
        let dests: Vec<NodeId> = (1..=n as u32).map(NodeId).collect();
        let s = spanning_tree_schedule(NodeId(0), &dests).unwrap();
        let want = ((n + 1) as f64).log2().ceil() as usize;
        if s.round_count() != want || doubling_rounds(n) != want || s.transfers() != n {
            problems.push(format!("n={n}: {} rounds, {} transfers", s.round_count(), s.transfers()));
            continue;
        }
        let mut holders = BTreeSet::from([NodeId(0)]);
        for round in &s.rounds {
            let senders: BTreeSet<NodeId> = round.iter().map(|t| t.0).collect();
            if senders.len() != round.len() || round.iter().any(|(f, t)| !holders.contains(f) || holders.contains(t)) {
                problems.push(format!("n={n}: bad round {round:?}"));
                break;
            }
            holders.extend(round.iter().map(|t| t.1));
        }
        if holders.len() != n + 1 {
            problems.push(format!("n={n}: {} holders at the end", holders.len()));
        }
    }
    // Executed over the network with real bytes for a spread of sizes.
    for n in [1usize, 2, 3, 7, 64, 255, 1000, 4096] {
        match broadcast_replicas(n) {
            Ok((reads, copies, identical)) => {
                if reads != 1 || copies as usize != n || identical != n + 1 {
                    problems.push(format!("n={n}: {reads} GFS reads, {copies} copies, {identical}/{} replicas", n + 1));
                }
            }
            Err(e) => problems.push(format!("n={n}: {e}")),
        }
    }
    report(3, "spanning-tree structure", t0, secs(10), problems, "schedules for 1..=4096 destinations".into());
}

#[test]
fn c04_distribution_throughput() {
    let _g = serial();
    let t0 = Instant::now();
    let c = distribution_experiment(4096, 100 * MB, &CalibrationProfile::bgp_2008()).unwrap();
    let mut problems = Vec::new();
    if (c.naive_mbps() - 2400.0).abs() > 240.0 {
        problems.push(format!("naive {:.0} MB/s outside 2400 +- 10%", c.naive_mbps()));
    }
    if c.ratio() < 4.0 {
        problems.push(format!("tree/naive ratio {:.2} below 4", c.ratio()));
    }
    let summary = format!("naive {:.0} MB/s, tree {:.0} MB/s, ratio {:.1}x", c.naive_mbps(), c.tree_mbps(), c.ratio());
    report(4, "distribution throughput", t0, secs(60), problems, summary);
}

#[test]
fn c05_striping_trend() {
    let _g = serial();
    let t0 = Instant::now();
    let widths = [1, 2, 4, 8, 16, 32];
    let points = striping_experiment(&widths, &CalibrationProfile::bgp_2008()).unwrap();
    let rates: Vec<f64> = points.iter().map(|p| p.mbps()).collect();
    let mut problems = Vec::new();
    if rates.windows(2).any(|w| w[1] < w[0]) {
        problems.push("throughput decreases with width".into());
    }
    if !(130.0..=190.0).contains(&rates[0]) {
        problems.push(format!("width 1 at {:.0} MB/s", rates[0]));
    }
    if !(650.0..=1000.0).contains(&rates[5]) {
        problems.push(format!("width 32 at {:.0} MB/s", rates[5]));
    }
    let summary = widths.iter().zip(&rates).map(|(w, r)| format!("{w}:{r:.0}")).collect::<Vec<_>>().join(" ");
    report(5, "striping trend", t0, secs(60), problems, format!("MB/s by width {summary}"));
}

fn points_of(points: &[SweepPoint], mode: Mode, size: u64) -> Vec<&SweepPoint> {
    points.iter().filter(|p| p.mode == mode && p.output_size == size).collect()
}

#[test]
fn c06_efficiency_curves() {
    let _g = serial();
    let t0 = Instant::now();
    let params = SweepParams::default();
    let points = efficiency_sweep(&params).unwrap();
    let mut problems = Vec::new();
    let mut lines = Vec::new();
    for &size in &params.sizes {
        let cio = points_of(&points, Mode::Cio, size);
        let gfs = points_of(&points, Mode::GfsDirect, size);
        for (c, g) in cio.iter().zip(&gfs) {
            let floor = if size <= 128 * KB { 0.90 } else { 0.80 };
            if c.efficiency < floor {
                problems.push(format!("CIO {size} B at {}: {:.3} < {floor}", c.procs, c.efficiency));
            }
            if c.efficiency <= g.efficiency {
                problems.push(format!("{size} B at {}: CIO {:.3} <= GFS {:.3}", c.procs, c.efficiency, g.efficiency));
            }
            if g.procs >= 8192 && g.efficiency > 0.50 {
                problems.push(format!("GFS {size} B at {}: {:.3} > 0.50", g.procs, g.efficiency));
            }
        }
        for w in gfs.windows(2) {
            if w[1].efficiency > w[0].efficiency {
                problems.push(format!(
                    "GFS {size} B rises {:.4} -> {:.4} from {} to {}",
                    w[0].efficiency, w[1].efficiency, w[0].procs, w[1].procs
                ));
            }
        }
        let min_cio = cio.iter().map(|p| p.efficiency).fold(f64::MAX, f64::min);
        lines.push(format!(
            "{}KB cio>={min_cio:.2} gfs {:.2}->{:.2}",
            size / KB,
            gfs[0].efficiency,
            gfs[gfs.len() - 1].efficiency
        ));
    }
    report(6, "efficiency curves", t0, secs(180), problems, lines.join("; "));
}

#[test]
fn c07_write_throughput() {
    let _g = serial();
    let t0 = Instant::now();
    // Enough waves that the final drain of staged outputs is a small part
    // of the run even at 32K processors.
    let params = SweepParams { sizes: vec![MB], waves: 32, max_tasks: 262_144, ..Default::default() };
    let mut problems = Vec::new();
    let mut peak = BTreeMap::new();
    let mut worst_gap: f64 = 0.0;
    for mode in [Mode::GfsDirect, Mode::Cio] {
        for &procs in &params.procs {
            let p = sweep_point(mode, procs, MB, &params).unwrap();
            let e: &mut f64 = peak.entry(mode.as_str()).or_insert(0.0);
            *e = e.max(p.aggregate_mbps);
            if mode == Mode::Cio {
                let gap = 1.0 - p.aggregate_mbps / p.ideal_mbps();
                worst_gap = worst_gap.max(gap);
                if gap > 0.10 {
                    problems.push(format!(
                        "CIO at {procs}: {:.0} MB/s vs ideal {:.0} MB/s",
                        p.aggregate_mbps,
                        p.ideal_mbps()
                    ));
                }
            }
        }
    }
    let (g, c) = (peak["gfs-direct"], peak["cio"]);
    if !(200.0..=300.0).contains(&g) {
        problems.push(format!("GFS-direct peak {g:.0} MB/s"));
    }
    if !(1700.0..=2500.0).contains(&c) {
        problems.push(format!("CIO peak {c:.0} MB/s"));
    }
    let summary = format!("peaks GFS {g:.0} MB/s, CIO {c:.0} MB/s; CIO at most {:.1}% under ideal", worst_gap * 100.0);
    report(7, "write throughput", t0, secs(180), problems, summary);
}

#[test]
fn c08_dock_workflow() {
    let _g = serial();
    let t0 = Instant::now();
    let c = dock_experiment(8192, DOCK_STAGE1_TASKS, &DockParams::default()).unwrap();
    let mut problems = Vec::new();
    if c.cio.total_s() >= c.gfs.total_s() {
        problems.push(format!("CIO total {:.0}s not below GFS {:.0}s", c.cio.total_s(), c.gfs.total_s()));
    }
    if c.speedup(2) < 8.0 {
        problems.push(format!("stage 2 speedup {:.2}", c.speedup(2)));
    }
    if !(1.0..=1.2).contains(&c.speedup(1)) {
        problems.push(format!("stage 1 speedup {:.3}", c.speedup(1)));
    }
    let summary = format!(
        "stage2 {:.0}s -> {:.0}s ({:.1}x), stage1 {:.2}x, total {:.0}s -> {:.0}s",
        c.gfs.stage_s(2),
        c.cio.stage_s(2),
        c.speedup(2),
        c.speedup(1),
        c.gfs.total_s(),
        c.cio.total_s()
    );
    report(8, "DOCK workflow", t0, secs(120), problems, summary);
}

#[derive(Debug, Clone)]
struct RandomRun {
    nodes: u32,
    pset: u32,
    tasks: u32,
    min_size: u64,
    max_size: u64,
    max_data: u64,
    max_delay_s: f64,
    compute_ms: u64,
    seed: u64,
}

fn random_run() -> impl Strategy<Value = RandomRun> {
    (
        (1u32..=6, prop::sample::select(vec![4u32, 8, 16])),
        1u32..300,
        (0u64..200_000, 0u64..2 * MB),
        (64 * KB..8 * MB, 0.5f64..20.0),
        (1u64..5_000, any::<u64>()),
    )
        .prop_map(|((psets, pset), tasks, (lo, span), (max_data, max_delay_s), (compute_ms, seed))| RandomRun {
            nodes: psets * pset,
            pset,
            tasks,
            min_size: lo,
            max_size: lo + span,
            max_data,
            max_delay_s,
            compute_ms,
            seed,
        })
}

fn durable(r: &RandomRun) -> Result<(), String> {
    let topo = Topology::build(&TopologyConfig::new(r.nodes, r.pset, 1)).map_err(|e| e.to_string())?;
    let mut p = SyntheticParams::new(r.tasks, 0, r.min_size);
    p.compute = SimTime::from_millis(r.compute_ms);
    p.output_size_max = Some(r.max_size);
    p.seed = r.seed;
    let w = generate_synthetic(&p);
    let stores = ClusterStores::in_memory(&topo, false);
    let settings = RunSettings {
        mode: Mode::Cio,
        seed: r.seed,
        materialize: true,
        collector: CollectorPolicy { max_data: r.max_data, max_delay_s: r.max_delay_s, ..Default::default() },
        ..Default::default()
    };
    run_with(&topo, &w, &stores, &settings).map_err(|e| e.to_string())?;
    let a = audit_durability(&w, stores.gfs.as_ref(), r.seed).map_err(|e| e.to_string())?;
    if a.ok() {
        Ok(())
    } else {
        Err(format!(
            "{}/{} exactly once; missing {:?} duplicated {:?} corrupt {:?}",
            a.exactly_once,
            a.outputs,
            &a.missing[..a.missing.len().min(3)],
            &a.duplicated[..a.duplicated.len().min(3)],
            &a.corrupt[..a.corrupt.len().min(3)]
        ))
    }
}

#[test]
fn c09_durability_exactly_once() {
    let _g = serial();
    let t0 = Instant::now();
    let mut runner = TestRunner::new(Config { cases: 20, failure_persistence: None, ..Config::default() });
    let result = runner.run(&random_run(), |r| {
        durable(&r).map_err(|e| TestCaseError::fail(format!("{r:?}: {e}")))?;
        Ok(())
    });
    let problems = match result {
        Ok(()) => Vec::new(),
        Err(e) => vec![e.to_string()],
    };
    report(9, "durability and exactly-once", t0, secs(60), problems, "20 random materialized CIO runs".into());
}

fn csv_files(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn c10_determinism_and_scale() {
    let _g = serial();
    let t0 = Instant::now();
    let mut problems = Vec::new();
    let cfg = ScenarioConfig::from_toml(
        r#"
[topology]
nodes = 256
pset_size = 64
[mode]
seed = 11
[workload]
tasks = 600
compute_s = 2.5
output_size = 1000
output_size_max = 3000000
shared_input = "db/shared"
shared_input_size = 300000000
[output]
flow_log = true
"#,
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for i in 0..2 {
        let report = cio_core::harness::run_scenario(&cfg).unwrap();
        let dir = tmp.path().join(format!("run{i}"));
        emit_csv(&report, &dir).unwrap();
        runs.push(csv_files(&dir));
    }
    if runs[0] != runs[1] {
        let differing: Vec<&String> = runs[0].keys().filter(|k| runs[0].get(*k) != runs[1].get(*k)).collect();
        problems.push(format!("CSV outputs differ: {differing:?}"));
    }
    let files = runs[0].len();

    let t_scale = Instant::now();
    let params = SweepParams { compute_s: 32, waves: 1, ..Default::default() };
    let big = sweep_point(Mode::Cio, 98_304, KB, &params).unwrap();
    let scale_s = t_scale.elapsed().as_secs_f64();
    if scale_s > 300.0 {
        problems.push(format!("96K-processor run took {scale_s:.0}s"));
    }
    let summary = format!(
        "{files} CSV files identical; 96K procs x 32 s tasks simulated in {scale_s:.1}s (efficiency {:.3})",
        big.efficiency
    );
    report(10, "determinism and scale", t0, secs(330), problems, summary);
}

#[test]
fn c11_emulation_matches_simulation() {
    let _g = serial();
    let t0 = Instant::now();
    let cfg = ScenarioConfig::from_toml(
        r#"
[topology]
nodes = 8
pset_size = 8
[mode]
seed = 5
dispatch_rate = 0.0
[collector]
max_delay_s = 3.0
max_data = 2000000
[workload]
tasks = 200
compute_s = 1.0
output_size = 1000
output_size_max = 200000
shared_input = "db/shared"
shared_input_size = 500000
[output]
workers = 4
"#,
    )
    .unwrap();
    let mut problems = Vec::new();
    let tmp = tempfile::tempdir().unwrap();
    let (emulated, disk) = emulate_scenario(&cfg, tmp.path()).unwrap();

    let topo = cfg.build_topology().unwrap();
    let w = cfg.load_workload(&topo).unwrap();
    let mem = ClusterStores::in_memory(&topo, false);
    let settings = RunSettings { materialize: true, ..RunSettings::from_config(&cfg) };
    let simulated = run_with(&topo, &w, &mem, &settings).unwrap();

    let a = fingerprint(&emulated, disk.gfs.as_ref()).unwrap();
    let b = fingerprint(&simulated, mem.gfs.as_ref()).unwrap();
    if a.plan != b.plan {
        problems.push("placement plans differ".into());
    }
    if a.flushes != b.flushes {
        problems.push("flush member sets differ".into());
    }
    if a.archives != b.archives {
        problems.push("archive contents differ".into());
    }
    let members: usize = a.flushes.values().map(Vec::len).sum();
    if members != 200 {
        problems.push(format!("{members} archived members, expected 200"));
    }
    let summary = format!("{} archives, {members} members, {} plan lines agree", a.archives.len(), a.plan.len());
    report(11, "emulation matches simulation", t0, secs(120), problems, summary);
}
