//! Runs the scripted experiments and prints their tables.
//!
//! cargo run --release -p cio-core --example experiments -- [distribution|striping|sweep|throughput|dock|all]

use std::time::Instant;

use cio_core::cluster::{CalibrationProfile, MB};
use cio_core::harness::experiments::*;
use cio_core::workload::DockParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    let profile = CalibrationProfile::bgp_2008();
    let all = which == "all";
    if all || which == "distribution" {
        let t = Instant::now();
        let c = distribution_experiment(4096, 100 * MB, &profile)?;
        println!("distribution 4096 nodes, 100 MB");
        println!("  naive  {:>10.1} MB/s  ({:.1} s)", c.naive_mbps(), c.naive.elapsed_us as f64 / 1e6);
        println!("  tree   {:>10.1} MB/s  ({:.1} s)", c.tree_mbps(), c.tree.elapsed_us as f64 / 1e6);
        println!("  ratio  {:.2}  [{:.1?}]", c.ratio(), t.elapsed());
    }
    if all || which == "striping" {
        println!("striping width,MBps");
        for p in striping_experiment(&[1, 2, 4, 8, 16, 32], &profile)? {
            println!("  {:>2}  {:.1}", p.width, p.mbps());
        }
    }
    if all || which == "sweep" {
        let t = Instant::now();
        let pts = efficiency_sweep(&SweepParams::default())?;
        print!("{}", sweep_csv(&pts));
        println!("[{:.1?}]", t.elapsed());
    }
    if all || which == "throughput" {
        let t = Instant::now();
        let p = SweepParams { sizes: vec![MB], waves: 32, max_tasks: 262_144, ..Default::default() };
        let pts = efficiency_sweep(&p)?;
        println!("mode,procs,MBps,ideal_MBps");
        for x in &pts {
            println!("{},{},{:.1},{:.1}", x.mode, x.procs, x.aggregate_mbps, x.ideal_mbps());
        }
        println!("[{:.1?}]", t.elapsed());
    }
    if all || which == "dock" {
        let t = Instant::now();
        let d = dock_experiment(8192, DOCK_STAGE1_TASKS, &DockParams::default())?;
        for s in 1..=3 {
            println!("stage {s}: gfs {:.1} s  cio {:.1} s  speedup {:.2}", d.gfs.stage_s(s), d.cio.stage_s(s), d.speedup(s));
        }
        println!("total: gfs {:.1} s  cio {:.1} s  [{:.1?}]", d.gfs.total_s(), d.cio.total_s(), t.elapsed());
    }
    Ok(())
}
