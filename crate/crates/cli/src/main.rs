//! `cio`: simulate or emulate a scenario, work with archives, re-derive
//! run metrics.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cio_core::archive::{append_to_existing, open_archive, pack_dir};
use cio_core::harness::config::WorkloadKind;
use cio_core::harness::report::read_metrics;
use cio_core::harness::{emit_csv, emit_summary, emulate_scenario, recompute, run_scenario, Mode, RunError, ScenarioConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cio", version, about = "Collective IO simulator, emulator and archive tool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario in the flow-level simulator.
    Simulate(RunArgs),
    /// Run a scenario against directory-backed stores.
    Emulate {
        #[command(flatten)]
        run: RunArgs,
        /// Root for the node, IFS and GFS store directories
        /// (default: <out>/stores).
        #[arg(long)]
        stores: Option<PathBuf>,
    },
    /// Create, inspect and extend archive files.
    #[command(subcommand)]
    Archive(ArchiveCommand),
    /// Re-derive metrics from a run directory's CSVs and compare them with
    /// the recorded ones.
    Report { run_dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory (overrides [output] dir).
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dispatch_rate: Option<f64>,
    /// Load the workload from a workload file.
    #[arg(long, group = "source")]
    workload: Option<PathBuf>,
    /// Use the synthetic generator.
    #[arg(long, group = "source")]
    synthetic: bool,
    /// Use the docking workflow generator.
    #[arg(long, group = "source")]
    dock: bool,
    /// Generator task count (stage-1 tasks for --dock).
    #[arg(long)]
    tasks: Option<u32>,
    #[arg(long)]
    compute_s: Option<f64>,
    #[arg(long)]
    output_size: Option<u64>,
}

#[derive(Subcommand)]
enum ArchiveCommand {
    /// Pack every file under a directory.
    Pack { dir: PathBuf, out: PathBuf },
    /// List members with offsets, sizes and checksums.
    List { file: PathBuf },
    /// Extract one member to a file, or to stdout.
    Extract {
        file: PathBuf,
        path: String,
        #[arg(short, long)]
        o: Option<PathBuf>,
    },
    /// Check every member's checksum.
    Verify { file: PathBuf },
    /// Append files (or directory trees) to an existing archive.
    Append {
        file: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("unknown mode {s:?} (cio or gfs-direct)"))
}

enum Failure {
    /// Fixable by changing the config or arguments.
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate(&args),
        Command::Emulate { run, stores } => emulate(&run, stores),
        Command::Archive(cmd) => archive(cmd).map_err(Failure::Runtime),
        Command::Report { run_dir } => report(&run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("cio: configuration error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("cio: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(&args.config).map_err(config_err)?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(m) = args.mode {
        cfg.mode.kind = m;
    }
    if let Some(s) = args.seed {
        cfg.mode.seed = s;
    }
    if let Some(r) = args.dispatch_rate {
        cfg.mode.dispatch_rate = r;
    }
    let w = &mut cfg.workload;
    if let Some(path) = &args.workload {
        w.kind = WorkloadKind::File;
        // Relative to the working directory, not the config file.
        w.path = Some(std::path::absolute(path).map_err(|e| config_err(anyhow::Error::from(e)))?);
    } else if args.synthetic {
        w.kind = WorkloadKind::Synthetic;
    } else if args.dock {
        w.kind = WorkloadKind::Dock;
    }
    if let Some(t) = args.tasks {
        w.tasks = t;
    }
    if let Some(c) = args.compute_s {
        w.compute_s = c;
    }
    if let Some(s) = args.output_size {
        w.output_size = s;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn classify(e: RunError) -> Failure {
    match e {
        RunError::Config(c) => config_err(c),
        other => Failure::Runtime(other.into()),
    }
}

fn finish(report: &cio_core::RunReport, out: &Path) -> Result<(), Failure> {
    emit_csv(report, out).with_context(|| format!("writing reports to {}", out.display()))?;
    let summary = emit_summary(report);
    std::fs::write(out.join("summary.txt"), &summary).context("writing summary.txt")?;
    print!("{summary}");
    println!("reports           {}", out.display());
    Ok(())
}

fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let report = run_scenario(&cfg).map_err(classify)?;
    finish(&report, &cfg.output.dir)
}

fn emulate(args: &RunArgs, stores: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let root = stores.unwrap_or_else(|| cfg.output.dir.join("stores"));
    if root.exists() && root.read_dir().map(|mut d| d.next().is_some()).unwrap_or(true) {
        return Err(config_err(anyhow::anyhow!("store root {} is not empty", root.display())));
    }
    std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    let (report, _) = emulate_scenario(&cfg, &root).map_err(classify)?;
    finish(&report, &cfg.output.dir)?;
    println!("stores            {}", root.display());
    Ok(())
}

fn report(dir: &Path) -> Result<(), Failure> {
    if !dir.join("metrics.csv").is_file() {
        return Err(config_err(anyhow::anyhow!("{} has no metrics.csv", dir.display())));
    }
    let recorded = read_metrics(dir).context("reading metrics.csv")?;
    let derived = recompute(dir).context("re-deriving metrics")?;
    let (Some(recorded), Some(derived)) = (recorded, derived) else {
        println!("empty run: no tasks recorded");
        return Ok(());
    };
    println!("{:<20} {:>18} {:>18}", "metric", "recorded", "recomputed");
    let rec = recorded.rows();
    for ((name, a), (_, b)) in rec.iter().zip(derived.rows()) {
        println!("{name:<20} {a:>18} {b:>18}");
    }
    let bad = recorded.mismatches(&derived);
    if bad.is_empty() {
        println!("all metrics agree");
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!("recomputed metrics differ: {}", bad.join(", "))))
    }
}

fn archive(cmd: ArchiveCommand) -> Result<()> {
    match cmd {
        ArchiveCommand::Pack { dir, out } => {
            if !dir.is_dir() {
                bail!("{} is not a directory", dir.display());
            }
            let footer = pack_dir(&dir, &out).with_context(|| format!("packing {}", dir.display()))?;
            println!("{} members -> {}", footer.entry_count, out.display());
        }
        ArchiveCommand::List { file } => {
            let a = open(&file)?;
            let mut out = std::io::stdout().lock();
            let listed = writeln!(out, "{:>12} {:>12} {:>10}  path", "offset", "size", "crc32").and_then(|_| {
                a.entries()
                    .iter()
                    .try_for_each(|e| writeln!(out, "{:>12} {:>12} {:>10x}  {}", e.offset, e.size, e.crc32, e.path))
            });
            // A closed pipe (`| head`) is not an error.
            match listed {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
        ArchiveCommand::Extract { file, path, o } => {
            let bytes = open(&file)?.extract_member(&path)?;
            match o {
                Some(out) => std::fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?,
                None => std::io::stdout().write_all(&bytes)?,
            }
        }
        ArchiveCommand::Verify { file } => {
            let status = open(&file)?.verify()?;
            let bad: Vec<&str> = status.iter().filter(|m| !m.ok).map(|m| m.path.as_str()).collect();
            for p in &bad {
                println!("CORRUPT {p}");
            }
            println!("{} members, {} corrupt", status.len(), bad.len());
            if !bad.is_empty() {
                bail!("{} corrupt members in {}", bad.len(), file.display());
            }
        }
        ArchiveCommand::Append { file, inputs } => {
            let mut members = Vec::new();
            for input in &inputs {
                gather(input, &mut members)?;
            }
            let f = OpenOptions::new().read(true).write(true).open(&file).with_context(|| format!("opening {}", file.display()))?;
            let mut w = append_to_existing(f).with_context(|| format!("reading {}", file.display()))?;
            for (name, path) in &members {
                let mut src = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                w.append_reader(name, &mut src).with_context(|| format!("appending {name}"))?;
            }
            let footer = w.finalize()?;
            println!("appended {} members, {} total", members.len(), footer.entry_count);
        }
    }
    Ok(())
}

fn open(file: &Path) -> Result<cio_core::archive::ArchiveReader<File>> {
    let f = File::open(file).with_context(|| format!("opening {}", file.display()))?;
    open_archive(f).with_context(|| format!("reading {}", file.display()))
}

/// Member names for `archive append`: a file by its file name, a directory
/// by the paths of its files relative to it.
fn gather(input: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    if input.is_dir() {
        let mut stack = vec![input.to_path_buf()];
        let mut found = Vec::new();
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(input).expect("under input");
                    let name: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                    found.push((name.join("/"), path));
                }
            }
        }
        found.sort();
        out.extend(found);
    } else {
        let name = input.file_name().with_context(|| format!("{} has no file name", input.display()))?;
        out.push((name.to_string_lossy().into_owned(), input.to_path_buf()));
    }
    Ok(())
}
