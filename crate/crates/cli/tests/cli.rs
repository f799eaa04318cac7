use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cio")).args(args).output().expect("run cio")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"
[topology]
nodes = 16
pset_size = 8
[mode]
dispatch_rate = 0.0
[workload]
tasks = 40
compute_s = 1.0
output_size = 20000
"#;

#[test]
fn simulate_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let o = cio(&["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("efficiency"), "{stdout}");
    for f in ["tasks.csv", "flows.csv", "flushes.csv", "outputs.csv", "metrics.csv", "summary.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let r = cio(&["report", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("all metrics agree"));
}

#[test]
fn report_flags_tampered_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    assert_eq!(code(&cio(&["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])), 0);
    let outputs = out.join("outputs.csv");
    let text = std::fs::read_to_string(&outputs).unwrap();
    let header = text.lines().next().unwrap();
    std::fs::write(&outputs, format!("{header}\n")).unwrap();
    let r = cio(&["report", out.to_str().unwrap()]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("payload_bytes"));
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let o = cio(&[
        "simulate",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--mode",
        "gfs-direct",
        "--synthetic",
        "--tasks",
        "12",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("gfs-direct"));
    assert!(stdout.contains("gfs creates       12"), "{stdout}");
}

#[test]
fn workload_file_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let wl = scenarios().join("pipeline.workload");
    let out = tmp.path().join("run");
    let o = cio(&["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workload", wl.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tasks = std::fs::read_to_string(out.join("tasks.csv")).unwrap();
    assert_eq!(tasks.lines().count(), 1 + 9);
}

#[test]
fn emulate_writes_archives() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}\n[output]\nmaterialize = true\nworkers = 2\n"));
    let out = tmp.path().join("run");
    let o = cio(&["emulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut archives = Vec::new();
    let mut stack = vec![out.join("stores")];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "cioa") {
                archives.push(p);
            }
        }
    }
    assert!(!archives.is_empty());
    let mut members = 0;
    for a in &archives {
        let v = cio(&["archive", "verify", a.to_str().unwrap()]);
        assert_eq!(code(&v), 0);
        let line = String::from_utf8_lossy(&v.stdout).to_string();
        members += line.split_whitespace().next().unwrap().parse::<usize>().unwrap();
    }
    assert_eq!(members, 40);

    // A second emulation into the same store root is refused.
    let again = cio(&["emulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&again), 1);
}

#[test]
fn archive_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    std::fs::create_dir_all(src.join("nested")).unwrap();
    std::fs::write(src.join("a.bin"), [1u8, 2, 3]).unwrap();
    std::fs::write(src.join("nested/b.txt"), "hello").unwrap();
    let arch = tmp.path().join("x.cioa");
    let arch_s = arch.to_str().unwrap();
    assert_eq!(code(&cio(&["archive", "pack", src.to_str().unwrap(), arch_s])), 0);

    let extra = tmp.path().join("extra.txt");
    std::fs::write(&extra, "appended").unwrap();
    let prefix = std::fs::read(&arch).unwrap();
    assert_eq!(code(&cio(&["archive", "append", arch_s, extra.to_str().unwrap()])), 0);
    let after = std::fs::read(&arch).unwrap();
    // Member bytes before the old directory are untouched.
    assert_eq!(after[..8 + 3 + 5], prefix[..8 + 3 + 5]);

    let list = String::from_utf8_lossy(&cio(&["archive", "list", arch_s]).stdout).to_string();
    for m in ["a.bin", "nested/b.txt", "extra.txt"] {
        assert!(list.contains(m), "{list}");
    }
    let got = cio(&["archive", "extract", arch_s, "nested/b.txt"]);
    assert_eq!(got.stdout, b"hello");
    let dest = tmp.path().join("out.txt");
    assert_eq!(code(&cio(&["archive", "extract", arch_s, "extra.txt", "-o", dest.to_str().unwrap()])), 0);
    assert_eq!(std::fs::read(&dest).unwrap(), b"appended");
    assert_eq!(code(&cio(&["archive", "extract", arch_s, "missing"])), 2);

    // Corrupt the first member's bytes.
    let mut bad = after.clone();
    bad[9] ^= 0xff;
    std::fs::write(&arch, bad).unwrap();
    let v = cio(&["archive", "verify", arch_s]);
    assert_eq!(code(&v), 2);
    let out = String::from_utf8_lossy(&v.stdout);
    assert!(out.contains("CORRUPT a.bin") && !out.contains("CORRUPT nested"), "{out}");
}

#[test]
fn exit_codes_for_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&cio(&["simulate", tmp.path().join("none.toml").to_str().unwrap()])), 1);
    let bad = write_config(tmp.path(), "[topology]\nnodes = \"many\"\n");
    assert_eq!(code(&cio(&["simulate", bad.to_str().unwrap()])), 1);
    let contradiction = write_config(tmp.path(), "[topology]\nifs_per_pset = 0\n[mode]\nkind = \"cio\"\n");
    assert_eq!(code(&cio(&["simulate", contradiction.to_str().unwrap()])), 1);
    assert_eq!(code(&cio(&["no-such-command"])), 1);
    assert_eq!(code(&cio(&["report", tmp.path().to_str().unwrap()])), 1);
    let not_archive = tmp.path().join("plain");
    std::fs::write(&not_archive, "just text, not an archive").unwrap();
    assert_eq!(code(&cio(&["archive", "list", not_archive.to_str().unwrap()])), 2);
    assert_eq!(code(&cio(&["--help"])), 0);
}

#[test]
fn shipped_scenarios_parse() {
    for entry in std::fs::read_dir(scenarios()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let cfg = cio_core::ScenarioConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            let topo = cfg.build_topology().unwrap();
            cfg.load_workload(&topo).unwrap();
        }
    }
}
