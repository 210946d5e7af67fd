//! End-to-end checks of the command-line interface: exit codes, output
//! layout, overwrite protection, and byte determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mfgmesh");

const TINY_CONFIG: &str = "\
# small deterministic experiment
n_agents = 3
grid_width = 3
grid_height = 3
trials = 2
K = 2
M = 3
L = 2
E = 2
batch_size = 2
exploitability_every = 2
";

fn run_cli(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary launches")
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    fs::write(&path, TINY_CONFIG).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn strip_seconds(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map(|(head, _)| head).unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn run_produces_a_complete_artifact_and_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run_cli(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "config.txt",
        "summary.json",
        "trial_0.csv",
        "trial_1.csv",
        "return.svg",
        "exploitability.svg",
        "trial_0/checkpoint/state.json",
        "trial_0/checkpoint/agent_0.bin",
    ] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(out_dir.join("trial_0.csv")).unwrap();
    assert!(csv.starts_with("k,mean_return,std_return,exploitability,seconds\n"));
    // K=2 with probe cadence 2: a value at k=0, an empty field at k=1.
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(!lines[1].contains(",,"));
    assert!(lines[2].contains(",,"));
}

#[test]
fn validation_failures_exit_one_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "taq_q = 0.03\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run_cli(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("taq_q"));
    assert!(!out_dir.exists());

    fs::write(&cfg, "K = 0\n").unwrap();
    let out = run_cli(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains('K'));
}

#[test]
fn missing_config_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(
        &[
            "run",
            dir.path().join("absent.cfg").to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn existing_out_dir_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let args = ["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
    assert_eq!(code(&run_cli(&args, &[])), 0);
    let again = run_cli(&args, &[]);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let forced = run_cli(
        &["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--force"],
        &[],
    );
    assert_eq!(code(&forced), 0);
}

#[test]
fn reruns_are_byte_identical_except_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out_dir, threads) in [(&out_a, "1"), (&out_b, "2")] {
        let out = run_cli(
            &["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()],
            &[("MFGMESH_THREADS", threads)],
        );
        assert_eq!(code(&out), 0);
    }
    for t in 0..2 {
        let a = fs::read_to_string(out_a.join(format!("trial_{t}.csv"))).unwrap();
        let b = fs::read_to_string(out_b.join(format!("trial_{t}.csv"))).unwrap();
        assert_eq!(strip_seconds(&a), strip_seconds(&b));
    }
    // summary.json holds no wall-clock data, so it matches exactly.
    let a = fs::read(out_a.join("summary.json")).unwrap();
    let b = fs::read(out_b.join("summary.json")).unwrap();
    assert_eq!(a, b);
    let a = fs::read(out_a.join("trial_0/checkpoint/agent_0.bin")).unwrap();
    let b = fs::read(out_b.join("trial_0/checkpoint/agent_0.bin")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn plot_rebuilds_svgs_from_a_results_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let out =
        run_cli(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0);
    fs::remove_file(out_dir.join("return.svg")).unwrap();
    fs::remove_file(out_dir.join("exploitability.svg")).unwrap();
    let out = run_cli(&["plot", out_dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0);
    for name in ["return.svg", "exploitability.svg"] {
        let svg = fs::read_to_string(out_dir.join(name)).unwrap();
        roxmltree::Document::parse(&svg).expect("valid xml");
    }
    // A directory with no summaries anywhere is an I/O-class failure.
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = run_cli(&["plot", empty.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn exploit_prints_a_deterministic_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let out =
        run_cli(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0);
    let ckpt = out_dir.join("trial_0/checkpoint");
    let parse = |o: &Output| {
        String::from_utf8_lossy(&o.stdout).trim().parse::<f64>().expect("a number")
    };
    let first = run_cli(&["exploit", ckpt.to_str().unwrap()], &[]);
    assert_eq!(code(&first), 0);
    let second = run_cli(&["exploit", ckpt.to_str().unwrap()], &[]);
    assert_eq!(parse(&first).to_bits(), parse(&second).to_bits());
    // A missing checkpoint directory is an I/O failure.
    let out = run_cli(&["exploit", dir.path().join("nope").to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn thread_env_var_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run_cli(
        &["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()],
        &[("MFGMESH_THREADS", "zero")],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("MFGMESH_THREADS"));
}

#[test]
fn usage_and_help_exit_codes() {
    let out = run_cli(&[], &[]);
    assert_eq!(code(&out), 1);
    let out = run_cli(&["--help"], &[]);
    assert_eq!(code(&out), 0);
}
