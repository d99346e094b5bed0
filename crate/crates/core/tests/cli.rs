//! The `mrl` binary: exit codes, output files and cross-process determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mrl::field::read_field;
use tempfile::TempDir;

fn mrl(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_mrl"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn kernel_check_passes_and_writes_outputs() {
    let tmp = TempDir::new().unwrap();
    let o = mrl(tmp.path(), "seed = 5\n", &["kernel-check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = tmp.path().join("out");
    for f in [
        "reports.csv",
        "summary.svg",
        "status.txt",
        "timings.txt",
        "config.toml",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("reports.csv")).unwrap();
    assert!(csv.contains("criterion_01_kernel_exactness"));
    assert!(csv.contains("criterion_02_gaussian_bounds"));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("0 failed"));
    let echoed = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 5"));
}

#[test]
fn failing_report_exits_one() {
    let tmp = TempDir::new().unwrap();
    let o = mrl(
        tmp.path(),
        "[kernel]\nsamples = 200\nstability = 1e-300\n",
        &["kernel-check"],
    );
    assert_eq!(code(&o), 1);
    let status = fs::read_to_string(tmp.path().join("out/status.txt")).unwrap();
    assert!(status.contains("FAIL gaussian_bound_fit"), "{status}");
}

#[test]
fn configuration_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let o = mrl(tmp.path(), "seed = 1\nunknown_key = 3\n", &["kernel-check"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown_key"));

    let o = mrl(
        tmp.path(),
        "[band]\nkappa = 2.0\nk_up = 1.0\n",
        &["kernel-check"],
    );
    assert_eq!(code(&o), 2);

    let o = mrl(tmp.path(), "", &["all", "--suite", "nonsense"]);
    assert_eq!(code(&o), 2);

    let missing = Command::new(env!("CARGO_BIN_EXE_mrl"))
        .arg("kernel-check")
        .output()
        .unwrap();
    assert_eq!(code(&missing), 2);

    let no_command = Command::new(env!("CARGO_BIN_EXE_mrl")).output().unwrap();
    assert_eq!(code(&no_command), 2);
}

#[test]
fn seed_flag_overrides_the_file() {
    let tmp = TempDir::new().unwrap();
    let o = mrl(tmp.path(), "seed = 1\n", &["kernel-check", "--seed", "42"]);
    assert_eq!(code(&o), 0);
    let echoed = fs::read_to_string(tmp.path().join("out/config.toml")).unwrap();
    assert!(echoed.contains("seed = 42"));
}

const SMALL_SPDE: &str =
    "seed = 11\n[grid]\nnx = 32\nnt = 32\n[ensemble]\nmembers = 100\nchannels = 2\n";

#[test]
fn solve_spde_writes_a_readable_field() {
    let tmp = TempDir::new().unwrap();
    let o = mrl(tmp.path(), SMALL_SPDE, &["solve-spde"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let field = read_field(&tmp.path().join("out/u.bin")).unwrap();
    assert_eq!(field.members(), 100);
    assert_eq!(field.grid().nx(), 32);
    assert!(field.member(0).slice(0, 0).iter().all(|v| *v == 0.0));
    let manifest = fs::read_to_string(tmp.path().join("out/manifest.csv")).unwrap();
    assert!(manifest.starts_with("key,value"));
    assert!(manifest.contains("solver,split_solve"));
}

/// The same configuration under different rayon pool sizes yields the same
/// bytes, in separate processes.
#[test]
fn outputs_do_not_depend_on_thread_count() {
    let mut fields = Vec::new();
    let mut reports = Vec::new();
    for threads in ["1", "3", "8"] {
        let tmp = TempDir::new().unwrap();
        let cfg = tmp.path().join("cfg.toml");
        fs::write(&cfg, SMALL_SPDE).unwrap();
        for (cmd, sub) in [("solve-spde", "spde"), ("kernel-check", "kernel")] {
            let o = Command::new(env!("CARGO_BIN_EXE_mrl"))
                .env("RAYON_NUM_THREADS", threads)
                .args([cmd, "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(tmp.path().join(sub))
                .output()
                .unwrap();
            assert_eq!(code(&o), 0);
        }
        fields.push(fs::read(tmp.path().join("spde/u.bin")).unwrap());
        reports.push(fs::read(tmp.path().join("kernel/reports.csv")).unwrap());
    }
    assert!(
        fields.windows(2).all(|w| w[0] == w[1]),
        "u.bin differs across thread counts"
    );
    assert!(
        reports.windows(2).all(|w| w[0] == w[1]),
        "reports.csv differs across thread counts"
    );
}
