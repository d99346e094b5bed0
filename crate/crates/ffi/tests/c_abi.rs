use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use mrl_ffi::*;

fn config(text: &str) -> *mut MrlConfig {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { mrl_config_from_toml(text.as_ptr(), &mut cfg) },
        MrlStatus::Ok
    );
    assert!(!cfg.is_null());
    cfg
}

fn last_error() -> String {
    let p = mrl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = CStr::from_ptr(p).to_string_lossy().into_owned();
    mrl_string_free(p);
    s
}

#[test]
fn kernel_suite_round_trip() {
    let cfg = config("seed = 3\n[kernel]\nsamples = 500\n");
    let mut reports = ptr::null_mut();
    unsafe {
        assert_eq!(
            mrl_run_suite(cfg, MrlSuite::Kernel, &mut reports),
            MrlStatus::Ok
        );
        let n = mrl_reports_len(reports);
        assert!(n >= 10);
        let mut names = Vec::new();
        for i in 0..n {
            let (mut observed, mut passed) = (f64::NAN, false);
            assert_eq!(
                mrl_report_result(reports, i, &mut observed, &mut passed),
                MrlStatus::Ok
            );
            let mut name = ptr::null_mut();
            assert_eq!(mrl_report_name(reports, i, &mut name), MrlStatus::Ok);
            let name = take_string(name);
            assert!(passed, "{name} failed with {observed}");
            names.push(name);
        }
        assert!(names.iter().any(|n| n == "kernel_mass"));
        let mut csv = ptr::null_mut();
        assert_eq!(mrl_reports_csv(reports, &mut csv), MrlStatus::Ok);
        let csv = take_string(csv);
        assert!(csv.starts_with("suite,name,observed"));
        assert_eq!(csv.lines().count(), n + 1);
        mrl_reports_free(reports);
        mrl_config_free(cfg);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let bad = CString::new("seed = 1\nbogus = 2\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { mrl_config_from_toml(bad.as_ptr(), &mut cfg) },
        MrlStatus::Config
    );
    assert!(cfg.is_null(), "out-pointer untouched on failure");
    assert!(last_error().contains("bogus"));

    let order = CString::new("[maxreg]\nexponents = [[3.0, 2.0]]\n").unwrap();
    assert_eq!(
        unsafe { mrl_config_from_toml(order.as_ptr(), &mut cfg) },
        MrlStatus::Config
    );
    assert!(last_error().contains("2 ≤ r ≤ p"));

    assert_eq!(
        unsafe { mrl_config_from_toml(ptr::null(), &mut cfg) },
        MrlStatus::NullPointer
    );
    assert_eq!(
        unsafe { mrl_config_set_seed(ptr::null_mut(), 1) },
        MrlStatus::NullPointer
    );

    let missing = CString::new("/nonexistent/mrl.toml").unwrap();
    assert_eq!(
        unsafe { mrl_config_load(missing.as_ptr(), &mut cfg) },
        MrlStatus::Config
    );

    let (mut observed, mut passed) = (0.0, false);
    let status = unsafe { mrl_report_result(ptr::null(), 0, &mut observed, &mut passed) };
    assert_eq!(status, MrlStatus::NullPointer);
    assert_eq!(unsafe { mrl_reports_len(ptr::null()) }, 0);
    unsafe {
        mrl_config_free(ptr::null_mut());
        mrl_reports_free(ptr::null_mut());
        mrl_string_free(ptr::null_mut());
    }
}

#[test]
fn seed_changes_hash() {
    let cfg = config("seed = 1\n");
    unsafe {
        let mut a = ptr::null_mut();
        assert_eq!(mrl_config_hash(cfg, &mut a), MrlStatus::Ok);
        let a = take_string(a);
        assert_eq!(mrl_config_set_seed(cfg, 2), MrlStatus::Ok);
        let mut b = ptr::null_mut();
        assert_eq!(mrl_config_hash(cfg, &mut b), MrlStatus::Ok);
        let b = take_string(b);
        assert_eq!(a.len(), 64);
        assert_ne!(a, b);
        mrl_config_free(cfg);
    }
}

#[test]
fn kernel_values_through_the_abi() {
    let a = [1.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(
            mrl_kernel_derivative(1, a.as_ptr(), [0.0].as_ptr(), ptr::null(), &mut out),
            MrlStatus::Ok
        );
        assert!((out - 0.282_094_791_773_878_1).abs() < 1e-12);
        let gamma = [1u32];
        assert_eq!(
            mrl_kernel_derivative(1, a.as_ptr(), [1.0].as_ptr(), gamma.as_ptr(), &mut out),
            MrlStatus::Ok
        );
        assert!((out + 0.109_848).abs() < 1e-6);
        let not_pd = [-1.0];
        let status =
            mrl_kernel_derivative(1, not_pd.as_ptr(), [0.0].as_ptr(), ptr::null(), &mut out);
        assert_eq!(status, MrlStatus::Domain);
        let a2 = [2.0, 0.5, 0.5, 1.0];
        let too_high = [3u32, 2];
        let status = mrl_kernel_derivative(
            2,
            a2.as_ptr(),
            [0.1, 0.2].as_ptr(),
            too_high.as_ptr(),
            &mut out,
        );
        assert_eq!(status, MrlStatus::InvalidArgument);
        assert_eq!(
            mrl_kernel_derivative(4, a.as_ptr(), a.as_ptr(), ptr::null(), &mut out),
            MrlStatus::InvalidArgument
        );
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(mrl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/mrl.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "mrl_last_error_message",
        "mrl_version",
        "mrl_string_free",
        "mrl_config_from_toml",
        "mrl_config_load",
        "mrl_config_free",
        "mrl_config_set_seed",
        "mrl_config_hash",
        "mrl_run_suite",
        "mrl_reports_free",
        "mrl_reports_len",
        "mrl_report_result",
        "mrl_report_name",
        "mrl_reports_csv",
        "mrl_kernel_derivative",
        "MRL_STATUS_OK = 0",
        "typedef struct MrlConfig MrlConfig",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

/// Compiles the header as C and as C++ when a compiler is on PATH.
#[test]
fn header_compiles() {
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        if Command::new(compiler).arg("--version").output().is_err() {
            eprintln!("{compiler} not found; skipping");
            continue;
        }
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(header())
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{compiler}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
