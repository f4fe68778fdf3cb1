use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use embcomm_ffi::*;

fn last_error() -> String {
    let p = ec_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn uniform(n: usize) -> *mut EcDistribution {
    let probs = vec![1.0 / n as f64; n];
    let mut d = ptr::null_mut();
    assert_eq!(
        unsafe { ec_distribution_new(probs.as_ptr(), n, &mut d) },
        EcStatus::Ok
    );
    d
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(ec_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn presence_and_unique() {
    let mut p = 0.0;
    assert_eq!(
        unsafe { ec_batch_presence_prob(0.5, 2, &mut p) },
        EcStatus::Ok
    );
    assert_eq!(p, 0.75);

    let d = uniform(4);
    assert_eq!(unsafe { ec_distribution_len(d) }, 4);
    let mut u = 0.0;
    assert_eq!(unsafe { ec_expected_unique(d, 2, &mut u) }, EcStatus::Ok);
    assert!((u - 1.75).abs() < 1e-12);
    unsafe { ec_distribution_free(d) };
}

#[test]
fn epoch_costs() {
    let d = uniform(2);
    let mut base = 0.0;
    assert_eq!(
        unsafe { ec_baseline_epoch_cost(100, 10, 1, &mut base) },
        EcStatus::Ok
    );
    assert_eq!(base, 100.0);
    let mut c = EcCost::default();
    assert_eq!(
        unsafe { ec_cached_epoch_cost(d, 100, 10, 1, ptr::null(), 0, &mut c) },
        EcStatus::Ok
    );
    assert!((c.total - 119.98046875).abs() < 1e-9);
    let cached = [0u32, 1];
    assert_eq!(
        unsafe { ec_cached_epoch_cost(d, 100, 10, 1, cached.as_ptr(), 2, &mut c) },
        EcStatus::Ok
    );
    assert_eq!(c.embedding_cost, 0.0);
    unsafe { ec_distribution_free(d) };
}

#[test]
fn planner_round_trip() {
    let json = CString::new(r#"{"kind":"zipf","size":64,"shape":1.0}"#).unwrap();
    let mut d = ptr::null_mut();
    assert_eq!(
        unsafe { ec_distribution_from_json(json.as_ptr(), &mut d) },
        EcStatus::Ok
    );
    let dev = EcDevice {
        memory: 4096,
        activation_params: 4,
        embedding_params: 16,
        efficiency: 1.0,
    };
    let mut b = 0;
    assert_eq!(unsafe { ec_max_batch_size(&dev, 4, &mut b) }, EcStatus::Ok);
    assert_eq!(b, 1008);

    let mut exact = ptr::null_mut();
    let mut fast = ptr::null_mut();
    assert_eq!(
        unsafe { ec_plan(d, &dev, 100_000, 1, true, &mut exact) },
        EcStatus::Ok
    );
    assert_eq!(
        unsafe { ec_plan(d, &dev, 100_000, 1, false, &mut fast) },
        EcStatus::Ok
    );
    assert_eq!(unsafe { ec_plan_cache_size(exact) }, unsafe {
        ec_plan_cache_size(fast)
    });
    assert!(unsafe { ec_plan_feasible(exact) });
    assert_eq!(unsafe { ec_plan_method(exact) }, EcSearchMethod::Scan);

    let k = unsafe { ec_plan_cache_size(exact) };
    let n = unsafe { ec_plan_cached_ids(exact, ptr::null_mut(), 0) };
    assert_eq!(n as u64, k);
    let mut ids = vec![u32::MAX; n];
    assert_eq!(unsafe { ec_plan_cached_ids(exact, ids.as_mut_ptr(), n) }, n);
    assert_eq!(ids, (0..n as u32).collect::<Vec<_>>());

    let mut cost = EcCost::default();
    assert_eq!(unsafe { ec_plan_cost(exact, &mut cost) }, EcStatus::Ok);
    let mut direct = EcCost::default();
    let batch = unsafe { ec_plan_batch_size(exact) };
    assert_eq!(
        unsafe { ec_cached_epoch_cost(d, 100_000, batch, 1, ids.as_ptr(), n, &mut direct) },
        EcStatus::Ok
    );
    assert_eq!(cost, direct);

    let mut m = EcMarginal::default();
    assert_eq!(
        unsafe { ec_delta_comm(d, &dev, 100_000, 1, 0, &mut m) },
        EcStatus::Ok
    );
    assert_eq!(m.candidate_id, 0);
    assert_eq!(m.recommend, m.delta_comm < 0.0);

    unsafe {
        ec_plan_free(exact);
        ec_plan_free(fast);
        ec_distribution_free(d);
    }
}

#[test]
fn measure_unique_is_seeded() {
    let d = uniform(10);
    let mut a = EcUniqueEstimate::default();
    let mut b = EcUniqueEstimate::default();
    assert_eq!(
        unsafe { ec_measure_unique(d, 5, 2000, 9, &mut a) },
        EcStatus::Ok
    );
    assert_eq!(
        unsafe { ec_measure_unique(d, 5, 2000, 9, &mut b) },
        EcStatus::Ok
    );
    assert_eq!(a, b);
    let expected = 10.0 * (1.0 - 0.9f64.powi(5));
    assert!((a.mean - expected).abs() < 4.0 * a.std_error);
    unsafe { ec_distribution_free(d) };
}

#[test]
fn errors_are_reported() {
    let mut d = ptr::null_mut();
    let bad = [0.5, 0.6];
    assert_eq!(
        unsafe { ec_distribution_new(bad.as_ptr(), 2, &mut d) },
        EcStatus::InvalidArgument
    );
    assert!(d.is_null());
    assert!(!last_error().is_empty());

    let mut u = 0.0;
    assert_eq!(
        unsafe { ec_expected_unique(ptr::null(), 2, &mut u) },
        EcStatus::NullPointer
    );
    assert!(last_error().contains("dist"));

    let dev = EcDevice {
        memory: 10,
        activation_params: 20,
        embedding_params: 8,
        efficiency: 1.0,
    };
    let mut b = 0;
    assert_eq!(
        unsafe { ec_max_batch_size(&dev, 0, &mut b) },
        EcStatus::Infeasible
    );
    assert!(last_error().contains("no feasible batch"));

    assert_eq!(
        unsafe { ec_distribution_parametric(EcKind::Zipf, 0, 1.0, &mut d) },
        EcStatus::InvalidArgument
    );
    assert!(ec_default_shape(EcKind::HalfNormal) > 0.0);

    unsafe {
        ec_distribution_free(ptr::null_mut());
        ec_plan_free(ptr::null_mut());
    }
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("cc not found; skipping C link check");
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let lib = target_dir().join("libembcomm_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "embcomm.h"

int main(void) {
    double probs[4] = {0.25, 0.25, 0.25, 0.25};
    EcDistribution *d = NULL;
    if (ec_distribution_new(probs, 4, &d) != EC_STATUS_OK) return 1;
    double u = 0.0;
    if (ec_expected_unique(d, 2, &u) != EC_STATUS_OK) return 2;
    EcDevice dev = {1000, 9, 10, 1.0};
    uint64_t b = 0;
    if (ec_max_batch_size(&dev, 10, &b) != EC_STATUS_OK) return 3;
    if (ec_expected_unique(NULL, 2, &u) != EC_STATUS_NULL_POINTER) return 4;
    if (ec_last_error_message() == NULL) return 5;
    ec_distribution_free(d);
    printf("%.6f %llu %s\n", u, (unsigned long long)b, ec_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "C program exited with {:?}",
        out.status
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        stdout.trim(),
        format!("1.750000 100 {}", env!("CARGO_PKG_VERSION"))
    );
}
