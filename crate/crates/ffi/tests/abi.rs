use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use rwc_core::calibrators::OnlineCalibrator;
use rwc_core::data::RunConfig;
use rwc_core::rng::CounterRng;
use rwc_ffi::*;

fn last_error() -> Option<String> {
    let p = rwc_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn new_calibrator(cfg: &RwcConfig) -> *mut RwcCalibrator {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { rwc_calibrator_new(cfg, &mut h) }, RwcStatus::Ok);
    assert!(!h.is_null());
    h
}

fn configs() -> Vec<RwcConfig> {
    let mut out = Vec::new();
    for method in [RwcMethod::Swc, RwcMethod::Twc, RwcMethod::Rwc, RwcMethod::Aci] {
        let mut c = rwc_config_default(method);
        c.m = 60;
        c.alpha = 0.05;
        c.lambda = if method == RwcMethod::Swc || method == RwcMethod::Aci { 0.0 } else { 0.02 };
        c.h = if method == RwcMethod::Rwc { 0.7 } else { f64::INFINITY };
        c.n_min = if method == RwcMethod::Rwc { 15 } else { 0 };
        c.aci_gamma = 0.01;
        out.push(c);
    }
    out
}

#[test]
fn handle_matches_core_calibrator_bit_for_bit() {
    let rng = CounterRng::new(2, 9);
    for cfg in configs() {
        let h = new_calibrator(&cfg);
        let mut core = OnlineCalibrator::new(RunConfig::from(cfg)).unwrap();
        let z = |t: u64| [rng.normal_at(10_000 + 2 * t), rng.normal_at(10_001 + 2 * t)];
        for t in 0..40u64 {
            let s = rng.normal_at(t);
            let [z0, z1] = z(t);
            assert_eq!(unsafe { rwc_calibrator_prime(h, t as usize, s, z0, z1) }, RwcStatus::Ok);
            core.prime(t as usize, s, [z0, z1]).unwrap();
        }
        for t in 40..400u64 {
            let qhat = 1.0 + 0.1 * rng.normal_at(20_000 + t);
            let loss = rng.normal_at(30_000 + t) * if t % 50 < 10 { 3.0 } else { 1.0 };
            let [z0, z1] = z(t);
            let mut bound = RwcBound {
                index: 0,
                qhat: 0.0,
                chat: 0.0,
                upper: 0.0,
                n_eff: 0.0,
                tau: 0.0,
                fallback_used: false,
                alpha_t: 0.0,
                n_eff_kernel: 0.0,
            };
            assert_eq!(unsafe { rwc_calibrator_issue(h, t as usize, qhat, z0, z1, &mut bound) }, RwcStatus::Ok);
            let expect = core.issue(t as usize, qhat, [z0, z1]).unwrap();
            assert_eq!(bound.chat.to_bits(), expect.chat.to_bits());
            assert_eq!(bound.upper.to_bits(), expect.upper.to_bits());
            assert_eq!(bound.n_eff.to_bits(), expect.n_eff.to_bits());
            assert_eq!(bound.fallback_used, expect.fallback_used);
            assert_eq!(bound.alpha_t.is_nan(), expect.alpha_t.is_none());

            let mut step = RwcStep {
                bound,
                loss: 0.0,
                score: 0.0,
                exceed: false,
            };
            assert_eq!(unsafe { rwc_calibrator_observe(h, loss, &mut step) }, RwcStatus::Ok);
            let expect = core.observe(loss).unwrap();
            assert_eq!(step.exceed, expect.exceed);
            assert_eq!(step.score.to_bits(), expect.score.to_bits());
        }
        let mut len = 0usize;
        assert_eq!(unsafe { rwc_calibrator_len(h, &mut len) }, RwcStatus::Ok);
        assert_eq!(len, 60);
        unsafe { rwc_calibrator_free(h) };
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut cfg = rwc_config_default(RwcMethod::Swc);
    cfg.alpha = 1.5;
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { rwc_calibrator_new(&cfg, &mut h) }, RwcStatus::InvalidConfig);
    assert!(h.is_null());
    assert!(last_error().unwrap().contains("alpha"));

    assert_eq!(unsafe { rwc_calibrator_new(ptr::null(), &mut h) }, RwcStatus::NullPointer);
    assert_eq!(unsafe { rwc_calibrator_issue(ptr::null_mut(), 0, 0.0, 0.0, 0.0, ptr::null_mut()) }, RwcStatus::NullPointer);

    let h = new_calibrator(&rwc_config_default(RwcMethod::Swc));
    assert_eq!(unsafe { rwc_calibrator_issue(h, 0, 1.0, 0.0, 0.0, ptr::null_mut()) }, RwcStatus::NumericError);
    assert!(last_error().unwrap().contains("empty"));
    assert_eq!(unsafe { rwc_calibrator_observe(h, 0.1, ptr::null_mut()) }, RwcStatus::NumericError);
    assert_eq!(unsafe { rwc_calibrator_prime(h, 0, f64::NAN, 0.0, 0.0) }, RwcStatus::NumericError);

    assert_eq!(unsafe { rwc_calibrator_prime(h, 0, 0.5, 0.0, 0.0) }, RwcStatus::Ok);
    assert_eq!(last_error(), None);
    // Indices must advance.
    assert_eq!(unsafe { rwc_calibrator_prime(h, 0, 0.5, 0.0, 0.0) }, RwcStatus::InvalidConfig);
    unsafe { rwc_calibrator_free(h) };
    unsafe { rwc_calibrator_free(ptr::null_mut()) };
}

#[test]
fn statistics_entry_points() {
    let (mut lr, mut p) = (0.0, 0.0);
    assert_eq!(unsafe { rwc_kupiec(1751, 20, 0.01, &mut lr, &mut p) }, RwcStatus::Ok);
    assert!((lr - 0.342).abs() < 1e-3 && (p - 0.559).abs() < 2e-3);
    assert_eq!(unsafe { rwc_kupiec(10, 11, 0.01, &mut lr, &mut p) }, RwcStatus::NumericError);

    let ind: Vec<u8> = (0..500).map(|i| u8::from(i % 37 == 0 || i % 37 == 1)).collect();
    let mut c = RwcChristoffersen {
        n00: 0,
        n01: 0,
        n10: 0,
        n11: 0,
        lr_uc: 0.0,
        lr_ind: 0.0,
        p_ind: 0.0,
        lr_cc: 0.0,
        p_cc: 0.0,
    };
    assert_eq!(unsafe { rwc_christoffersen(ind.as_ptr(), ind.len(), 0.01, &mut c) }, RwcStatus::Ok);
    assert_eq!(c.n00 + c.n01 + c.n10 + c.n11, 499);
    assert!(c.n11 > 0);
    assert!((c.lr_cc - c.lr_uc - c.lr_ind).abs() < 1e-9);

    let values = [3.0, 1.0, 2.0, 4.0];
    let weights = [0.1, 0.2, 0.3, 0.4];
    let mut q = 0.0;
    assert_eq!(unsafe { rwc_weighted_quantile(values.as_ptr(), weights.as_ptr(), 4, 0.5, &mut q) }, RwcStatus::Ok);
    // Sorted masses: 1 -> 0.2, 2 -> 0.5.
    assert_eq!(q, 2.0);
    assert_eq!(unsafe { rwc_weighted_quantile(ptr::null(), ptr::null(), 0, 0.5, &mut q) }, RwcStatus::NumericError);
    assert_eq!(unsafe { rwc_weighted_quantile(ptr::null(), weights.as_ptr(), 4, 0.5, &mut q) }, RwcStatus::NullPointer);

    let mut pv = 0.0;
    assert_eq!(
        unsafe { rwc_conformal_pvalue(values.as_ptr(), weights.as_ptr(), 4, 10.0, 0.0, 1.0, &mut pv) },
        RwcStatus::Ok
    );
    assert_eq!(pv, 0.0);
    assert_eq!(rwc_score(0.03, 0.025), 0.03 - 0.025);
    assert_eq!(
        unsafe { CStr::from_ptr(rwc_version()) }.to_str().unwrap(),
        env!("CARGO_PKG_VERSION")
    );
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/rwc.h")).unwrap();
    let source = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 12);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["RwcStatus", "RwcConfig", "RwcBound", "RwcStep", "RwcChristoffersen", "typedef struct RwcCalibrator RwcCalibrator"] {
        assert!(header.contains(ty), "{ty} missing from header");
    }
}

const C_CLIENT: &str = r#"
#include <math.h>
#include <stdio.h>
#include "rwc.h"

int main(void) {
    RwcConfig cfg = rwc_config_default(RWC_METHOD_TWC);
    cfg.m = 10;
    cfg.lambda = 0.1;
    cfg.alpha = 0.1;
    RwcCalibrator *h = NULL;
    if (rwc_calibrator_new(&cfg, &h) != RWC_STATUS_OK) return 1;
    for (size_t i = 0; i < 10; i++) {
        if (rwc_calibrator_prime(h, i, (double)i, 0.0, 0.0) != RWC_STATUS_OK) return 2;
    }
    RwcBound b;
    if (rwc_calibrator_issue(h, 10, 1.0, 0.0, 0.0, &b) != RWC_STATUS_OK) return 3;
    RwcStep s;
    if (rwc_calibrator_observe(h, 100.0, &s) != RWC_STATUS_OK || !s.exceed) return 4;
    if (rwc_calibrator_observe(h, 1.0, NULL) != RWC_STATUS_NUMERIC_ERROR) return 5;
    printf("chat=%.17g n_eff=%.17g err=%s\n", b.chat, b.n_eff, rwc_last_error_message());
    rwc_calibrator_free(h);
    double lr, p;
    if (rwc_kupiec(1751, 93, 0.01, &lr, &p) != RWC_STATUS_OK || fabs(lr - 162.94) > 0.02) return 6;
    return 0;
}
"#;

fn compiler() -> Option<&'static str> {
    ["cc", "clang", "gcc"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
}

fn static_lib() -> PathBuf {
    // CARGO_TARGET_TMPDIR is <target>/tmp; the library sits next to it in the profile dir.
    let target = Path::new(env!("CARGO_TARGET_TMPDIR")).parent().unwrap().to_path_buf();
    ["debug", "release"]
        .iter()
        .map(|p| target.join(p).join("librwc_ffi.a"))
        .find(|p| p.is_file())
        .expect("librwc_ffi.a is built with the test targets")
}

#[test]
fn c_client_compiles_links_and_runs() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("c_client");
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("client.c");
    std::fs::write(&src, C_CLIENT).unwrap();
    let exe = dir.join("client");
    let build = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir().join("include"))
        .arg(&src)
        .arg(static_lib())
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "exit {:?}: {stdout}", run.status.code());
    // Scores 0..9 with decay 0.1: the newest score alone holds ~15% of the
    // mass, so the level-0.9 point is 9.
    assert!(stdout.starts_with("chat=9 "), "{stdout}");
    assert!(stdout.contains("no bound has been issued"), "{stdout}");
}
