use std::ffi::{CStr, CString};
use std::ptr;

use epsr_ffi::*;

fn last_error() -> String {
    let p = epsr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(epsr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn aggregate_score_matches_published_value() {
    let baseline = [4.1442, 0.5302, 0.3283];
    let vpeg = [3.1205, 0.6544, 0.3919];
    let mut s = 0.0;
    let st = unsafe { epsr_aggregate_score(vpeg.as_ptr(), baseline.as_ptr(), &mut s) };
    assert_eq!(st, EpsrStatus::Ok);
    assert!((s - 2.20152).abs() < 5e-4, "{s}");
    let st = unsafe { epsr_aggregate_score(baseline.as_ptr(), baseline.as_ptr(), &mut s) };
    assert_eq!(st, EpsrStatus::Ok);
    assert!((s - std::f64::consts::E).abs() < 1e-9);
}

#[test]
fn null_arguments_are_reported() {
    let mut s = 0.0;
    let st = unsafe { epsr_aggregate_score(ptr::null(), ptr::null(), &mut s) };
    assert_eq!(st, EpsrStatus::NullPointer);
    assert!(last_error().contains("metrics"));
    let st = unsafe { epsr_class_stats(ptr::null(), 3, ptr::null_mut()) };
    assert_eq!(st, EpsrStatus::NullPointer);
}

#[test]
fn class_stats_and_statistics_error() {
    let v = [1.0, 2.0, 4.0];
    let mut out = EpsrClassStats::default();
    assert_eq!(unsafe { epsr_class_stats(v.as_ptr(), v.len(), &mut out) }, EpsrStatus::Ok);
    assert!((out.mean - 7.0 / 3.0).abs() < 1e-12);
    assert_eq!(out.median, 2.0);
    let var = ((1.0f64 - 7.0 / 3.0).powi(2) + (2.0f64 - 7.0 / 3.0).powi(2) + (4.0f64 - 7.0 / 3.0).powi(2)) / 2.0;
    assert!((out.std - var.sqrt()).abs() < 1e-12);
    assert_eq!(unsafe { epsr_class_stats(v.as_ptr(), 1, &mut out) }, EpsrStatus::Statistics);
    assert!(!last_error().is_empty());
}

#[test]
fn unknown_model_name_is_a_config_error() {
    let name = CString::new("no_such_net").unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { epsr_model_build(name.as_ptr(), 0, &mut m) };
    assert_eq!(st, EpsrStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("no_such_net"));
}

#[test]
fn model_lifecycle() {
    let name = CString::new("efdn_fused").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { epsr_model_build(name.as_ptr(), 7, &mut m) }, EpsrStatus::Ok);

    let mut budget = EpsrBudget::default();
    assert_eq!(unsafe { epsr_model_audit(m, &mut budget) }, EpsrStatus::Ok);
    assert!(budget.passed);
    assert!(budget.params < budget.param_limit);

    let mut scale = 0usize;
    assert_eq!(unsafe { epsr_model_scale(m, &mut scale) }, EpsrStatus::Ok);
    assert_eq!(scale, 4);

    let (h, w) = (8usize, 12usize);
    let input: Vec<f32> = (0..h * w * 3).map(|i| (i % 17) as f32 / 16.0).collect();
    let mut out = vec![0f32; h * scale * w * scale * 3];
    let st = unsafe { epsr_model_infer(m, input.as_ptr(), h, w, 0, 0, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, EpsrStatus::Ok, "{}", last_error());
    assert!(out.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));

    let st = unsafe { epsr_model_infer(m, input.as_ptr(), h, w, 0, 0, out.as_mut_ptr(), 5) };
    assert_eq!(st, EpsrStatus::InvalidArgument);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.safetensors").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { epsr_model_save(m, path.as_ptr()) }, EpsrStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { epsr_model_load(path.as_ptr(), &mut loaded) }, EpsrStatus::Ok);
    let mut again = vec![0f32; out.len()];
    let st = unsafe { epsr_model_infer(loaded, input.as_ptr(), h, w, 0, 0, again.as_mut_ptr(), again.len()) };
    assert_eq!(st, EpsrStatus::Ok);
    assert_eq!(out, again);

    unsafe {
        epsr_model_free(m);
        epsr_model_free(loaded);
        epsr_model_free(ptr::null_mut());
    }
}

#[test]
fn missing_checkpoint_is_an_error() {
    let path = CString::new("/nonexistent/x.safetensors").unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { epsr_model_load(path.as_ptr(), &mut m) };
    assert_ne!(st, EpsrStatus::Ok);
    assert!(m.is_null());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/epsr.h")).unwrap();
    for sym in [
        "epsr_last_error_message",
        "epsr_version",
        "epsr_model_build",
        "epsr_model_load",
        "epsr_model_save",
        "epsr_model_free",
        "epsr_model_audit",
        "epsr_model_scale",
        "epsr_model_infer",
        "epsr_aggregate_score",
        "epsr_class_stats",
        "typedef struct EpsrModel EpsrModel",
        "EPSR_STATUS_PANIC",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}
