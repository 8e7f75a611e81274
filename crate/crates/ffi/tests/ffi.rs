use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ddcnet_ffi::*;

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ffi");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn cpath(p: &PathBuf) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ddc_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn default_model_reports_parameter_count() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ddc_model_new_default(0, &mut m) }, DdcStatus::Ok);
    assert_eq!(unsafe { ddc_model_param_count(m) }, 5_547_078);
    unsafe { ddc_model_free(m) };
    assert_eq!(unsafe { ddc_model_param_count(ptr::null()) }, 0);
}

#[test]
fn flo_round_trip_through_c_api() {
    let path = tmp("rt.flo");
    let c = cpath(&path);
    let uv: Vec<f32> = (0..2 * 3 * 5).map(|i| i as f32 * 0.25 - 3.0).collect();
    assert_eq!(unsafe { ddc_flo_write(c.as_ptr(), uv.as_ptr(), 3, 5) }, DdcStatus::Ok);
    let (mut h, mut w) = (0usize, 0usize);
    assert_eq!(unsafe { ddc_flo_dims(c.as_ptr(), &mut h, &mut w) }, DdcStatus::Ok);
    assert_eq!((h, w), (3, 5));
    let mut back = vec![0.0f32; 2 * h * w];
    assert_eq!(unsafe { ddc_flo_read(c.as_ptr(), back.as_mut_ptr(), back.len()) }, DdcStatus::Ok);
    assert_eq!(back, uv);

    let mut short = vec![0.0f32; 4];
    assert_eq!(unsafe { ddc_flo_read(c.as_ptr(), short.as_mut_ptr(), 4) }, DdcStatus::Data);
    assert!(last_error().contains("buffer holds 4"), "{}", last_error());
}

#[test]
fn errors_map_to_status_codes() {
    let mut m = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { ddc_model_load(missing.as_ptr(), &mut m) }, DdcStatus::Data);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { ddc_model_load(ptr::null(), &mut m) }, DdcStatus::NullArgument);

    let not_flo = tmp("bad.flo");
    std::fs::write(&not_flo, [0u8; 16]).unwrap();
    let (mut h, mut w) = (0usize, 0usize);
    assert_eq!(unsafe { ddc_flo_dims(cpath(&not_flo).as_ptr(), &mut h, &mut w) }, DdcStatus::Data);
    assert_eq!(last_error(), "not a flo file");
}

#[test]
fn save_load_and_infer() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ddc_model_new_default(3, &mut m) }, DdcStatus::Ok);
    let path = tmp("model.ckpt");
    let c = cpath(&path);
    assert_eq!(unsafe { ddc_model_save(m, c.as_ptr()) }, DdcStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { ddc_model_load(c.as_ptr(), &mut loaded) }, DdcStatus::Ok);

    let (h, w) = (16usize, 16usize);
    let f1: Vec<f32> = (0..3 * h * w).map(|i| ((i * 7) % 11) as f32 / 11.0).collect();
    let f2: Vec<f32> = (0..3 * h * w).map(|i| ((i * 5) % 13) as f32 / 13.0).collect();
    let mut a = vec![0.0f32; 2 * h * w];
    let mut b = vec![1.0f32; 2 * h * w];
    unsafe {
        assert_eq!(ddc_model_infer(m, f1.as_ptr(), f2.as_ptr(), h, w, a.as_mut_ptr()), DdcStatus::Ok);
        assert_eq!(ddc_model_infer(loaded, f1.as_ptr(), f2.as_ptr(), h, w, b.as_mut_ptr()), DdcStatus::Ok);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite()));

    let mut out = vec![0.0f32; 2 * 14 * 14];
    let status = unsafe { ddc_model_infer(m, f1.as_ptr(), f2.as_ptr(), 14, 14, out.as_mut_ptr()) };
    assert_eq!(status, DdcStatus::Data);
    assert!(last_error().contains("multiple of 4"));
    unsafe {
        ddc_model_free(m);
        ddc_model_free(loaded);
    }
}

#[test]
fn header_declares_the_api_and_parses_as_c() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/ddcnet.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ddc_last_error",
        "ddc_model_new_default",
        "ddc_model_load",
        "ddc_model_save",
        "ddc_model_free",
        "ddc_model_param_count",
        "ddc_model_infer",
        "ddc_flo_dims",
        "ddc_flo_read",
        "ddc_flo_write",
        "DDC_STATUS_NUMERIC = 4",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).status() else {
        eprintln!("no C compiler on PATH; header syntax not checked");
        return;
    };
    assert!(status.success());
}
