use std::ffi::{CStr, CString};
use std::ptr;

use relaxmcr_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::os::raw::c_char; 256];
    unsafe {
        rmcr_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(rmcr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn nnls_clamps_negative_direction() {
    // min ||x - b|| with b = (1, -2): solution (1, 0), residual 2.
    let a = [1.0, 0.0, 0.0, 1.0];
    let b = [1.0, -2.0];
    let mut x = [f64::NAN; 2];
    let mut r = 0.0;
    let st = unsafe { rmcr_nnls(a.as_ptr(), 2, 2, b.as_ptr(), x.as_mut_ptr(), &mut r) };
    assert_eq!(st, RmcrStatus::Ok);
    assert_eq!(x, [1.0, 0.0]);
    assert!((r - 2.0).abs() < 1e-12);
}

#[test]
fn nnls_row_major_layout() {
    // A = [[1, 2], [0, 1], [0, 0]] row-major, b = A (1, 1).
    let a = [1.0, 2.0, 0.0, 1.0, 0.0, 0.0];
    let b = [3.0, 1.0, 0.0];
    let mut x = [0.0; 2];
    let st = unsafe { rmcr_nnls(a.as_ptr(), 3, 2, b.as_ptr(), x.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, RmcrStatus::Ok);
    assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
}

#[test]
fn null_and_degenerate_arguments_set_codes_and_messages() {
    let mut x = [0.0; 1];
    let st = unsafe { rmcr_nnls(ptr::null(), 1, 1, ptr::null(), x.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, RmcrStatus::NullPointer);
    assert!(!last_error().is_empty());

    let (mut ev, mut lof) = (0.0, 0.0);
    let st = unsafe { rmcr_fit_diagnostics(0.0, 1.0, &mut ev, &mut lof) };
    assert_eq!(st, RmcrStatus::Numeric);
    assert!(!last_error().is_empty());
}

#[test]
fn error_message_truncates_and_reports_length() {
    let st = unsafe { rmcr_cube_read(ptr::null(), ptr::null_mut()) };
    assert_ne!(st, RmcrStatus::Ok);
    let full = unsafe { rmcr_last_error_message(ptr::null_mut(), 0) };
    let mut small = [0x7f as std::os::raw::c_char; 4];
    let n = unsafe { rmcr_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(n, full);
    assert_eq!(small[3], 0);
}

#[test]
fn fit_diagnostics_values() {
    let (mut ev, mut lof) = (0.0, 0.0);
    let st = unsafe { rmcr_fit_diagnostics(1.0, 0.002, &mut ev, &mut lof) };
    assert_eq!(st, RmcrStatus::Ok);
    assert!((ev - 99.8).abs() < 1e-12);
    assert!((lof - 100.0 * 0.002f64.sqrt()).abs() < 1e-12);
}

#[test]
fn ilt_finds_single_pool() {
    let te: Vec<f64> = (1..=32).map(|m| 5.0 * m as f64).collect();
    let sig: Vec<f64> = te.iter().map(|t| (-t / 40.0).exp()).collect();
    let n = 64;
    let (mut t2, mut amp, mut lam) = (vec![0.0; n], vec![0.0; n], 0.0);
    let st = unsafe {
        rmcr_ilt_solve(sig.as_ptr(), te.as_ptr(), te.len(), 1.0, 1000.0, n, 1e-3, t2.as_mut_ptr(), amp.as_mut_ptr(), &mut lam)
    };
    assert_eq!(st, RmcrStatus::Ok, "{}", last_error());
    assert!(lam > 0.0);
    let peak = (0..n).max_by(|&a, &b| amp[a].partial_cmp(&amp[b]).unwrap()).unwrap();
    assert!((t2[peak] / 40.0 - 1.0).abs() < 0.15, "peak at {}", t2[peak]);
}

#[test]
fn undersized_buffer_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CString::new(r#"{"width": 8, "height": 8, "pixel_size_mm": 0.7, "n_echoes": 4, "times_h": [1.0, 2.0]}"#).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { rmcr_phantom_write(spec.as_ptr(), out.as_ptr()) }, RmcrStatus::Ok, "{}", last_error());
    let path = CString::new(dir.path().join("frame_000.cube").to_str().unwrap()).unwrap();
    let mut cube = ptr::null_mut();
    assert_eq!(unsafe { rmcr_cube_read(path.as_ptr(), &mut cube) }, RmcrStatus::Ok);
    let mut small = [0.0; 3];
    assert_eq!(unsafe { rmcr_cube_data(cube, small.as_mut_ptr(), small.len()) }, RmcrStatus::BufferTooSmall);
    unsafe { rmcr_cube_free(cube) };
}

#[test]
fn phantom_cube_and_decomposition_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CString::new(r#"{"width": 24, "height": 24, "pixel_size_mm": 0.25, "times_h": [0.5, 4.0, 8.0, 14.0, 20.0]}"#).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { rmcr_phantom_write(spec.as_ptr(), out.as_ptr()) }, RmcrStatus::Ok, "{}", last_error());

    let path = CString::new(dir.path().join("frame_002.cube").to_str().unwrap()).unwrap();
    let mut cube = ptr::null_mut();
    assert_eq!(unsafe { rmcr_cube_read(path.as_ptr(), &mut cube) }, RmcrStatus::Ok);
    let (mut w, mut h, mut d) = (0, 0, 0);
    assert_eq!(unsafe { rmcr_cube_dims(cube, &mut w, &mut h, &mut d) }, RmcrStatus::Ok);
    assert_eq!((w, h, d), (24, 24, 32));
    let mut data = vec![0.0; w * h * d];
    assert_eq!(unsafe { rmcr_cube_data(cube, data.as_mut_ptr(), data.len()) }, RmcrStatus::Ok);
    assert!(data.iter().all(|v| v.is_finite()));
    unsafe { rmcr_cube_free(cube) };

    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"manifest": "manifest.json", "mask": {"method": "fixed_fraction", "fraction": 0.05},
            "n_components": 3, "simplisma_offset": 0.5, "output_dir": "results"}"#,
    )
    .unwrap();
    let cfg = CString::new(config.to_str().unwrap()).unwrap();
    let mut dec = ptr::null_mut();
    assert_eq!(unsafe { rmcr_decompose(cfg.as_ptr(), 1, &mut dec) }, RmcrStatus::Ok, "{}", last_error());
    let (mut rows, mut echoes, mut k) = (0, 0, 0);
    assert_eq!(unsafe { rmcr_decomposition_dims(dec, &mut rows, &mut echoes, &mut k) }, RmcrStatus::Ok);
    assert_eq!((echoes, k), (32, 3));
    let mut s = vec![0.0; echoes * k];
    assert_eq!(unsafe { rmcr_decomposition_spectra(dec, s.as_mut_ptr(), s.len()) }, RmcrStatus::Ok);
    // Row-major: column q of S has unit norm.
    for q in 0..k {
        let norm: f64 = (0..echoes).map(|m| s[m * k + q].powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
    let mut c = vec![0.0; rows * k];
    assert_eq!(unsafe { rmcr_decomposition_concentrations(dec, c.as_mut_ptr(), c.len()) }, RmcrStatus::Ok);
    assert!(c.iter().all(|&v| v >= 0.0));
    let (mut ev, mut lof, mut conv) = (0.0, 0.0, false);
    assert_eq!(unsafe { rmcr_decomposition_fit(dec, &mut ev, &mut lof, &mut conv) }, RmcrStatus::Ok);
    assert!(ev > 95.0 && ev <= 100.0);
    assert!((lof - 100.0 * (1.0 - ev / 100.0).sqrt()).abs() < 1e-9);
    unsafe { rmcr_decomposition_free(dec) };
    assert!(dir.path().join("results").join("diagnostics.json").exists());
}

#[test]
fn missing_config_is_io_error() {
    let cfg = CString::new("/nonexistent/run.json").unwrap();
    let mut dec = ptr::null_mut();
    let st = unsafe { rmcr_decompose(cfg.as_ptr(), 1, &mut dec) };
    assert_eq!(st, RmcrStatus::InvalidInput);
    assert!(dec.is_null());
    assert!(last_error().contains("run.json"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/relaxmcr.h")).unwrap();
    for name in [
        "rmcr_last_error_message",
        "rmcr_version",
        "rmcr_nnls",
        "rmcr_fit_diagnostics",
        "rmcr_ilt_solve",
        "rmcr_cube_read",
        "rmcr_cube_dims",
        "rmcr_cube_data",
        "rmcr_cube_free",
        "rmcr_phantom_write",
        "rmcr_decompose",
        "rmcr_decomposition_dims",
        "rmcr_decomposition_spectra",
        "rmcr_decomposition_concentrations",
        "rmcr_decomposition_fit",
        "rmcr_decomposition_free",
        "RMCR_STATUS_BUFFER_TOO_SMALL",
        "typedef struct RmcrCube RmcrCube",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", concat!(env!("CARGO_MANIFEST_DIR"), "/include/relaxmcr.h")])
        .status()
    else {
        eprintln!("no C compiler available; skipping");
        return;
    };
    assert!(status.success());
}
