use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use thermocloak_ffi::*;

fn last_error() -> String {
    let p = tc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn diagonalize_and_characteristic() {
    let (mut a, mut b, mut t) = (0.0, 0.0, 0.0);
    let s = unsafe { tc_diagonalize(3.0, 1.0, 3.0, &mut a, &mut b, &mut t) };
    assert_eq!(s, TcStatus::Ok);
    assert!((a - 4.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && (t - 45.0).abs() < 1e-9);
    assert_eq!(tc_characteristic(1.0, 0.2), 1.0);
    assert_eq!(tc_characteristic(-1.0, 0.2), 0.0);
    let s = unsafe { tc_diagonalize(1.0, 0.0, 1.0, ptr::null_mut(), &mut b, &mut t) };
    assert_eq!(s, TcStatus::NullPointer);
    assert!(last_error().contains("kbar1"));
}

#[test]
fn cell_homogenization() {
    let mut cell = ptr::null_mut();
    assert_eq!(unsafe { tc_cell_new(16, &mut cell) }, TcStatus::Ok);
    let ne = unsafe { tc_cell_num_elements(cell) };
    let nn = unsafe { tc_cell_num_nodes(cell) };
    assert_eq!((ne, nn), (512, 289));

    let mut k = [0.0; 3];
    let chi = vec![1.0; ne];
    assert_eq!(unsafe { tc_cell_homogenize(cell, chi.as_ptr(), ne, 386.0, 0.15, k.as_mut_ptr()) }, TcStatus::Ok);
    assert!((k[0] - 386.0).abs() < 1e-8 && k[1].abs() < 1e-8 && (k[2] - 386.0).abs() < 1e-8);

    let phi = vec![-1.0; nn];
    let s = unsafe { tc_cell_homogenize_phi(cell, phi.as_ptr(), nn, 0.2, 386.0, 0.15, k.as_mut_ptr()) };
    assert_eq!(s, TcStatus::Ok);
    assert!((k[0] - 0.15).abs() < 1e-10);

    let s = unsafe { tc_cell_homogenize(cell, chi.as_ptr(), ne - 1, 386.0, 0.15, k.as_mut_ptr()) };
    assert_eq!(s, TcStatus::InvalidInput);
    let s = unsafe { tc_cell_homogenize(cell, chi.as_ptr(), ne, -1.0, 0.15, k.as_mut_ptr()) };
    assert_ne!(s, TcStatus::Ok);
    unsafe { tc_cell_free(cell) };
    unsafe { tc_cell_free(ptr::null_mut()) };

    let mut bad = ptr::null_mut();
    assert_ne!(unsafe { tc_cell_new(7, &mut bad) }, TcStatus::Ok);
    assert!(bad.is_null());
}

fn small_config() -> CString {
    let text = thermocloak::config::bundled("scenario_w1")
        .unwrap()
        .replace("cell_resolution = 64", "cell_resolution = 16")
        .replace("h_design = 0.04", "h_design = 0.2")
        .replace("h_far = 0.2", "h_far = 0.5")
        .replace("max_iter = 150", "max_iter = 4");
    CString::new(text).unwrap()
}

#[test]
fn run_lifecycle_and_resume() {
    let cfg = small_config();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { tc_run_from_config(cfg.as_ptr(), &mut run) }, TcStatus::Ok);
    let mut v = [0.0; 4];
    let mut it = 99usize;
    assert_eq!(unsafe { tc_run_objectives(run, v.as_mut_ptr(), &mut it) }, TcStatus::Ok);
    assert_eq!(it, 0);
    assert!(v[0].is_nan());

    let mut done = 0;
    assert_eq!(unsafe { tc_run_step(run, &mut done) }, TcStatus::Ok);
    assert_eq!(unsafe { tc_run_step(run, &mut done) }, TcStatus::Ok);
    assert_eq!(done, 0);
    let tmp = tempfile::tempdir().unwrap();
    let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tc_run_checkpoint(run, dir.as_ptr()) }, TcStatus::Ok);
    assert_eq!(unsafe { tc_run_to_end(run, ptr::null()) }, TcStatus::Ok);
    let mut full = [0.0; 4];
    assert_eq!(unsafe { tc_run_objectives(run, full.as_mut_ptr(), &mut it) }, TcStatus::Ok);
    assert_eq!(it, 4);
    assert!(full[0] < full[2]);
    let mut k = [0.0; 3];
    assert_eq!(unsafe { tc_run_tensor(run, 7, k.as_mut_ptr()) }, TcStatus::Ok);
    assert!(k[0] > 0.0 && k[2] > 0.0);
    assert_eq!(unsafe { tc_run_tensor(run, 8, k.as_mut_ptr()) }, TcStatus::InvalidInput);
    unsafe { tc_run_free(run) };

    let mut resumed = ptr::null_mut();
    assert_eq!(unsafe { tc_run_resume(dir.as_ptr(), &mut resumed) }, TcStatus::Ok);
    assert_eq!(unsafe { tc_run_to_end(resumed, ptr::null()) }, TcStatus::Ok);
    let mut again = [0.0; 4];
    assert_eq!(unsafe { tc_run_objectives(resumed, again.as_mut_ptr(), ptr::null_mut()) }, TcStatus::Ok);
    assert_eq!(again.map(f64::to_bits), full.map(f64::to_bits));
    unsafe { tc_run_free(resumed) };
}

#[test]
fn config_errors_map_to_status() {
    let mut run = ptr::null_mut();
    let text = CString::new("[scenario]\nw = 2.0\n").unwrap();
    assert_eq!(unsafe { tc_run_from_config(text.as_ptr(), &mut run) }, TcStatus::Config);
    assert!(run.is_null());
    assert!(last_error().contains("geometry"));
    let name = CString::new("no_such").unwrap();
    assert_eq!(unsafe { tc_run_bundled(name.as_ptr(), &mut run) }, TcStatus::Config);
    assert_eq!(unsafe { tc_run_from_config(ptr::null(), &mut run) }, TcStatus::NullPointer);
    let dir = CString::new("/nonexistent/checkpoint").unwrap();
    assert_eq!(unsafe { tc_run_resume(dir.as_ptr(), &mut run) }, TcStatus::Io);
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/thermocloak.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["tc_cell_new", "tc_cell_homogenize_phi", "tc_run_resume", "tc_run_objectives", "tc_last_error", "TC_STATUS_PANIC"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    // only when a C compiler is around
    let Ok(st) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        return;
    };
    assert!(st.success());
}
