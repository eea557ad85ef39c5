use std::ffi::CStr;
use std::ptr;

use rsb_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe {
        rsb_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn sk(beta: f64, j0: f64) -> *mut RsbModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { rsb_model_new_sk(beta, j0, 1.0, &mut m) }, RsbStatus::Ok);
    m
}

#[test]
fn pressure_matches_core() {
    let model = sk(1.5, 0.5);
    let qs = [0.2, 0.6];
    let thetas = [0.4];
    let mut p = 0.0;
    let st = unsafe { rsb_pressure(model, 1, 0.3, qs.as_ptr(), thetas.as_ptr(), &mut p) };
    assert_eq!(st, RsbStatus::Ok);
    let params = rsb_core::ModelParams::Sk(rsb_core::SkParams::new(1.5, 0.5, 1.0).unwrap());
    let a = rsb_core::RsbAnsatz::sk(0.3, qs.to_vec(), thetas.to_vec());
    let expect =
        rsb_core::solver::model_pressure(&params, &a, &rsb_core::QuadratureSpec::default()).unwrap();
    assert_eq!(p, expect);
    unsafe { rsb_model_free(model) };
}

#[test]
fn errors_map_to_codes_and_messages() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { rsb_model_new_hopfield(1.0, -0.1, &mut m) }, RsbStatus::InvalidParameter);
    assert!(m.is_null());
    assert!(last_error().contains("alpha"), "{}", last_error());

    let model = sk(1.0, 0.0);
    let bad = [0.7, 0.2];
    let mut p = 0.0;
    let st = unsafe { rsb_pressure(model, 1, 0.0, bad.as_ptr(), [0.5].as_ptr(), &mut p) };
    assert_eq!(st, RsbStatus::OrderingViolation);
    let st = unsafe { rsb_pressure(model, 0, 0.0, ptr::null(), ptr::null(), &mut p) };
    assert_eq!(st, RsbStatus::NullPointer);
    assert_eq!(unsafe { rsb_model_set_nodes(model, 0) }, RsbStatus::InvalidParameter);
    assert_eq!(unsafe { rsb_model_set_solver(model, 1.5, 1e-10, 10) }, RsbStatus::InvalidParameter);
    unsafe { rsb_model_free(model) };
}

#[test]
fn hopfield_divergence_code() {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { rsb_model_new_hopfield(3.0, 0.05, &mut model) }, RsbStatus::Ok);
    let mut p = 0.0;
    let st = unsafe { rsb_pressure(model, 0, 0.5, [0.1].as_ptr(), ptr::null(), &mut p) };
    assert_eq!(st, RsbStatus::SusceptibilityDivergence);
    unsafe { rsb_model_free(model) };
}

#[test]
fn solve_and_read_branches() {
    let model = sk(0.5, 0.0);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { rsb_solve(model, 0, ptr::null(), &mut sol) }, RsbStatus::Ok);
    let mut n = 0usize;
    assert_eq!(unsafe { rsb_solution_count(sol, &mut n) }, RsbStatus::Ok);
    assert!(n >= 1);
    let (mut m, mut q, mut p, mut r) = (1.0, [1.0], 0.0, 1.0);
    let st = unsafe { rsb_solution_branch(sol, 0, &mut m, q.as_mut_ptr(), &mut p, &mut r) };
    assert_eq!(st, RsbStatus::Ok);
    // paramagnet: log 2 + beta^2 / 4
    assert!((p - (std::f64::consts::LN_2 + 0.0625)).abs() < 1e-9, "{p}");
    assert!(m.abs() < 1e-8 && q[0].abs() < 1e-8);
    let st = unsafe { rsb_solution_branch(sol, n, &mut m, q.as_mut_ptr(), &mut p, &mut r) };
    assert_eq!(st, RsbStatus::IndexOutOfRange);

    let mut next_m = 0.0;
    let mut next_q = [0.0];
    let st = unsafe { rsb_sce_map(model, 0, 0.0, [0.0].as_ptr(), ptr::null(), &mut next_m, next_q.as_mut_ptr()) };
    assert_eq!(st, RsbStatus::Ok);
    assert_eq!((next_m, next_q[0]), (0.0, 0.0));
    unsafe {
        rsb_solution_free(sol);
        rsb_solution_free(ptr::null_mut());
        rsb_model_free(model);
        rsb_model_free(ptr::null_mut());
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(rsb_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rsb.h")).unwrap();
    for f in [
        "rsb_model_new_sk",
        "rsb_model_new_hopfield",
        "rsb_model_set_nodes",
        "rsb_model_set_solver",
        "rsb_model_free",
        "rsb_pressure",
        "rsb_sce_map",
        "rsb_solve",
        "rsb_solution_count",
        "rsb_solution_branch",
        "rsb_solution_free",
        "rsb_last_error_message",
        "rsb_version",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct RsbModel RsbModel;"));
}

#[test]
fn c_program_links_against_static_library() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("librsb_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = env!("CARGO_MANIFEST_DIR");
    let out = std::env::temp_dir().join(format!("rsb_smoke_{}", std::process::id()));
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I", &format!("{dir}/include")])
        .arg(format!("{dir}/tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C smoke program failed to compile");
    let run = std::process::Command::new(&out).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(run.status.success(), "smoke exited with {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
