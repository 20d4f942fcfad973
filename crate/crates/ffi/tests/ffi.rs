use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use glsim_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(glsim_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn default_config() -> GlsimConfig {
    let mut cfg = std::mem::MaybeUninit::<GlsimConfig>::uninit();
    assert_eq!(unsafe { glsim_config_default(cfg.as_mut_ptr()) }, GlsimStatus::Ok);
    unsafe { cfg.assume_init() }
}

fn new_sim(cfg: &GlsimConfig, stream: u64) -> *mut GlsimSimulator {
    let mut sim = ptr::null_mut();
    let st = unsafe { glsim_simulator_new(cfg, ptr::null(), ptr::null(), stream, &mut sim) };
    assert_eq!(st, GlsimStatus::Ok, "{}", last_error());
    sim
}

fn state(sim: *const GlsimSimulator, k: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut c, mut s) = (vec![0.0; k], vec![0.0; k]);
    let st = unsafe { glsim_simulator_state(sim, c.as_mut_ptr(), s.as_mut_ptr(), k) };
    assert_eq!(st, GlsimStatus::Ok);
    (c, s)
}

#[test]
fn same_stream_same_path() {
    let cfg = default_config();
    let a = new_sim(&cfg, 3);
    let b = new_sim(&cfg, 3);
    let c = new_sim(&cfg, 4);
    for s in [a, b, c] {
        assert_eq!(unsafe { glsim_simulator_step(s, 50) }, GlsimStatus::Ok);
    }
    assert_eq!(state(a, cfg.modes), state(b, cfg.modes));
    assert_ne!(state(a, cfg.modes), state(c, cfg.modes));
    let mut t = 0.0;
    assert_eq!(unsafe { glsim_simulator_time(a, &mut t) }, GlsimStatus::Ok);
    assert!((t - 0.05).abs() < 1e-12);
    for s in [a, b, c] {
        unsafe { glsim_simulator_free(s) };
    }
    unsafe { glsim_simulator_free(ptr::null_mut()) };
}

#[test]
fn matches_the_library() {
    let cfg = default_config();
    let sim = new_sim(&cfg, 0);
    assert_eq!(unsafe { glsim_simulator_step(sim, 200) }, GlsimStatus::Ok);
    let mut norms = GlsimNorms::default();
    assert_eq!(unsafe { glsim_simulator_norms(sim, &mut norms) }, GlsimStatus::Ok);

    let lib_cfg = glsim::SimConfig::from(&cfg);
    let mut native = glsim::Simulator::new(glsim::SpectralField::zeros(cfg.modes), &lib_cfg).unwrap();
    let mut rng = glsim::SeedStream::new(cfg.seed, 0).rng();
    for _ in 0..200 {
        native.step(&mut rng).unwrap();
    }
    assert_eq!(norms.h, native.norms().h);
    assert_eq!(norms.hdelta, native.norms().hdelta);
    unsafe { glsim_simulator_free(sim) };
}

#[test]
fn errors_are_reported() {
    let mut cfg = default_config();
    cfg.alpha = 2.5;
    let mut sim = ptr::null_mut();
    let st = unsafe { glsim_simulator_new(&cfg, ptr::null(), ptr::null(), 0, &mut sim) };
    assert_eq!(st, GlsimStatus::InvalidParameter);
    assert!(last_error().contains("alpha"));
    assert!(sim.is_null());

    assert_eq!(unsafe { glsim_simulator_step(ptr::null_mut(), 1) }, GlsimStatus::NullPointer);
    assert_eq!(glsim_check_admissible(1.8, 0.8), GlsimStatus::Ok);
    assert!(last_error().is_empty());
    assert_eq!(glsim_check_admissible(1.8, 1.2), GlsimStatus::InvalidParameter);
    assert!(last_error().contains("beta"));

    let mut g = 0.0;
    assert_eq!(unsafe { glsim_riccati_explicit(2.0, 1.0, 1.0, 1.5, &mut g) }, GlsimStatus::InvalidParameter);
    assert_eq!(unsafe { glsim_halfinterval_bound(0.5, 1.0, &mut g) }, GlsimStatus::InvalidParameter);

    let cfg = default_config();
    let one = [1.0];
    let st = unsafe { glsim_simulator_new(&cfg, one.as_ptr(), ptr::null(), 0, &mut sim) };
    assert_eq!(st, GlsimStatus::NullPointer);
}

#[test]
fn scalar_functions() {
    let mut g = 0.0;
    assert_eq!(unsafe { glsim_riccati_explicit(2.0, 1.0, 1.0, 1.0, &mut g) }, GlsimStatus::Ok);
    let e2 = 1f64.exp().powi(2);
    assert!((g - (1.0 + 2.0 / (3.0 * e2 - 1.0))).abs() < 1e-15);
    assert_eq!(unsafe { glsim_halfinterval_bound(1.0, 1.0, &mut g) }, GlsimStatus::Ok);
    assert!((g - (1.0 + 2.0 / 1f64.exp_m1())).abs() < 1e-15);

    let (c, s) = ([3.0, 0.0], [0.0, 4.0]);
    assert_eq!(
        unsafe { glsim_field_norm_sobolev(c.as_ptr(), s.as_ptr(), 2, 0.0, &mut g) },
        GlsimStatus::Ok
    );
    assert!((g - 5.0).abs() < 1e-12);

    let mut draws = vec![0.0; 1000];
    let st = unsafe { glsim_sample_stable(2.0, 7, 0, draws.len(), draws.as_mut_ptr()) };
    assert_eq!(st, GlsimStatus::Ok);
    let var = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
    assert!((var - 2.0).abs() < 0.3);
    let version = unsafe { CStr::from_ptr(glsim_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn cc_available() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn header_is_valid_c() {
    if !cc_available() {
        eprintln!("no C compiler; skipped");
        return;
    }
    let header = crate_dir().join("include/glsim.h");
    assert!(header.exists(), "header not generated");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

/// Directory holding this build's `libglsim_ffi.a`.
fn static_lib_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    dir.join("libglsim_ffi.a").exists().then(|| dir.to_path_buf())
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib_dir) = static_lib_dir().filter(|_| cc_available()) else {
        eprintln!("no static library or C compiler; skipped");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror"])
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/smoke.c"))
        .arg(lib_dir.join("libglsim_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(Path::new(&exe)).output().unwrap();
    assert!(
        run.status.success(),
        "{}{}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
