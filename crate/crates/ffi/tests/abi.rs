use std::ffi::CStr;
use std::ptr;

use cvbell_ffi::*;

struct Rule(*mut CvbellRule);

impl Rule {
    fn new(order: usize) -> Self {
        let mut p = ptr::null_mut();
        assert_eq!(unsafe { cvbell_rule_new(order, &mut p) }, CvbellStatus::Ok);
        Self(p)
    }
}

impl Drop for Rule {
    fn drop(&mut self) {
        unsafe { cvbell_rule_free(self.0) }
    }
}

struct State(*mut CvbellState);

impl State {
    fn new(n: usize, r: usize, p: f64, eta: f64) -> Self {
        let mut s = ptr::null_mut();
        assert_eq!(unsafe { cvbell_state_new(n, r, p, eta, &mut s) }, CvbellStatus::Ok);
        Self(s)
    }
}

impl Drop for State {
    fn drop(&mut self) {
        unsafe { cvbell_state_free(self.0) }
    }
}

fn last_error() -> Option<String> {
    let p = cvbell_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn zero() -> CvbellResult {
    CvbellResult {
        lhs: 0.0,
        rhs: 0.0,
        ratio: 0.0,
        epsilon: 0.0,
        violates: false,
    }
}

#[test]
fn closed_forms_match_oracle() {
    let rule = Rule::new(200);
    let state = State::new(5, 2, 0.9, 0.9);
    for ineq in [
        CvbellInequality::Functional,
        CvbellInequality::Cfrd,
        CvbellInequality::Mk,
    ] {
        let (mut closed, mut exact) = (zero(), zero());
        assert_eq!(
            unsafe { cvbell_closed_form(ineq, 5, 0.9, 0.9, rule.0, &mut closed) },
            CvbellStatus::Ok
        );
        assert_eq!(
            unsafe { cvbell_oracle(ineq, state.0, rule.0, &mut exact) },
            CvbellStatus::Ok
        );
        assert!(((closed.ratio - exact.ratio) / exact.ratio).abs() < 1e-6, "{ineq:?}");
        assert!(last_error().is_none());
    }
}

#[test]
fn mk_closed_form_needs_no_rule() {
    let mut out = zero();
    assert_eq!(
        unsafe { cvbell_closed_form(CvbellInequality::Mk, 3, 1.0, 1.0, ptr::null(), &mut out) },
        CvbellStatus::Ok
    );
    assert!(out.violates && out.epsilon.is_nan());
}

#[test]
fn critical_values() {
    let rule = Rule::new(200);
    let (mut v, mut found) = (0.0, false);
    assert_eq!(
        unsafe { cvbell_critical(CvbellInequality::Mk, 3, 1.0, false, rule.0, &mut v, &mut found) },
        CvbellStatus::Ok
    );
    assert!(found && (v - 2f64.powf(-5.0 / 3.0) * std::f64::consts::PI).abs() < 1e-9);
    assert_eq!(
        unsafe { cvbell_critical(CvbellInequality::Functional, 4, 1.0, false, rule.0, &mut v, &mut found) },
        CvbellStatus::Ok
    );
    assert!(!found && v.is_nan());
    let mut product = 0.0;
    assert_eq!(unsafe { cvbell_mk_critical_product(3, &mut product) }, CvbellStatus::Ok);
    assert!((product - 2f64.powf(-5.0 / 3.0) * std::f64::consts::PI).abs() < 1e-15);
}

#[test]
fn errors_set_status_and_message() {
    let mut rule = ptr::null_mut();
    assert_eq!(unsafe { cvbell_rule_new(0, &mut rule) }, CvbellStatus::InvalidArgument);
    assert!(rule.is_null());
    assert!(last_error().unwrap().contains("order"));

    let mut out = zero();
    assert_eq!(
        unsafe { cvbell_closed_form(CvbellInequality::Functional, 6, 1.0, 1.0, ptr::null(), &mut out) },
        CvbellStatus::NullPointer
    );
    assert_eq!(
        unsafe { cvbell_mk_critical_product(2, ptr::null_mut()) },
        CvbellStatus::NullPointer
    );

    let mut state = ptr::null_mut();
    assert_eq!(
        unsafe { cvbell_state_new(20, 10, 1.0, 1.0, &mut state) },
        CvbellStatus::ResourceLimit
    );
    assert!(state.is_null());

    let mut product = 0.0;
    assert_eq!(unsafe { cvbell_mk_critical_product(2, &mut product) }, CvbellStatus::Ok);
    assert!(last_error().is_none());
}

#[test]
fn optimizer_fills_buffer() {
    let rule = Rule::new(200);
    let state = State::new(6, 3, 1.0, 1.0);
    let mut len = 0usize;
    let mut out = zero();
    assert_eq!(
        unsafe { cvbell_optimize(state.0, rule.0, ptr::null_mut(), 0, &mut len, &mut out) },
        CvbellStatus::BufferTooSmall
    );
    assert_eq!(len, 100);
    let mut values = vec![0.0; len];
    assert_eq!(
        unsafe { cvbell_optimize(state.0, rule.0, values.as_mut_ptr(), values.len(), &mut len, &mut out) },
        CvbellStatus::Ok
    );
    assert!((out.ratio - 1.78185565704).abs() < 1e-9);
    assert!((out.epsilon - 2.964836).abs() < 1e-3);
    assert!(values.iter().all(|v| v.is_finite()) && values[0] > 0.0);
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(cvbell_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn c_program_links_against_static_library() {
    let crate_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libcvbell_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let run = std::process::Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with(env!("CARGO_PKG_VERSION")));
}
