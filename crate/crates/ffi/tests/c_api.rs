use std::ffi::{c_char, CString};
use std::ptr;

use dais_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 512];
    let n = unsafe { dais_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    buf.truncate(n.min(511));
    String::from_utf8(buf).unwrap()
}

fn gaussian(mean: &[f64], std: &[f64], log_z: f64) -> *mut DaisTarget {
    let mut t = ptr::null_mut();
    let s = unsafe { dais_target_gaussian(mean.as_ptr(), std.as_ptr(), mean.len(), log_z, &mut t) };
    assert_eq!(s, DaisStatus::Ok, "{}", last_error());
    t
}

#[test]
fn gaussian_log_density_and_grad() {
    let t = gaussian(&[1.0, -1.0], &[0.5, 2.0], 0.3);
    let z = [1.5, 1.0];
    let (mut lp, mut g) = (0.0, [0.0; 2]);
    let s = unsafe { dais_target_log_density(t, z.as_ptr(), 2, &mut lp, g.as_mut_ptr()) };
    assert_eq!(s, DaisStatus::Ok);
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let want = 0.3 - ln2pi - 0.5f64.ln() - 2.0f64.ln() - 0.5 * (1.0 + 1.0);
    assert!((lp - want).abs() < 1e-12, "{lp} vs {want}");
    assert!((g[0] + 2.0).abs() < 1e-12 && (g[1] + 0.5).abs() < 1e-12, "{g:?}");
    let mut d = 0;
    assert_eq!(unsafe { dais_target_dim(t, &mut d) }, DaisStatus::Ok);
    assert_eq!(d, 2);
    unsafe { dais_target_free(t) };
}

#[test]
fn errors_set_status_and_message() {
    let mut t = ptr::null_mut();
    let s = unsafe { dais_target_gaussian(ptr::null(), ptr::null(), 1, 0.0, &mut t) };
    assert_eq!(s, DaisStatus::NullPointer);
    assert!(last_error().contains("mean"));
    assert!(t.is_null());

    let s = unsafe { dais_target_bimodal(0, &mut t) };
    assert_eq!(s, DaisStatus::InvalidArgument);
    assert!(!last_error().is_empty());

    let t = gaussian(&[0.0], &[1.0], 0.0);
    let z = [0.0, 0.0];
    let mut lp = 0.0;
    let s = unsafe { dais_target_log_density(t, z.as_ptr(), 2, &mut lp, ptr::null_mut()) };
    assert_eq!(s, DaisStatus::InvalidArgument);
    assert!(last_error().contains("dimension"));

    let s = unsafe { dais_target_log_density(t, z.as_ptr(), 1, &mut lp, ptr::null_mut()) };
    assert_eq!(s, DaisStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe { dais_target_free(t) };

    let path = CString::new("/nonexistent/schema.toml").unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { dais_target_logreg(path.as_ptr(), &mut t) }, DaisStatus::Io);

    unsafe {
        dais_target_free(ptr::null_mut());
        dais_model_free(ptr::null_mut());
    }
}

#[test]
fn error_message_truncates() {
    let mut t = ptr::null_mut();
    unsafe { dais_target_bimodal(0, &mut t) };
    let full = last_error();
    let mut buf = [0x7fu8; 5];
    let n = unsafe { dais_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    assert_eq!(n, full.len());
    assert_eq!(&buf[..4], &full.as_bytes()[..4]);
    assert_eq!(buf[4], 0);
}

#[test]
fn theory_wrappers() {
    let (m0, s0, mf, sf) = ([0.0], [1.0], [1.0], [0.5]);
    let mut kl = 0.0;
    let s = unsafe { dais_symmetrized_kl(m0.as_ptr(), s0.as_ptr(), mf.as_ptr(), sf.as_ptr(), 1, &mut kl) };
    assert_eq!(s, DaisStatus::Ok);
    // ½[(ln 2 + 1.25/2 − ½) + (−ln 2 + 2/0.5 − ½)]
    assert!((kl - 1.8125).abs() < 1e-12, "{kl}");

    let mut gap = 0.0;
    let s = unsafe { dais_perfect_gap(m0.as_ptr(), s0.as_ptr(), m0.as_ptr(), s0.as_ptr(), 1, 0.7, 8, &mut gap) };
    assert_eq!(s, DaisStatus::Ok);
    assert!(gap.abs() < 1e-12, "{gap}");

    let mut prev = f64::INFINITY;
    for k in [4, 16, 64] {
        let s = unsafe { dais_perfect_gap(m0.as_ptr(), s0.as_ptr(), mf.as_ptr(), sf.as_ptr(), 1, 0.0, k, &mut gap) };
        assert_eq!(s, DaisStatus::Ok);
        assert!(gap > 0.0 && gap < prev);
        assert!(k as f64 * gap > kl * 0.9, "K·gap {} vs {kl}", k as f64 * gap);
        prev = gap;
    }

    let bad = [-1.0];
    let s = unsafe { dais_symmetrized_kl(m0.as_ptr(), bad.as_ptr(), mf.as_ptr(), sf.as_ptr(), 1, &mut kl) };
    assert_ne!(s, DaisStatus::Ok);
}

#[test]
fn train_recovers_gaussian() {
    let t = gaussian(&[1.0, -0.5], &[0.5, 1.5], 2.0);
    let mut opts = std::mem::MaybeUninit::<DaisTrainOptions>::uninit();
    assert_eq!(unsafe { dais_train_options_default(opts.as_mut_ptr()) }, DaisStatus::Ok);
    let mut opts = unsafe { opts.assume_init() };
    opts.method = DaisMethod::Vi;
    opts.n_particles = 16;
    opts.lr = 2e-2;
    opts.iterations = 1500;
    opts.seed = 3;
    let mut m = ptr::null_mut();
    let s = unsafe { dais_train(t, &opts, ptr::null(), &mut m) };
    assert_eq!(s, DaisStatus::Ok, "{}", last_error());

    let (mut mean, mut std) = ([0.0; 2], [0.0; 2]);
    assert_eq!(unsafe { dais_model_q(m, mean.as_mut_ptr(), std.as_mut_ptr(), 2) }, DaisStatus::Ok);
    assert!((mean[0] - 1.0).abs() < 0.1 && (mean[1] + 0.5).abs() < 0.2, "{mean:?}");
    assert!((std[0] - 0.5).abs() < 0.1 && (std[1] - 1.5).abs() < 0.3, "{std:?}");

    let mut bound = 0.0;
    assert_eq!(unsafe { dais_model_bound(m, t, 16, 50, 0, &mut bound) }, DaisStatus::Ok);
    assert!(bound <= 2.0 + 0.05 && bound > 1.9, "{bound}");
    let mut obj = 0.0;
    assert_eq!(unsafe { dais_model_final_objective(m, &mut obj) }, DaisStatus::Ok);
    assert!(obj.is_finite());

    assert_eq!(unsafe { dais_model_q(m, mean.as_mut_ptr(), std.as_mut_ptr(), 3) }, DaisStatus::InvalidArgument);
    assert_eq!(unsafe { dais_model_bound(m, t, 0, 1, 0, &mut bound) }, DaisStatus::InvalidArgument);
    unsafe {
        dais_model_free(m);
        dais_target_free(t);
    }
}

#[test]
fn train_dais_on_bimodal_and_gp() {
    let mut opts = std::mem::MaybeUninit::<DaisTrainOptions>::uninit();
    unsafe { dais_train_options_default(opts.as_mut_ptr()) };
    let mut opts = unsafe { opts.assume_init() };
    opts.n_particles = 4;
    opts.k = 4;
    opts.iterations = 50;
    for make in [
        (|out: *mut *mut DaisTarget| unsafe { dais_target_bimodal(2, out) }) as fn(*mut *mut DaisTarget) -> DaisStatus,
        |out| unsafe { dais_target_gp(0.8, 5, 1, out) },
    ] {
        let mut t = ptr::null_mut();
        assert_eq!(make(&mut t), DaisStatus::Ok, "{}", last_error());
        let mut d = 0;
        unsafe { dais_target_dim(t, &mut d) };
        let mut m = ptr::null_mut();
        let init = vec![0.5; d];
        assert_eq!(unsafe { dais_train(t, &opts, init.as_ptr(), &mut m) }, DaisStatus::Ok, "{}", last_error());
        let mut b = 0.0;
        assert_eq!(unsafe { dais_model_bound(m, t, 4, 4, 1, &mut b) }, DaisStatus::Ok);
        assert!(b.is_finite());
        unsafe {
            dais_model_free(m);
            dais_target_free(t);
        }
    }
}

#[test]
fn shipped_logreg_schema_loads() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/ionosphere.toml");
    let c = CString::new(path).unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { dais_target_logreg(c.as_ptr(), &mut t) }, DaisStatus::Ok, "{}", last_error());
    let mut d = 0;
    unsafe { dais_target_dim(t, &mut d) };
    assert_eq!(d, 35);
    let z = vec![0.0; d];
    let mut lp = 0.0;
    assert_eq!(unsafe { dais_target_log_density(t, z.as_ptr(), d, &mut lp, ptr::null_mut()) }, DaisStatus::Ok);
    assert!(lp.is_finite());
    unsafe { dais_target_free(t) };
}
