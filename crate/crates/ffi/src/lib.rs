//! C ABI over the `dais` crate.
//!
//! Targets and trained models are opaque heap handles released with their
//! `_free` function. Every call returns a [`DaisStatus`]; on failure the
//! message is kept per thread and read with [`dais_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use dais::distributions::{DiagGaussian, GaussianTarget, IsotropicPairMixture, Target};
use dais::estimators::elbo_iwvi;
use dais::inference::{bound_at, train, MassParam, Method, TrainConfig, TrainResult};
use dais::models::{BimodalSpec, DatasetSchema, GpSpec, GpTarget, LogRegSpec};
use dais::theory::{perfect_gap, symmetrized_kl_closed_form, GaussianPath};
use dais::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DaisStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DaisMethod {
    Vi = 0,
    Iwvi = 1,
    Dais = 2,
    Msc = 3,
}

impl From<DaisMethod> for Method {
    fn from(m: DaisMethod) -> Self {
        match m {
            DaisMethod::Vi => Method::Vi,
            DaisMethod::Iwvi => Method::Iwvi,
            DaisMethod::Dais => Method::Dais,
            DaisMethod::Msc => Method::Msc,
        }
    }
}

/// Training settings; fill with [`dais_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DaisTrainOptions {
    pub method: DaisMethod,
    pub n_particles: usize,
    pub k: usize,
    pub n_chains: usize,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Nonzero for a scalar mass `cI` instead of a diagonal.
    pub scalar_mass: i32,
}

enum TargetKind {
    Gaussian(GaussianTarget),
    Mixture(IsotropicPairMixture),
    Gp(Box<GpTarget>),
    LogReg(Box<LogRegSpec>),
}

/// Opaque target density.
pub struct DaisTarget(TargetKind);

/// Opaque trained model.
pub struct DaisModel {
    result: TrainResult,
    cfg: TrainConfig,
}

macro_rules! with_target {
    ($t:expr, |$x:ident| $body:expr) => {
        match &$t.0 {
            TargetKind::Gaussian($x) => $body,
            TargetKind::Mixture($x) => $body,
            TargetKind::Gp($x) => {
                let $x = $x.as_ref();
                $body
            }
            TargetKind::LogReg($x) => {
                let $x = $x.as_ref();
                $body
            }
        }
    };
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> DaisStatus {
    match e {
        Error::Config(_) | Error::DimensionMismatch { .. } | Error::Unsupported(_) => DaisStatus::InvalidArgument,
        Error::Io { .. } | Error::Parse { .. } | Error::Csv(_) => DaisStatus::Io,
        _ => DaisStatus::Numerical,
    }
}

enum Fail {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DaisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DaisStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DaisStatus::NullPointer
        }
        Ok(Err(Fail::Invalid(msg))) => {
            set_error(msg);
            DaisStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DaisStatus::Panic
        }
    }
}

unsafe fn slice_in<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn slice_out<'a>(p: *mut f64, n: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

fn boxed_target(kind: TargetKind) -> *mut DaisTarget {
    Box::into_raw(Box::new(DaisTarget(kind)))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dais_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// `f(z) = exp(log_z)·N(z; mean, diag(std²))`.
///
/// # Safety
/// `mean` and `std` must be valid for `d` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dais_target_gaussian(
    mean: *const f64,
    std: *const f64,
    d: usize,
    log_z: f64,
    out: *mut *mut DaisTarget,
) -> DaisStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if d == 0 {
            return Err(Fail::Invalid("d must be at least 1".into()));
        }
        let m = slice_in(mean, d, "mean")?;
        let s = slice_in(std, d, "std")?;
        let dist = DiagGaussian::from_std(m.to_vec(), s)?;
        *out = boxed_target(TargetKind::Gaussian(GaussianTarget::new(dist, log_z)));
        Ok(())
    })
}

/// Equal mixture of N(0, 0.25²I) and N(1, 0.25²I) in `d` dimensions.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dais_target_bimodal(d: usize, out: *mut *mut DaisTarget) -> DaisStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed_target(TargetKind::Mixture(BimodalSpec::new(d)?.target()?));
        Ok(())
    })
}

/// GP regression posterior over `d` random grid points with lengthscale
/// `rho`, data drawn from the prior with `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dais_target_gp(rho: f64, d: usize, seed: u64, out: *mut *mut DaisTarget) -> DaisStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (spec, _) = GpSpec::random(rho, d, seed)?;
        *out = boxed_target(TargetKind::Gp(Box::new(spec.target()?)));
        Ok(())
    })
}

/// Logistic regression posterior from a dataset schema file (TOML).
///
/// # Safety
/// `schema_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dais_target_logreg(schema_path: *const c_char, out: *mut *mut DaisTarget) -> DaisStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if schema_path.is_null() {
            return Err(Fail::Null("schema_path"));
        }
        let path = CStr::from_ptr(schema_path)
            .to_str()
            .map_err(|_| Fail::Invalid("schema path is not UTF-8".into()))?;
        let spec = DatasetSchema::from_file(Path::new(path))?.load()?;
        *out = boxed_target(TargetKind::LogReg(Box::new(spec)));
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle from a `dais_target_*` constructor, not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn dais_target_free(t: *mut DaisTarget) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dais_target_dim(t: *const DaisTarget, out: *mut usize) -> DaisStatus {
    guard(|| {
        let t = handle(t, "target")?;
        *out_ptr(out, "out")? = with_target!(t, |x| x.dim());
        Ok(())
    })
}

/// Unnormalized log density and, when `grad` is non-null, its gradient.
///
/// # Safety
/// `z` (and `grad` if non-null) must be valid for `d` elements.
#[no_mangle]
pub unsafe extern "C" fn dais_target_log_density(
    t: *const DaisTarget,
    z: *const f64,
    d: usize,
    out: *mut f64,
    grad: *mut f64,
) -> DaisStatus {
    guard(|| {
        let t = handle(t, "target")?;
        let dim = with_target!(t, |x| x.dim());
        if d != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: d }.into());
        }
        let z = slice_in(z, d, "z")?;
        let out = out_ptr(out, "out")?;
        let (lp, g) = with_target!(t, |x| x.log_density_and_grad::<f64>(z));
        *out = lp;
        if !grad.is_null() {
            slice_out(grad, d, "grad")?.copy_from_slice(&g);
        }
        Ok(())
    })
}

/// Writes the default training options (DAIS, N = 16, K = 16, lr 1e-3,
/// 1000 iterations) to `out`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dais_train_options_default(out: *mut DaisTrainOptions) -> DaisStatus {
    guard(|| {
        *out_ptr(out, "out")? = DaisTrainOptions {
            method: DaisMethod::Dais,
            n_particles: 16,
            k: 16,
            n_chains: 1,
            lr: 1e-3,
            iterations: 1000,
            seed: 0,
            scalar_mass: 0,
        };
        Ok(())
    })
}

/// Trains from q = N(init_mean, I).
///
/// # Safety
/// `t` must be live, `opts` readable, `init_mean` valid for the target's
/// dimension (or null for zeros), `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dais_train(
    t: *const DaisTarget,
    opts: *const DaisTrainOptions,
    init_mean: *const f64,
    out: *mut *mut DaisModel,
) -> DaisStatus {
    guard(|| {
        let t = handle(t, "target")?;
        let o = *handle(opts, "opts")?;
        let out = out_ptr(out, "out")?;
        let d = with_target!(t, |x| x.dim());
        let mean = if init_mean.is_null() {
            vec![0.0; d]
        } else {
            slice_in(init_mean, d, "init_mean")?.to_vec()
        };
        let mut cfg = TrainConfig::new(o.method.into(), o.n_particles, o.k, o.lr, o.iterations, o.seed);
        cfg.n_chains = o.n_chains;
        cfg.mass = if o.scalar_mass != 0 {
            MassParam::Scalar
        } else {
            MassParam::Diagonal
        };
        let init = DiagGaussian::isotropic(mean, 1.0)?;
        let result = with_target!(t, |x| train(x, &cfg, &init))?;
        *out = Box::into_raw(Box::new(DaisModel { result, cfg }));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`dais_train`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dais_model_free(m: *mut DaisModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Mean and standard deviation of the learned `q` (`q0` for DAIS).
///
/// # Safety
/// `mean` and `std` must be valid for `d` writes.
#[no_mangle]
pub unsafe extern "C" fn dais_model_q(m: *const DaisModel, mean: *mut f64, std: *mut f64, d: usize) -> DaisStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let q = &m.result.q;
        if d != q.dim() {
            return Err(Error::DimensionMismatch { expected: q.dim(), got: d }.into());
        }
        slice_out(mean, d, "mean")?.copy_from_slice(&q.mean);
        slice_out(std, d, "std")?.copy_from_slice(&q.std());
        Ok(())
    })
}

/// Last value of the training objective.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dais_model_final_objective(m: *const DaisModel, out: *mut f64) -> DaisStatus {
    guard(|| {
        let m = handle(m, "model")?;
        *out_ptr(out, "out")? = m.result.trace.last().copied().unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Average of `n_batches` bound estimates with `n_particles` each, using
/// the model's own method (IWVI at the learned q for MSC).
///
/// # Safety
/// `m` and `t` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dais_model_bound(
    m: *const DaisModel,
    t: *const DaisTarget,
    n_particles: usize,
    n_batches: usize,
    seed: u64,
    out: *mut f64,
) -> DaisStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let t = handle(t, "target")?;
        let out = out_ptr(out, "out")?;
        if n_particles == 0 || n_batches == 0 {
            return Err(Fail::Invalid("n_particles and n_batches must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = &m.result;
        let mut cfg = m.cfg.clone();
        cfg.n_particles = n_particles;
        let mut acc = 0.0;
        for _ in 0..n_batches {
            let b = with_target!(t, |x| match cfg.method {
                Method::Msc => elbo_iwvi::<f64, _, _>(&r.q, x, n_particles, 1, &mut rng),
                _ => bound_at::<f64, _, _>(&r.layout, &cfg, x, &r.params, &mut rng),
            })?;
            acc += b.value;
        }
        *out = acc / n_batches as f64;
        Ok(())
    })
}

unsafe fn gaussian_path(
    q0_mean: *const f64,
    q0_std: *const f64,
    f_mean: *const f64,
    f_std: *const f64,
    d: usize,
    log_z: f64,
) -> Result<GaussianPath, Fail> {
    if d == 0 {
        return Err(Fail::Invalid("d must be at least 1".into()));
    }
    let q0 = DiagGaussian::from_std(slice_in(q0_mean, d, "q0_mean")?.to_vec(), slice_in(q0_std, d, "q0_std")?)?;
    let f = DiagGaussian::from_std(slice_in(f_mean, d, "f_mean")?.to_vec(), slice_in(f_std, d, "f_std")?)?;
    Ok(GaussianPath::new(q0, f, log_z)?)
}

/// Single-particle AIS gap with perfect transitions and `K` equal steps on
/// the geometric path between two diagonal Gaussians.
///
/// # Safety
/// All four arrays must be valid for `d` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dais_perfect_gap(
    q0_mean: *const f64,
    q0_std: *const f64,
    f_mean: *const f64,
    f_std: *const f64,
    d: usize,
    log_z: f64,
    k: usize,
    out: *mut f64,
) -> DaisStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = gaussian_path(q0_mean, q0_std, f_mean, f_std, d, log_z)?;
        *out = perfect_gap(&path, k)?;
        Ok(())
    })
}

/// `½KL(f ‖ q0) + ½KL(q0 ‖ f)` for two diagonal Gaussians.
///
/// # Safety
/// All four arrays must be valid for `d` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dais_symmetrized_kl(
    q0_mean: *const f64,
    q0_std: *const f64,
    f_mean: *const f64,
    f_std: *const f64,
    d: usize,
    out: *mut f64,
) -> DaisStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = gaussian_path(q0_mean, q0_std, f_mean, f_std, d, 0.0)?;
        *out = symmetrized_kl_closed_form(&path)?;
        Ok(())
    })
}
