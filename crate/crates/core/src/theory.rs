//! Closed-form checks of the large-K behaviour of the annealed importance
//! sampling gap on Gaussian paths, where every intermediate distribution and
//! every KL divergence is available exactly.

use rand::Rng;

use crate::autodiff::{log_sum_exp_f64, Real, Tape};
use crate::distributions::{kl_diag_gaussians, DiagGaussian, Target};
use crate::error::{check_dim, Error, Result};
use crate::inference::AdamState;

/// Geometric path from `q0` to `f = exp(log_z)·target`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPath {
    pub q0: DiagGaussian,
    pub target: DiagGaussian,
    pub log_z: f64,
}

impl GaussianPath {
    pub fn new(q0: DiagGaussian, target: DiagGaussian, log_z: f64) -> Result<Self> {
        check_dim(q0.dim(), target.dim())?;
        Ok(Self { q0, target, log_z })
    }

    pub fn dim(&self) -> usize {
        self.q0.dim()
    }

    /// `log γ_β(z) = (1 − β) log q₀(z) + β log f(z)`.
    pub fn log_gamma(&self, beta: f64, z: &[f64]) -> f64 {
        let lq = self.q0.log_prob_unchecked(z);
        let lf = self.log_z + self.target.log_prob_unchecked(z);
        (1.0 - beta) * lq + beta * lf
    }
}

/// The normalized path distribution `π_β`, a diagonal Gaussian with
/// precision `(1 − β)/σ₀² + β/σ₁²` per coordinate.
pub fn path_point(path: &GaussianPath, beta: f64) -> Result<DiagGaussian> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta {beta} outside [0, 1]")));
    }
    if beta == 0.0 {
        return Ok(path.q0.clone());
    }
    if beta == 1.0 {
        return Ok(path.target.clone());
    }
    let d = path.dim();
    let mut mean = Vec::with_capacity(d);
    let mut log_std = Vec::with_capacity(d);
    for i in 0..d {
        let p0 = (-2.0 * path.q0.log_std[i]).exp();
        let p1 = (-2.0 * path.target.log_std[i]).exp();
        let lambda = (1.0 - beta) * p0 + beta * p1;
        mean.push(((1.0 - beta) * p0 * path.q0.mean[i] + beta * p1 * path.target.mean[i]) / lambda);
        log_std.push(-0.5 * lambda.ln());
    }
    DiagGaussian::new(mean, log_std)
}

/// Gap of single-particle AIS with perfect transitions and `β_k = k/K`:
/// `Σ_k KL(π_{β_{k−1}} ‖ π_{β_k})`.
pub fn perfect_gap(path: &GaussianPath, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("K must be ≥ 1".into()));
    }
    let mut prev = path_point(path, 0.0)?;
    let mut gap = 0.0;
    for step in 1..=k {
        let next = path_point(path, step as f64 / k as f64)?;
        gap += kl_diag_gaussians(&prev, &next)?;
        prev = next;
    }
    Ok(gap)
}

/// `½KL(target ‖ q₀) + ½KL(q₀ ‖ target)`.
pub fn symmetrized_kl_closed_form(path: &GaussianPath) -> Result<f64> {
    Ok(0.5 * kl_diag_gaussians(&path.target, &path.q0)? + 0.5 * kl_diag_gaussians(&path.q0, &path.target)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JsLimitRow {
    pub k: usize,
    pub k_gap: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JsLimitTable {
    pub d_js: f64,
    pub rows: Vec<JsLimitRow>,
    /// Least-squares slope of `log residual` against `log K` over rows with
    /// residual above `1e-13`; `None` with fewer than two such rows.
    pub fitted_slope: Option<f64>,
}

pub fn verify_js_limit(path: &GaussianPath, k_list: &[usize]) -> Result<JsLimitTable> {
    if k_list.is_empty() || k_list[0] < 4 || k_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("K list must be increasing and start at ≥ 4".into()));
    }
    let d_js = symmetrized_kl_closed_form(path)?;
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let k_gap = k as f64 * perfect_gap(path, k)?;
        rows.push(JsLimitRow {
            k,
            k_gap,
            residual: (k_gap - d_js).abs(),
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.residual > 1e-13)
        .map(|r| ((r.k as f64).ln(), r.residual.ln()))
        .collect();
    Ok(JsLimitTable {
        d_js,
        rows,
        fitted_slope: least_squares_slope(&pts),
    })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Monte Carlo estimate of the `N`-particle perfect-transition gap
/// `log Z − E[log (1/N) Σ_i Π_k γ_k(z_{k−1}^i) / γ_{k−1}(z_{k−1}^i)]` with
/// independent exact draws `z_{k−1}^i ~ π_{β_{k−1}}`, equally spaced `β`.
/// Returns the estimate and its standard error.
pub fn n_particle_gap_mc<G: Rng + ?Sized>(
    path: &GaussianPath,
    n: usize,
    k: usize,
    n_mc: usize,
    rng: &mut G,
) -> Result<(f64, f64)> {
    if n == 0 || k == 0 || n_mc < 2 {
        return Err(Error::Config("need N ≥ 1, K ≥ 1 and n_mc ≥ 2".into()));
    }
    let points: Vec<DiagGaussian> = (0..k)
        .map(|s| path_point(path, s as f64 / k as f64))
        .collect::<Result<_>>()?;
    let dbeta = 1.0 / k as f64;
    let log_n = (n as f64).ln();
    let mut lw = vec![0.0; n];
    let mut gaps = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        for w in lw.iter_mut() {
            let mut acc = 0.0;
            for pi in &points {
                let z = pi.sample(rng);
                // γ_k / γ_{k−1} = (f / q₀)^{Δβ}
                acc += dbeta * (path.log_z + path.target.log_prob_unchecked(&z) - path.q0.log_prob_unchecked(&z));
            }
            *w = acc;
        }
        gaps.push(path.log_z - (log_sum_exp_f64(&lw) - log_n));
    }
    let m = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / m;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((mean, (var / m).sqrt()))
}

/// Fits a diagonal Gaussian by stochastic minimization of
/// `½KL(p ‖ q) + ½KL(q ‖ p)`: the reverse term by reparameterization, the
/// forward term through the score of `q` at exact target draws.
pub fn numeric_js_minimizer<T: Target, G: Rng + ?Sized>(
    target: &T,
    init: &DiagGaussian,
    lr: f64,
    iters: usize,
    n_mc: usize,
    rng: &mut G,
) -> Result<DiagGaussian> {
    check_dim(target.dim(), init.dim())?;
    if !target.has_exact_sampler() {
        return Err(Error::Unsupported("the symmetrized-KL fit needs an exact target sampler".into()));
    }
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be ≥ 1".into()));
    }
    let d = init.dim();
    let mut params: Vec<f64> = init.mean.iter().chain(&init.log_std).copied().collect();
    let mut adam = AdamState::new(2 * d, lr);
    let mut tape = Tape::new();
    let mut grads = vec![0.0; 2 * d];
    let scale = 0.5 / n_mc as f64;
    for it in 0..iters {
        tape.reset();
        {
            let leaves = tape.vars(&params);
            let q = DiagGaussian {
                mean: leaves[..d].to_vec(),
                log_std: leaves[d..].to_vec(),
            };
            let mut terms = Vec::with_capacity(2 * n_mc);
            for _ in 0..n_mc {
                let (z, _) = q.sample_reparam(rng);
                terms.push(q.log_prob_unchecked(&z) - target.log_density(&z));
                let x = target.sample_exact(rng).expect("exact sampler advertised");
                let xv: Vec<_> = x.iter().map(|v| leaves[0].constant_like(*v)).collect();
                terms.push(-q.log_prob_unchecked(&xv));
            }
            let loss = Real::sum(&terms) * scale;
            if !loss.value().is_finite() {
                return Err(Error::Diverged {
                    iteration: it,
                    reason: format!("symmetrized KL estimate is {}", loss.value()),
                });
            }
            let g = tape.backward(loss).map_err(|e| Error::Diverged {
                iteration: it,
                reason: e.to_string(),
            })?;
            for (gi, l) in grads.iter_mut().zip(&leaves) {
                *gi = g.wrt(*l);
            }
        }
        adam.step(&mut params, &grads).map_err(|e| Error::Diverged {
            iteration: it,
            reason: e.to_string(),
        })?;
    }
    DiagGaussian::new(params[..d].to_vec(), params[d..].to_vec())
}
