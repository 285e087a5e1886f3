//! Densities, reparameterized sampling, the geometric annealing path and
//! KL divergences.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{log_sum_exp_f64, Real};
use crate::error::{check_dim, Error, Result};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn standard_normal_vec<G: Rng + ?Sized>(rng: &mut G, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Fully factorized normal distribution parameterized by mean and log
/// standard deviation. `R` is `f64` or a tape variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian<R = f64> {
    pub mean: Vec<R>,
    pub log_std: Vec<R>,
}

impl DiagGaussian<f64> {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Config("a Gaussian needs at least one dimension".into()));
        }
        check_dim(mean.len(), log_std.len())?;
        if mean.iter().chain(&log_std).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Gaussian parameters".into()));
        }
        Ok(Self { mean, log_std })
    }

    pub fn from_std(mean: Vec<f64>, std: &[f64]) -> Result<Self> {
        if std.iter().any(|s| *s <= 0.0) {
            return Err(Error::Config("standard deviations must be positive".into()));
        }
        Self::new(mean, std.iter().map(|s| s.ln()).collect())
    }

    pub fn isotropic(mean: Vec<f64>, std: f64) -> Result<Self> {
        let d = mean.len();
        Self::from_std(mean, &vec![std; d])
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            log_std: vec![0.0; d],
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> Vec<f64> {
        let eps = standard_normal_vec(rng, self.dim());
        self.reparam(&eps)
    }

    /// Differential entropy.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| 0.5 * (LN_2PI + 1.0) + l).sum()
    }
}

impl<R: Real> DiagGaussian<R> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Plain-valued copy.
    pub fn value(&self) -> DiagGaussian<f64> {
        DiagGaussian {
            mean: self.mean.iter().map(|m| m.value()).collect(),
            log_std: self.log_std.iter().map(|l| l.value()).collect(),
        }
    }

    pub fn log_prob(&self, z: &[R]) -> Result<R> {
        check_dim(self.dim(), z.len())?;
        Ok(self.log_prob_unchecked(z))
    }

    pub(crate) fn log_prob_unchecked(&self, z: &[R]) -> R {
        let inv_std: Vec<R> = self.log_std.iter().map(|l| (-*l).exp()).collect();
        self.log_prob_with(z, &inv_std)
    }

    /// `log_prob` reusing precomputed `exp(-log_std)`.
    pub(crate) fn log_prob_with(&self, z: &[R], inv_std: &[R]) -> R {
        let d = self.dim();
        let mut terms = Vec::with_capacity(2 * d);
        let mut coeffs = Vec::with_capacity(2 * d);
        for i in 0..d {
            terms.push(((z[i] - self.mean[i]) * inv_std[i]).square());
            coeffs.push(-0.5);
        }
        for l in &self.log_std {
            terms.push(*l);
            coeffs.push(-1.0);
        }
        R::lin_comb(&coeffs, &terms, -0.5 * LN_2PI * d as f64)
    }

    /// `∇_z log q(z)` given precomputed `exp(-2 log_std)`.
    pub(crate) fn grad_log_prob_with(&self, z: &[R], inv_var: &[R]) -> Vec<R> {
        z.iter()
            .zip(&self.mean)
            .zip(inv_var)
            .map(|((z, m), iv)| (*m - *z) * *iv)
            .collect()
    }

    pub fn grad_log_prob(&self, z: &[R]) -> Vec<R> {
        let inv_var: Vec<R> = self.log_std.iter().map(|l| (*l * -2.0).exp()).collect();
        self.grad_log_prob_with(z, &inv_var)
    }

    /// `z = μ + σ ⊙ ε` for externally supplied noise.
    pub fn reparam(&self, eps: &[f64]) -> Vec<R> {
        debug_assert_eq!(eps.len(), self.dim());
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(eps)
            .map(|((m, l), e)| *m + l.exp() * *e)
            .collect()
    }

    /// Reparameterized draw; the noise is returned so that gradients flow
    /// through the mean and scale only.
    pub fn sample_reparam<G: Rng + ?Sized>(&self, rng: &mut G) -> (Vec<R>, Vec<f64>) {
        let eps = standard_normal_vec(rng, self.dim());
        (self.reparam(&eps), eps)
    }
}

/// Unnormalized log density with gradient access.
///
/// Both methods are generic over [`Real`] so that gradients themselves can be
/// recorded on a tape (leapfrog integrators need this).
pub trait Target: Sync {
    fn dim(&self) -> usize;

    fn log_density<R: Real>(&self, z: &[R]) -> R;

    fn grad_log_density<R: Real>(&self, z: &[R]) -> Vec<R>;

    /// Both at once; models override this when the two share work.
    fn log_density_and_grad<R: Real>(&self, z: &[R]) -> (R, Vec<R>) {
        (self.log_density(z), self.grad_log_density(z))
    }

    /// `log Z` when the normalizer is known in closed form.
    fn log_normalizer(&self) -> Option<f64> {
        None
    }

    fn has_exact_sampler(&self) -> bool {
        false
    }

    /// Exact draw from `f / Z`, when available.
    fn sample_exact<G: Rng + ?Sized>(&self, _rng: &mut G) -> Option<Vec<f64>> {
        None
    }
}

/// `f(z) = exp(log_z) · N(z; dist)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    pub dist: DiagGaussian,
    pub log_z: f64,
    inv_std: Vec<f64>,
}

impl GaussianTarget {
    pub fn new(dist: DiagGaussian, log_z: f64) -> Self {
        let inv_std = dist.log_std.iter().map(|l| (-l).exp()).collect();
        Self {
            dist,
            log_z,
            inv_std,
        }
    }

    pub fn normalized(dist: DiagGaussian) -> Self {
        Self::new(dist, 0.0)
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.dist.dim()
    }

    fn log_density<R: Real>(&self, z: &[R]) -> R {
        let d = self.dim();
        let quad: Vec<R> = z
            .iter()
            .zip(&self.dist.mean)
            .zip(&self.inv_std)
            .map(|((&zi, &m), &s)| ((zi - m) * s).square())
            .collect();
        let log_norm: f64 = self.dist.log_std.iter().sum::<f64>() + 0.5 * LN_2PI * d as f64;
        R::lin_comb(&vec![-0.5; d], &quad, self.log_z - log_norm)
    }

    fn grad_log_density<R: Real>(&self, z: &[R]) -> Vec<R> {
        z.iter()
            .zip(&self.dist.mean)
            .zip(&self.inv_std)
            .map(|((z, m), s)| (*z - *m) * -(s * s))
            .collect()
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(self.log_z)
    }

    fn has_exact_sampler(&self) -> bool {
        true
    }

    fn sample_exact<G: Rng + ?Sized>(&self, rng: &mut G) -> Option<Vec<f64>> {
        Some(self.dist.sample(rng))
    }
}

/// Equal-weight mixture of two isotropic Gaussians at `0·1` and `1·1`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicPairMixture {
    pub d: usize,
    pub mode_a: Vec<f64>,
    pub mode_b: Vec<f64>,
    pub component_std: f64,
}

impl IsotropicPairMixture {
    pub fn new(d: usize, component_std: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("mixture dimension must be ≥ 1".into()));
        }
        if component_std <= 0.0 {
            return Err(Error::Config("component std must be positive".into()));
        }
        Ok(Self {
            d,
            mode_a: vec![0.0; d],
            mode_b: vec![1.0; d],
            component_std,
        })
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.mode_a
            .iter()
            .zip(&self.mode_b)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Per-dimension mean and standard deviation of the mixture.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let mean = self.midpoint();
        let s2 = self.component_std * self.component_std;
        let std = self
            .mode_a
            .iter()
            .zip(&self.mode_b)
            .map(|(a, b)| (s2 + 0.25 * (a - b) * (a - b)).sqrt())
            .collect();
        (mean, std)
    }

    fn component_logs<R: Real>(&self, z: &[R]) -> [R; 2] {
        let inv = 1.0 / self.component_std;
        let norm = -(self.d as f64) * (0.5 * LN_2PI + self.component_std.ln());
        let coeffs = vec![-0.5; self.d];
        let sq = |mode: &[f64]| -> R {
            let terms: Vec<R> = z
                .iter()
                .zip(mode)
                .map(|(z, m)| ((*z - *m) * inv).square())
                .collect();
            R::lin_comb(&coeffs, &terms, norm)
        };
        [sq(&self.mode_a), sq(&self.mode_b)]
    }
}

impl Target for IsotropicPairMixture {
    fn dim(&self) -> usize {
        self.d
    }

    fn log_density<R: Real>(&self, z: &[R]) -> R {
        R::log_sum_exp(&self.component_logs(z)) - std::f64::consts::LN_2
    }

    fn grad_log_density<R: Real>(&self, z: &[R]) -> Vec<R> {
        self.log_density_and_grad(z).1
    }

    fn log_density_and_grad<R: Real>(&self, z: &[R]) -> (R, Vec<R>) {
        let logs = self.component_logs(z);
        let lse = R::log_sum_exp(&logs);
        let ra = (logs[0] - lse).exp();
        let rb = (logs[1] - lse).exp();
        let prec = 1.0 / (self.component_std * self.component_std);
        let grad = (0..self.d)
            .map(|i| (ra * self.mode_a[i] + rb * self.mode_b[i] - z[i]) * prec)
            .collect();
        (lse - std::f64::consts::LN_2, grad)
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(0.0)
    }

    fn has_exact_sampler(&self) -> bool {
        true
    }

    fn sample_exact<G: Rng + ?Sized>(&self, rng: &mut G) -> Option<Vec<f64>> {
        let mode = if rng.random_bool(0.5) {
            &self.mode_b
        } else {
            &self.mode_a
        };
        Some(
            mode.iter()
                .map(|m| m + self.component_std * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }
}

/// Mixture log density, `log(½N_a + ½N_b)`.
pub fn mixture_log_prob(m: &IsotropicPairMixture, z: &[f64]) -> Result<f64> {
    check_dim(m.d, z.len())?;
    Ok(m.log_density(z))
}

/// Point on the geometric path `γ_β = q₀^{1-β} f^β`.
#[derive(Debug, Clone, Copy)]
pub struct AnnealedDensity<'a, T: Target> {
    pub q0: &'a DiagGaussian,
    pub target: &'a T,
    pub beta: f64,
}

impl<'a, T: Target> AnnealedDensity<'a, T> {
    pub fn new(q0: &'a DiagGaussian, target: &'a T, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Config(format!("beta {beta} outside [0, 1]")));
        }
        check_dim(q0.dim(), target.dim())?;
        Ok(Self { q0, target, beta })
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.q0.dim(), z.len())?;
        let lq = self.q0.log_prob_unchecked(z);
        let value = if self.beta == 0.0 {
            lq
        } else if self.beta == 1.0 {
            self.target.log_density(z)
        } else {
            (1.0 - self.beta) * lq + self.beta * self.target.log_density(z)
        };
        if value.is_nan() || value == f64::NEG_INFINITY {
            return Err(Error::NonFinite(format!(
                "annealed log density at beta={} outside the support",
                self.beta
            )));
        }
        Ok(value)
    }

    pub fn grad_log_density(&self, z: &[f64]) -> Vec<f64> {
        let gq = self.q0.grad_log_prob(z);
        let gf = self.target.grad_log_density(z);
        gq.iter()
            .zip(&gf)
            .map(|(a, b)| (1.0 - self.beta) * a + self.beta * b)
            .collect()
    }
}

/// Closed-form `KL(p ‖ q)` between diagonal Gaussians.
///
/// Written as `½[(r − 1 − ln r) + Δμ²/σ_q²]` with `r = σ_p²/σ_q²` and
/// `r − 1 − ln r = expm1(t) − t` so that nearly equal distributions do not
/// lose precision to cancellation.
pub fn kl_diag_gaussians(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let mut kl = 0.0;
    for i in 0..p.dim() {
        let t = 2.0 * (p.log_std[i] - q.log_std[i]);
        let dm = (p.mean[i] - q.mean[i]) * (-q.log_std[i]).exp();
        kl += 0.5 * ((t.exp_m1() - t) + dm * dm);
    }
    Ok(kl.max(0.0))
}

/// Trapezoid nodes used by one-dimensional quadrature checks.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature1d {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl Default for Quadrature1d {
    fn default() -> Self {
        Self {
            lo: -10.0,
            hi: 11.0,
            nodes: 10_000,
        }
    }
}

impl Quadrature1d {
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = (self.hi - self.lo) / (self.nodes - 1) as f64;
        let mut acc = 0.0;
        for i in 0..self.nodes {
            let x = self.lo + h * i as f64;
            let w = if i == 0 || i + 1 == self.nodes { 0.5 } else { 1.0 };
            acc += w * f(x);
        }
        acc * h
    }

    /// Log of `∫ exp(log_f)`, with the max shifted out.
    pub fn log_integral(&self, log_f: impl Fn(f64) -> f64) -> f64 {
        let h = (self.hi - self.lo) / (self.nodes - 1) as f64;
        let vals: Vec<f64> = (0..self.nodes)
            .map(|i| {
                let w: f64 = if i == 0 || i + 1 == self.nodes { 0.5 } else { 1.0 };
                log_f(self.lo + h * i as f64) + w.ln()
            })
            .collect();
        log_sum_exp_f64(&vals) + h.ln()
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of `½KL(p‖q) + ½KL(q‖p)` with its standard error.
///
/// `KL(q‖p)` uses draws from `q`; `KL(p‖q)` uses the target's exact sampler
/// when it has one and importance weighting under `q` otherwise. Both need
/// a known `log Z`.
pub fn symmetrized_kl_mc<T: Target, G: Rng + ?Sized>(
    q: &DiagGaussian,
    target: &T,
    n_mc: usize,
    rng: &mut G,
) -> Result<(f64, f64)> {
    check_dim(q.dim(), target.dim())?;
    if n_mc < 2 {
        return Err(Error::Config("symmetrized KL needs n_mc ≥ 2".into()));
    }
    let log_z = target.log_normalizer().ok_or_else(|| {
        Error::Unsupported("symmetrized KL needs a target with known log Z".into())
    })?;
    let mut reverse = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let z = q.sample(rng);
        reverse.push(q.log_prob_unchecked(&z) - (target.log_density(&z) - log_z));
    }
    let mut forward = Vec::with_capacity(n_mc);
    if target.has_exact_sampler() {
        for _ in 0..n_mc {
            let z = target.sample_exact(rng).expect("exact sampler advertised");
            forward.push(target.log_density(&z) - log_z - q.log_prob_unchecked(&z));
        }
    } else {
        for _ in 0..n_mc {
            let z = q.sample(rng);
            let lp = target.log_density(&z) - log_z;
            let lq = q.log_prob_unchecked(&z);
            forward.push((lp - lq).exp() * (lp - lq));
        }
    }
    let (r, r_se) = mean_and_stderr(&reverse);
    let (f, f_se) = mean_and_stderr(&forward);
    Ok((0.5 * (r + f), 0.5 * (r_se * r_se + f_se * f_se).sqrt()))
}

/// One-dimensional symmetrized KL by trapezoid quadrature; the target is
/// normalized numerically, so `log Z` need not be known.
pub fn symmetrized_kl_quadrature<T: Target>(
    q: &DiagGaussian,
    target: &T,
    grid: Quadrature1d,
) -> Result<f64> {
    if q.dim() != 1 || target.dim() != 1 {
        return Err(Error::Unsupported("quadrature path is one-dimensional".into()));
    }
    let log_z = grid.log_integral(|x| target.log_density(&[x]));
    let kl = grid.integrate(|x| {
        let lp = target.log_density(&[x]) - log_z;
        let lq = q.log_prob_unchecked(&[x]);
        let p = lp.exp();
        let qq = lq.exp();
        let mut v = 0.0;
        if p > 0.0 {
            v += 0.5 * p * (lp - lq);
        }
        if qq > 0.0 {
            v += 0.5 * qq * (lq - lp);
        }
        v
    });
    Ok(kl)
}

/// Symmetrized KL; prefers quadrature in one dimension (standard error 0).
pub fn symmetrized_kl<T: Target, G: Rng + ?Sized>(
    q: &DiagGaussian,
    target: &T,
    n_mc: usize,
    rng: &mut G,
) -> Result<(f64, f64)> {
    if q.dim() == 1 && target.dim() == 1 {
        return Ok((symmetrized_kl_quadrature(q, target, Quadrature1d::default())?, 0.0));
    }
    if n_mc < 1000 {
        return Err(Error::Config("symmetrized KL needs n_mc ≥ 1000".into()));
    }
    symmetrized_kl_mc(q, target, n_mc, rng)
}
