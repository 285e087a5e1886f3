//! Leapfrog integration, uncorrected annealed HMC transitions, MH-corrected
//! HMC and sampling-importance-resampling.

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::autodiff::Real;
use crate::distributions::{standard_normal_vec, DiagGaussian, Target};
use crate::error::{check_dim, Error, Result};

/// Diagonal mass matrix and per-transition step sizes of the annealed
/// sampler. A single step size is shared by all transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcConfig<R = f64> {
    pub mass_diag: Vec<R>,
    pub step_sizes: Vec<R>,
    pub n_leapfrog: usize,
}

impl<R: Real> HmcConfig<R> {
    pub fn validate(&self, d: usize, k: usize) -> Result<()> {
        check_dim(d, self.mass_diag.len())?;
        if self.step_sizes.len() != 1 && self.step_sizes.len() != k {
            return Err(Error::Config(format!(
                "expected 1 or {k} step sizes, got {}",
                self.step_sizes.len()
            )));
        }
        if self.n_leapfrog == 0 {
            return Err(Error::Config("n_leapfrog must be ≥ 1".into()));
        }
        if self.mass_diag.iter().any(|m| !(m.value() > 0.0)) {
            return Err(Error::Config("mass diagonal must be positive".into()));
        }
        if self.step_sizes.iter().any(|e| !(e.value() >= 0.0)) {
            return Err(Error::Config("step sizes must be non-negative".into()));
        }
        Ok(())
    }

    /// Step size of transition `k` (zero-based).
    pub fn step(&self, k: usize) -> R {
        if self.step_sizes.len() == 1 {
            self.step_sizes[0]
        } else {
            self.step_sizes[k]
        }
    }

    pub fn value(&self) -> HmcConfig<f64> {
        HmcConfig {
            mass_diag: self.mass_diag.iter().map(|m| m.value()).collect(),
            step_sizes: self.step_sizes.iter().map(|e| e.value()).collect(),
            n_leapfrog: self.n_leapfrog,
        }
    }
}

impl HmcConfig<f64> {
    pub fn unit_mass(d: usize, step_size: f64, n_leapfrog: usize) -> Self {
        Self {
            mass_diag: vec![1.0; d],
            step_sizes: vec![step_size],
            n_leapfrog,
        }
    }
}

/// Momentum handling across annealed transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentumScheme {
    /// Fresh `v ~ N(0, M)` before every transition.
    #[default]
    FullRefresh,
    /// One initial draw carried through all transitions.
    NoRefresh,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MhHmcConfig {
    pub eps_hmc: f64,
    pub n_l: usize,
    pub n_b: usize,
    pub n_e: usize,
    pub n_t: usize,
}

impl MhHmcConfig {
    pub fn sonar() -> Self {
        Self {
            eps_hmc: 0.001,
            n_l: 50,
            n_b: 10_000,
            n_e: 10,
            n_t: 10_000,
        }
    }

    pub fn ionosphere() -> Self {
        Self {
            n_e: 5,
            ..Self::sonar()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_hmc > 0.0) || self.n_l == 0 || self.n_e == 0 || self.n_t == 0 {
            return Err(Error::Config(format!("invalid HMC sampling config {self:?}")));
        }
        Ok(())
    }

    pub fn total_transitions(&self) -> usize {
        self.n_b + self.n_t * self.n_e
    }
}

fn check_grad<R: Real>(g: &[R], z: &[R]) -> Result<()> {
    if g.iter().all(|x| x.value().is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient {
            position: z.iter().map(|x| x.value()).collect(),
        })
    }
}

/// Leapfrog integration starting from a known gradient at `z`.
///
/// `grad` is called once per step at the new position; the gradient at the
/// final position is returned so the caller can reuse it.
pub fn leapfrog_from<R: Real, F>(
    z: &[R],
    v: &[R],
    grad_at_z: Vec<R>,
    eps: R,
    inv_mass: &[R],
    n_steps: usize,
    mut grad: F,
) -> Result<(Vec<R>, Vec<R>, Vec<R>)>
where
    F: FnMut(&[R]) -> Result<Vec<R>>,
{
    check_grad(&grad_at_z, z)?;
    let half = eps * 0.5;
    let mut z = z.to_vec();
    let mut g = grad_at_z;
    let mut v: Vec<R> = v.iter().zip(&g).map(|(v, g)| *v + half * *g).collect();
    for step in 0..n_steps {
        for i in 0..z.len() {
            z[i] = z[i] + eps * v[i] * inv_mass[i];
        }
        g = grad(&z)?;
        check_grad(&g, &z)?;
        let kick = if step + 1 == n_steps { half } else { eps };
        for i in 0..v.len() {
            v[i] = v[i] + kick * g[i];
        }
    }
    Ok((z, v, g))
}

/// Plain leapfrog: `n_steps` steps of size `eps` under `grad_log_gamma` with
/// diagonal mass `mass_diag`.
pub fn leapfrog<F>(
    z: &[f64],
    v: &[f64],
    eps: f64,
    mass_diag: &[f64],
    n_steps: usize,
    mut grad_log_gamma: F,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    check_dim(z.len(), v.len())?;
    check_dim(z.len(), mass_diag.len())?;
    let inv_mass: Vec<f64> = mass_diag.iter().map(|m| 1.0 / m).collect();
    let g0 = grad_log_gamma(z);
    let (z, v, _) = leapfrog_from(z, v, g0, eps, &inv_mass, n_steps, |x| Ok(grad_log_gamma(x)))?;
    Ok((z, v))
}

/// `∇log q₀` and `∇log f` at one position, kept between transitions so each
/// leapfrog step costs one target gradient.
#[derive(Debug, Clone)]
pub struct GradParts<R> {
    pub q0: Vec<R>,
    pub target: Vec<R>,
}

/// Gradient access for the geometric path between a (possibly recorded)
/// diagonal Gaussian and a target.
pub struct AnnealedPath<'a, R, T> {
    pub q0: &'a DiagGaussian<R>,
    pub target: &'a T,
    inv_var: Vec<R>,
}

impl<'a, R: Real, T: Target> AnnealedPath<'a, R, T> {
    pub fn new(q0: &'a DiagGaussian<R>, target: &'a T) -> Self {
        let inv_var = q0.log_std.iter().map(|l| (*l * -2.0).exp()).collect();
        Self {
            q0,
            target,
            inv_var,
        }
    }

    pub fn parts(&self, z: &[R]) -> GradParts<R> {
        GradParts {
            q0: self.q0.grad_log_prob_with(z, &self.inv_var),
            target: self.target.grad_log_density(z),
        }
    }

    pub fn combine(parts: &GradParts<R>, beta: R) -> Vec<R> {
        let one_minus = -beta + 1.0;
        parts
            .q0
            .iter()
            .zip(&parts.target)
            .map(|(a, b)| one_minus * *a + beta * *b)
            .collect()
    }
}

/// Result of one uncorrected transition.
#[derive(Debug, Clone)]
pub struct Transition<R> {
    pub z: Vec<R>,
    pub v_in: Vec<R>,
    pub v_out: Vec<R>,
}

/// Mass-derived quantities shared by all transitions.
#[derive(Debug, Clone)]
pub struct MassTerms<R> {
    pub sqrt_mass: Vec<R>,
    pub inv_mass: Vec<R>,
}

impl<R: Real> MassTerms<R> {
    pub fn new(mass_diag: &[R]) -> Self {
        Self {
            sqrt_mass: mass_diag.iter().map(|m| m.sqrt()).collect(),
            inv_mass: mass_diag.iter().map(|m| m.constant_like(1.0) / *m).collect(),
        }
    }

    /// `log N(v_out; 0, M) − log N(v_in; 0, M)`; normalizers cancel.
    pub fn log_kinetic_ratio(&self, v_in: &[R], v_out: &[R]) -> R {
        let mut terms = Vec::with_capacity(v_in.len());
        for i in 0..v_in.len() {
            terms.push((v_in[i].square() - v_out[i].square()) * self.inv_mass[i]);
        }
        R::sum(&terms) * 0.5
    }
}

/// One annealed HMC transition at inverse temperature `beta`, without
/// accept/reject. `v_in` is drawn as `√M ⊙ ε_v` unless supplied.
/// `cache` holds the gradient parts at `z_prev` and is updated to the new
/// position.
#[allow(clippy::too_many_arguments)]
pub fn dais_transition_cached<R: Real, T: Target, G: Rng + ?Sized>(
    z_prev: &[R],
    beta: R,
    eps: R,
    mass: &MassTerms<R>,
    n_leapfrog: usize,
    path: &AnnealedPath<'_, R, T>,
    cache: &mut GradParts<R>,
    v_in: Option<Vec<R>>,
    rng: &mut G,
) -> Result<Transition<R>> {
    let v_in = match v_in {
        Some(v) => v,
        None => {
            let e = standard_normal_vec(rng, z_prev.len());
            mass.sqrt_mass.iter().zip(&e).map(|(s, e)| *s * *e).collect()
        }
    };
    let g0 = AnnealedPath::<R, T>::combine(cache, beta);
    let mut last: Option<GradParts<R>> = None;
    let (z, v_out, _) = leapfrog_from(z_prev, &v_in, g0, eps, &mass.inv_mass, n_leapfrog, |x| {
        let p = path.parts(x);
        let g = AnnealedPath::<R, T>::combine(&p, beta);
        last = Some(p);
        Ok(g)
    })?;
    if let Some(p) = last {
        *cache = p;
    }
    Ok(Transition { z, v_in, v_out })
}

/// Plain-valued annealed transition with fresh momentum, using the step size
/// of transition `k`.
#[allow(clippy::too_many_arguments)]
pub fn dais_transition<T: Target, G: Rng + ?Sized>(
    z_prev: &[f64],
    beta: f64,
    k: usize,
    cfg: &HmcConfig,
    q0: &DiagGaussian,
    target: &T,
    rng: &mut G,
) -> Result<Transition<f64>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!("beta {beta} outside (0, 1]")));
    }
    cfg.validate(z_prev.len(), cfg.step_sizes.len())?;
    let eps = cfg.step(k);
    let path = AnnealedPath::new(q0, target);
    let mut cache = path.parts(z_prev);
    let mass = MassTerms::new(&cfg.mass_diag);
    dais_transition_cached(z_prev, beta, eps, &mass, cfg.n_leapfrog, &path, &mut cache, None, rng)
}

/// Output of Metropolis-corrected HMC.
#[derive(Debug, Clone)]
pub struct HmcSamples {
    pub samples: Vec<Vec<f64>>,
    pub burn_in_acceptance: f64,
    pub acceptance: f64,
}

/// Metropolis-corrected HMC with identity mass, started at `init`.
pub fn mh_hmc_sample<T: Target, G: Rng + ?Sized>(
    target: &T,
    cfg: &MhHmcConfig,
    init: &[f64],
    rng: &mut G,
) -> Result<HmcSamples> {
    cfg.validate()?;
    let d = target.dim();
    check_dim(d, init.len())?;
    let ones = vec![1.0; d];
    let mut z = init.to_vec();
    let (mut lp, mut g) = target.log_density_and_grad(&z);
    if !lp.is_finite() {
        return Err(Error::NonFinite("log density at the initial HMC state".into()));
    }
    let mut samples = Vec::with_capacity(cfg.n_t);
    let (mut acc_burn, mut acc_all) = (0usize, 0usize);
    for t in 0..cfg.total_transitions() {
        let v0 = standard_normal_vec(rng, d);
        let mut lp_new = f64::NAN;
        let proposal = leapfrog_from(&z, &v0, g.clone(), cfg.eps_hmc, &ones, cfg.n_l, |x| {
            let (l, gr) = target.log_density_and_grad(x);
            lp_new = l;
            Ok(gr)
        });
        // A divergent trajectory is a rejection, not a failure.
        if let Ok((z_new, v_new, g_new)) = proposal {
            let h0 = -lp + 0.5 * v0.iter().map(|x| x * x).sum::<f64>();
            let h1 = -lp_new + 0.5 * v_new.iter().map(|x| x * x).sum::<f64>();
            let log_accept = h0 - h1;
            if log_accept.is_finite() && rng.random::<f64>().ln() < log_accept {
                z = z_new;
                lp = lp_new;
                g = g_new;
                acc_all += 1;
                if t < cfg.n_b {
                    acc_burn += 1;
                }
            }
        }
        if t == cfg.n_b && cfg.n_b > 0 {
            let rate = acc_burn as f64 / cfg.n_b as f64;
            if rate < 0.01 {
                warn!("HMC burn-in acceptance rate {rate:.4} is below 1%");
            }
        }
        if t >= cfg.n_b && (t - cfg.n_b + 1).is_multiple_of(cfg.n_e) {
            samples.push(z.clone());
        }
    }
    Ok(HmcSamples {
        samples,
        burn_in_acceptance: if cfg.n_b > 0 {
            acc_burn as f64 / cfg.n_b as f64
        } else {
            f64::NAN
        },
        acceptance: acc_all as f64 / cfg.total_transitions() as f64,
    })
}

/// Index drawn from `softmax(log_weights)`.
pub fn categorical_from_log_weights<G: Rng + ?Sized>(
    log_weights: &[f64],
    rng: &mut G,
) -> Result<usize> {
    Ok(categorical_sampler(log_weights)?.sample(rng))
}

fn categorical_sampler(log_weights: &[f64]) -> Result<WeightedIndex<f64>> {
    if log_weights.is_empty() {
        return Err(Error::Config("no weights to resample from".into()));
    }
    if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(Error::NonFinite("log weights".into()));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Numerical("all importance weights are zero".into()));
    }
    WeightedIndex::new(log_weights.iter().map(|w| (w - max).exp()))
        .map_err(|e| Error::Numerical(format!("categorical weights: {e}")))
}

/// Draws `n_draws` rows of `particles` with replacement, with probabilities
/// `softmax(log_weights)`.
pub fn sir_resample<G: Rng + ?Sized>(
    particles: &[Vec<f64>],
    log_weights: &[f64],
    n_draws: usize,
    rng: &mut G,
) -> Result<Vec<Vec<f64>>> {
    check_dim(particles.len(), log_weights.len())?;
    let dist = categorical_sampler(log_weights)?;
    Ok((0..n_draws)
        .map(|_| particles[dist.sample(rng)].clone())
        .collect())
}
