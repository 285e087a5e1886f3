//! Training loops: Adam on the negative of a bound, and Markovian score
//! climbing with the i-SIR kernel.

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus_inv, Real, ScalarObjective, Tape};
use crate::distributions::{DiagGaussian, Target};
use crate::error::{check_dim, Error, Result};
use crate::estimators::{
    dais_forward, elbo_dais, elbo_iwvi, elbo_vi, AnnealSchedule, BoundEstimate, DaisOptions, DaisParams,
};
use crate::samplers::{categorical_from_log_weights, HmcConfig, MomentumScheme};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim(self.m.len(), params.len())?;
        check_dim(self.m.len(), grads.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient coordinate {i} is {}", grads[i])));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescales `grads` to norm `max_norm` if it is larger; returns whether it
/// clipped.
pub fn clip_gradient(grads: &mut [f64], max_norm: f64) -> bool {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vi,
    Iwvi,
    Dais,
    Msc,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Vi => "VI",
            Method::Iwvi => "IWVI",
            Method::Dais => "DAIS",
            Method::Msc => "MSC",
        }
    }
}

/// Parameterization of the sampler's mass matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassParam {
    /// Learnable log-diagonal.
    #[default]
    Diagonal,
    /// `M = c·I` with learnable `log c`.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MscOptimizer {
    #[default]
    Adam,
    /// Plain stochastic gradient ascent on the score.
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    /// Particles per bound evaluation (VI averages this many samples); for
    /// MSC, candidates per i-SIR step.
    pub n_particles: usize,
    pub k: usize,
    pub n_chains: usize,
    pub lr: f64,
    pub iters: usize,
    pub seed: u64,
    pub n_leapfrog: usize,
    pub step_init: f64,
    pub mass: MassParam,
    pub momentum: MomentumScheme,
    pub clip_norm: f64,
    pub msc_optimizer: MscOptimizer,
}

impl TrainConfig {
    pub fn new(method: Method, n_particles: usize, k: usize, lr: f64, iters: usize, seed: u64) -> Self {
        Self {
            method,
            n_particles,
            k,
            n_chains: 1,
            lr,
            iters,
            seed,
            n_leapfrog: 1,
            step_init: 0.05,
            mass: MassParam::Diagonal,
            momentum: MomentumScheme::FullRefresh,
            clip_norm: 1e3,
            msc_optimizer: MscOptimizer::Adam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::Config("N must be ≥ 1".into()));
        }
        if self.method == Method::Dais && self.k == 0 {
            return Err(Error::Config("DAIS needs K ≥ 1".into()));
        }
        if self.method == Method::Msc && (self.n_chains == 0 || self.n_particles < 2) {
            return Err(Error::Config("MSC needs ≥ 1 chain and N ≥ 2 candidates".into()));
        }
        if self.method == Method::Dais && !(self.step_init > 0.0) {
            return Err(Error::Config("step_init must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("lr must be ≥ 0 and clip_norm > 0".into()));
        }
        Ok(())
    }
}

/// Flat parameter vector layout:
/// `[mean (d), log_std (d), schedule raw (K), step raw (K), log mass (d or 1)]`,
/// the last three blocks only for DAIS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub d: usize,
    pub k: usize,
    pub mass: MassParam,
    pub dais: bool,
}

impl ParamLayout {
    pub fn new(d: usize, method: Method, k: usize, mass: MassParam) -> Self {
        let dais = method == Method::Dais;
        Self {
            d,
            k: if dais { k } else { 0 },
            mass,
            dais,
        }
    }

    fn n_mass(&self) -> usize {
        match (self.dais, self.mass) {
            (false, _) => 0,
            (true, MassParam::Diagonal) => self.d,
            (true, MassParam::Scalar) => 1,
        }
    }

    pub fn len(&self) -> usize {
        2 * self.d + 2 * self.k + self.n_mass()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn init(&self, q: &DiagGaussian, step_init: f64) -> Result<Vec<f64>> {
        check_dim(self.d, q.dim())?;
        let mut p = Vec::with_capacity(self.len());
        p.extend(&q.mean);
        p.extend(&q.log_std);
        if self.dais {
            p.extend(std::iter::repeat_n(0.0, self.k));
            p.extend(std::iter::repeat_n(softplus_inv(step_init), self.k));
            p.extend(std::iter::repeat_n(0.0, self.n_mass()));
        }
        Ok(p)
    }

    pub fn q0<R: Real>(&self, p: &[R]) -> DiagGaussian<R> {
        DiagGaussian {
            mean: p[..self.d].to_vec(),
            log_std: p[self.d..2 * self.d].to_vec(),
        }
    }

    pub fn dais_params<R: Real>(&self, p: &[R], n_leapfrog: usize) -> Result<DaisParams<R>> {
        if !self.dais {
            return Err(Error::Config("layout has no sampler parameters".into()));
        }
        let (d, k) = (self.d, self.k);
        let raw = p[2 * d..2 * d + k].to_vec();
        let step_sizes = p[2 * d + k..2 * d + 2 * k].iter().map(|s| s.softplus()).collect();
        let log_mass = &p[2 * d + 2 * k..];
        let mass_diag = match self.mass {
            MassParam::Diagonal => log_mass.iter().map(|l| l.exp()).collect(),
            MassParam::Scalar => vec![log_mass[0].exp(); d],
        };
        Ok(DaisParams {
            q0: self.q0(p),
            schedule: AnnealSchedule::from_raw(raw)?,
            hmc: HmcConfig {
                mass_diag,
                step_sizes,
                n_leapfrog,
            },
        })
    }
}

/// Evaluates the configured bound at flat parameters `p`.
pub fn bound_at<R: Real, T: Target, G: Rng + ?Sized>(
    layout: &ParamLayout,
    cfg: &TrainConfig,
    target: &T,
    p: &[R],
    rng: &mut G,
) -> Result<BoundEstimate<R>> {
    match cfg.method {
        Method::Vi => elbo_vi(&layout.q0(p), target, cfg.n_particles, rng),
        Method::Iwvi => elbo_iwvi(&layout.q0(p), target, cfg.n_particles, 1, rng),
        Method::Dais => {
            let params = layout.dais_params(p, cfg.n_leapfrog)?;
            let opts = DaisOptions {
                momentum: cfg.momentum,
                record_trajectories: false,
            };
            elbo_dais(&dais_forward(&params, target, cfg.n_particles, &opts, rng)?)
        }
        Method::Msc => Err(Error::Unsupported("MSC has no bound objective".into())),
    }
}

/// A bound as a deterministic function of the flat parameters: the random
/// stream is re-seeded on every evaluation.
pub struct BoundObjective<'a, T> {
    pub target: &'a T,
    pub layout: ParamLayout,
    pub cfg: TrainConfig,
    pub noise_seed: u64,
}

impl<T: Target> ScalarObjective for BoundObjective<'_, T> {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        match bound_at(&self.layout, &self.cfg, self.target, p, &mut rng) {
            Ok(b) => b.value,
            Err(_) => p[0].constant_like(f64::NAN),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub q: DiagGaussian,
    pub schedule: Option<AnnealSchedule>,
    pub hmc: Option<HmcConfig>,
    pub params: Vec<f64>,
    pub layout: ParamLayout,
    /// Bound value (or average chain log q for MSC) per iteration.
    pub trace: Vec<f64>,
    pub clip_events: usize,
}

impl TrainResult {
    pub fn dais_params(&self, n_leapfrog: usize) -> Result<DaisParams> {
        self.layout.dais_params(&self.params, n_leapfrog)
    }
}

/// Maximizes the configured bound with Adam, one batch of particles per step.
pub fn train_bound<T: Target>(target: &T, cfg: &TrainConfig, init_q: &DiagGaussian) -> Result<TrainResult> {
    cfg.validate()?;
    if cfg.method == Method::Msc {
        return Err(Error::Config("use train_msc for MSC".into()));
    }
    check_dim(target.dim(), init_q.dim())?;
    let layout = ParamLayout::new(init_q.dim(), cfg.method, cfg.k, cfg.mass);
    let mut params = layout.init(init_q, cfg.step_init)?;
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tape = Tape::new();
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut clip_events = 0;
    let mut grads = vec![0.0; params.len()];
    for it in 0..cfg.iters {
        tape.reset();
        {
            let leaves = tape.vars(&params);
            let diverged = |reason: String| Error::Diverged { iteration: it, reason };
            let bound = bound_at(&layout, cfg, target, &leaves, &mut rng).map_err(|e| diverged(e.to_string()))?;
            let value = bound.value.value();
            if !value.is_finite() {
                return Err(diverged(format!("bound is {value}")));
            }
            let g = tape.backward(bound.value).map_err(|e| diverged(e.to_string()))?;
            for (gi, leaf) in grads.iter_mut().zip(&leaves) {
                // descent on the negative bound
                *gi = -g.wrt(*leaf);
            }
            trace.push(value);
        }
        if clip_gradient(&mut grads, cfg.clip_norm) {
            clip_events += 1;
        }
        adam.step(&mut params, &grads).map_err(|e| Error::Diverged {
            iteration: it,
            reason: e.to_string(),
        })?;
        if layout.dais {
            let p = layout.dais_params(&params, cfg.n_leapfrog)?;
            if !p.schedule.is_strictly_increasing() {
                return Err(Error::Diverged {
                    iteration: it,
                    reason: "annealing schedule lost strict monotonicity".into(),
                });
            }
        }
        if it % 1000 == 0 {
            debug!("{} iter {it}: bound {:.6}", cfg.method.name(), trace[it]);
        }
    }
    if clip_events > 0 {
        debug!("{} clipped {clip_events} gradients", cfg.method.name());
    }
    finish(layout, params, trace, clip_events, cfg.n_leapfrog)
}

fn finish(
    layout: ParamLayout,
    params: Vec<f64>,
    trace: Vec<f64>,
    clip_events: usize,
    n_leapfrog: usize,
) -> Result<TrainResult> {
    let (schedule, hmc) = if layout.dais {
        let p = layout.dais_params(&params, n_leapfrog)?;
        (Some(p.schedule), Some(p.hmc))
    } else {
        (None, None)
    };
    Ok(TrainResult {
        q: layout.q0(&params),
        schedule,
        hmc,
        params,
        layout,
        trace,
        clip_events,
    })
}

/// Current state of one score-climbing chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MscChainState {
    pub z: Vec<f64>,
}

/// One i-SIR transition per chain: the current state plus `n − 1` fresh
/// proposals from `q`, resampled by importance weight.
pub fn msc_isir_step<T: Target, G: Rng + ?Sized>(
    chains: &mut [MscChainState],
    q: &DiagGaussian,
    target: &T,
    n: usize,
    rng: &mut G,
) -> Result<()> {
    if n < 2 {
        return Err(Error::Config("i-SIR needs N ≥ 2 candidates".into()));
    }
    check_dim(q.dim(), target.dim())?;
    let mut candidates = Vec::with_capacity(n);
    let mut log_w = Vec::with_capacity(n);
    for chain in chains.iter_mut() {
        check_dim(q.dim(), chain.z.len())?;
        candidates.clear();
        log_w.clear();
        candidates.push(std::mem::take(&mut chain.z));
        for _ in 1..n {
            candidates.push(q.sample(rng));
        }
        for c in &candidates {
            log_w.push(target.log_density(c) - q.log_prob_unchecked(c));
        }
        let pick = categorical_from_log_weights(&log_w, rng)?;
        chain.z = candidates.swap_remove(pick);
    }
    Ok(())
}

/// Forward-KL fitting by ascending the score of `q` at the i-SIR chain
/// states, averaged over chains.
pub fn train_msc<T: Target>(target: &T, cfg: &TrainConfig, init_q: &DiagGaussian) -> Result<TrainResult> {
    cfg.validate()?;
    if cfg.method != Method::Msc {
        return Err(Error::Config("train_msc needs method = MSC".into()));
    }
    let d = init_q.dim();
    check_dim(target.dim(), d)?;
    let layout = ParamLayout::new(d, Method::Msc, 0, cfg.mass);
    let mut params = layout.init(init_q, cfg.step_init)?;
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut chains: Vec<MscChainState> = (0..cfg.n_chains)
        .map(|_| MscChainState {
            z: init_q.sample(&mut rng),
        })
        .collect();
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut clip_events = 0;
    let mut grads = vec![0.0; params.len()];
    let inv_chains = 1.0 / cfg.n_chains as f64;
    for it in 0..cfg.iters {
        let q = layout.q0(&params);
        msc_isir_step(&mut chains, &q, target, cfg.n_particles, &mut rng).map_err(|e| Error::Diverged {
            iteration: it,
            reason: e.to_string(),
        })?;
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut avg_lq = 0.0;
        for chain in &chains {
            avg_lq += inv_chains * q.log_prob_unchecked(&chain.z);
            for i in 0..d {
                let inv_var = (-2.0 * q.log_std[i]).exp();
                let diff = chain.z[i] - q.mean[i];
                // negative score: descent direction for −log q
                grads[i] -= inv_chains * diff * inv_var;
                grads[d + i] -= inv_chains * (diff * diff * inv_var - 1.0);
            }
        }
        if !avg_lq.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                reason: format!("average chain log q is {avg_lq}"),
            });
        }
        trace.push(avg_lq);
        if clip_gradient(&mut grads, cfg.clip_norm) {
            clip_events += 1;
        }
        match cfg.msc_optimizer {
            MscOptimizer::Adam => adam.step(&mut params, &grads).map_err(|e| Error::Diverged {
                iteration: it,
                reason: e.to_string(),
            })?,
            MscOptimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(&grads) {
                    *p -= cfg.lr * g;
                }
            }
        }
    }
    finish(layout, params, trace, clip_events, cfg.n_leapfrog)
}

/// Trains with the loop matching `cfg.method`.
pub fn train<T: Target>(target: &T, cfg: &TrainConfig, init_q: &DiagGaussian) -> Result<TrainResult> {
    match cfg.method {
        Method::Msc => train_msc(target, cfg, init_q),
        _ => train_bound(target, cfg, init_q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, ParamVector};
    use crate::distributions::{GaussianTarget, IsotropicPairMixture};

    fn target_1d() -> GaussianTarget {
        GaussianTarget::normalized(DiagGaussian::new(vec![1.0], vec![0.5f64.ln()]).unwrap())
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut a = AdamState::new(1, 0.01);
        let mut p = [0.0];
        a.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert_eq!(a.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut a = AdamState::new(2, 0.1);
        let mut p = [0.3, -2.0];
        for _ in 0..50 {
            a.step(&mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, [0.3, -2.0]);
        assert!(a.step(&mut p, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut a = AdamState::new(1, 0.1);
        let mut p = [1.0];
        for _ in 0..200 {
            let g = [2.0 * p[0]];
            a.step(&mut p, &g).unwrap();
        }
        assert!(p[0].abs() < 0.1, "{}", p[0]);
    }

    #[test]
    fn clipping() {
        let mut g = [3.0, 4.0];
        assert!(clip_gradient(&mut g, 1.0));
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        assert!(!clip_gradient(&mut g, 2.0));
    }

    #[test]
    fn layout_roundtrip() {
        let q = DiagGaussian::new(vec![0.1, 0.2], vec![-0.1, 0.3]).unwrap();
        let l = ParamLayout::new(2, Method::Dais, 3, MassParam::Scalar);
        assert_eq!(l.len(), 2 + 2 + 3 + 3 + 1);
        let p = l.init(&q, 0.05).unwrap();
        let dp = l.dais_params(&p, 2).unwrap();
        assert_eq!(dp.q0, q);
        assert!(dp.hmc.step_sizes.iter().all(|s| (s - 0.05).abs() < 1e-12));
        assert_eq!(dp.hmc.mass_diag, vec![1.0, 1.0]);
        assert_eq!(dp.hmc.n_leapfrog, 2);
        assert!(dp.schedule.is_strictly_increasing());
        assert_eq!(ParamLayout::new(2, Method::Iwvi, 3, MassParam::Scalar).len(), 4);
    }

    #[test]
    fn vi_recovers_gaussian_target() {
        // 16 samples per step keep the score-term noise well inside the tolerance
        let cfg = TrainConfig::new(Method::Vi, 16, 0, 1e-2, 2000, 3);
        let r = train_bound(&target_1d(), &cfg, &DiagGaussian::standard(1)).unwrap();
        assert!((r.q.mean[0] - 1.0).abs() < 0.05, "{:?}", r.q);
        assert!((r.q.std()[0] - 0.5).abs() < 0.05, "{:?}", r.q);
        assert!(r.trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dais_training_keeps_constraints() {
        let m = IsotropicPairMixture::new(2, 0.25).unwrap();
        let mut cfg = TrainConfig::new(Method::Dais, 4, 4, 1e-2, 200, 5);
        cfg.mass = MassParam::Scalar;
        let init = DiagGaussian::new(vec![0.5, 0.5], vec![0.0, 0.0]).unwrap();
        let r = train_bound(&m, &cfg, &init).unwrap();
        let hmc = r.hmc.unwrap();
        assert!(hmc.step_sizes.iter().all(|s| *s > 0.0));
        assert!(hmc.mass_diag.iter().all(|s| *s > 0.0));
        assert!(r.schedule.unwrap().is_strictly_increasing());
        assert_eq!(r.trace.len(), 200);
    }

    #[test]
    fn dais_gradient_matches_finite_differences() {
        let m = IsotropicPairMixture::new(3, 0.25).unwrap();
        let mut cfg = TrainConfig::new(Method::Dais, 2, 4, 1e-2, 1, 0);
        cfg.step_init = 0.1;
        let layout = ParamLayout::new(3, Method::Dais, 4, MassParam::Diagonal);
        let init = DiagGaussian::new(vec![0.4, 0.5, 0.6], vec![-0.2, 0.0, 0.1]).unwrap();
        let mut values = layout.init(&init, cfg.step_init).unwrap();
        // move off the symmetric initialization so every block matters
        for (i, v) in values.iter_mut().enumerate() {
            *v += 0.03 * ((i * 7) % 5) as f64 - 0.05;
        }
        let obj = BoundObjective {
            target: &m,
            layout,
            cfg,
            noise_seed: 42,
        };
        let mut p = ParamVector::new("dais", values);
        let err = finite_diff_check(&obj, &mut p, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn isir_with_exact_proposal_is_uniform() {
        let q = DiagGaussian::standard(1);
        let t = GaussianTarget::normalized(q.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut kept = 0;
        let trials = 20_000;
        for _ in 0..trials {
            let mut chains = vec![MscChainState { z: vec![0.123] }];
            msc_isir_step(&mut chains, &q, &t, 4, &mut rng).unwrap();
            if chains[0].z[0] == 0.123 {
                kept += 1;
            }
        }
        let p = kept as f64 / trials as f64;
        assert!((p - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / trials as f64).sqrt(), "{p}");
    }

    #[test]
    fn isir_retains_mode_against_far_proposals() {
        let t = GaussianTarget::normalized(DiagGaussian::standard(1));
        let q = DiagGaussian::new(vec![40.0], vec![-3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let mut chains = vec![MscChainState { z: vec![0.0] }];
            msc_isir_step(&mut chains, &q, &t, 8, &mut rng).unwrap();
            assert_eq!(chains[0].z, vec![0.0]);
        }
    }

    #[test]
    fn isir_chain_is_invariant_for_target() {
        let t = GaussianTarget::normalized(DiagGaussian::standard(1));
        let q = DiagGaussian::isotropic(vec![0.0], 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut chains = vec![MscChainState { z: vec![0.0] }];
        let n = 100_000;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            msc_isir_step(&mut chains, &q, &t, 4, &mut rng).unwrap();
            xs.push(chains[0].z[0]);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        // batch means absorb the autocorrelation
        let b = 1000;
        let bm: Vec<f64> = xs.chunks(b).map(|c| c.iter().sum::<f64>() / b as f64).collect();
        let nb = bm.len() as f64;
        let se = (bm.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (nb - 1.0) / nb).sqrt();
        assert!(mean.abs() < 4.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn msc_zero_lr_is_fixed_point() {
        let mut cfg = TrainConfig::new(Method::Msc, 4, 0, 0.0, 50, 1);
        cfg.n_chains = 2;
        let init = DiagGaussian::new(vec![0.2], vec![0.1]).unwrap();
        let r = train_msc(&target_1d(), &cfg, &init).unwrap();
        assert_eq!(r.q, init);
        cfg.msc_optimizer = MscOptimizer::Sgd;
        let r = train_msc(&target_1d(), &cfg, &init).unwrap();
        assert_eq!(r.q, init);
    }

    #[test]
    fn configs_are_validated() {
        let init = DiagGaussian::standard(1);
        let cfg = TrainConfig::new(Method::Dais, 4, 0, 1e-2, 1, 0);
        assert!(train(&target_1d(), &cfg, &init).is_err());
        let cfg = TrainConfig::new(Method::Msc, 1, 0, 1e-2, 1, 0);
        assert!(train(&target_1d(), &cfg, &init).is_err());
        let cfg = TrainConfig::new(Method::Vi, 1, 0, 1e-2, 1, 0);
        assert!(train(&target_1d(), &cfg, &DiagGaussian::standard(2)).is_err());
    }
}
