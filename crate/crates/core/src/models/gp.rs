//! GP regression on a fixed 1-D grid with a Gaussian likelihood. The latent
//! values at the observed grid points are the inference target; the analytic
//! posterior and the grid-wide predictive serve as references.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConstMatrix, Real};
use crate::distributions::{standard_normal_vec, Target, LN_2PI};
use crate::error::{check_dim, Error, Result};

pub const GRID_POINTS: usize = 75;
pub const GRID_MAX: f64 = 10.0;
pub const JITTER: f64 = 1e-8;
pub const NOISE_VAR: f64 = 0.1;
pub const RHO_1: f64 = 0.8;
pub const RHO_2: f64 = 3.0;

pub fn rbf_kernel(t: f64, s: f64, rho: f64) -> f64 {
    debug_assert!(rho > 0.0);
    (-(t - s).powi(2) / (2.0 * rho * rho)).exp()
}

pub fn kernel_matrix(a: &[f64], b: &[f64], rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| rbf_kernel(a[i], b[j], rho))
}

fn jittered(mut k: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..k.nrows() {
        k[(i, i)] += JITTER;
    }
    k
}

fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Numerical(format!("Cholesky of {what} failed")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSpec {
    pub grid: Vec<f64>,
    pub rho: f64,
    pub noise_var: f64,
    pub observed_idx: Vec<usize>,
    /// Empty until observations are attached.
    pub y: Vec<f64>,
    pub seed: u64,
}

impl GpSpec {
    pub fn new(rho: f64, noise_var: f64, observed_idx: Vec<usize>) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::Config(format!("lengthscale must be positive, got {rho}")));
        }
        if !(noise_var >= 0.0) {
            return Err(Error::Config(format!("noise variance must be non-negative, got {noise_var}")));
        }
        if observed_idx.is_empty() {
            return Err(Error::Config("observed index set is empty".into()));
        }
        let mut seen = [false; GRID_POINTS];
        for &i in &observed_idx {
            if i >= GRID_POINTS || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("observed index {i} out of range or repeated")));
            }
        }
        let grid = (0..GRID_POINTS)
            .map(|i| GRID_MAX * i as f64 / (GRID_POINTS - 1) as f64)
            .collect();
        Ok(Self {
            grid,
            rho,
            noise_var,
            observed_idx,
            y: Vec::new(),
            seed: 0,
        })
    }

    /// Draws the observed positions and one dataset from the prior using
    /// `seed`. Returns the spec with observations and the true latent process.
    pub fn random(rho: f64, d: usize, seed: u64) -> Result<(Self, Vec<f64>)> {
        if d == 0 || d > GRID_POINTS {
            return Err(Error::Config(format!("observed count {d} outside 1..={GRID_POINTS}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, GRID_POINTS, d).into_vec();
        idx.sort_unstable();
        let mut spec = Self::new(rho, NOISE_VAR, idx)?;
        spec.seed = seed;
        let (f, y) = gp_generate(&spec, &mut rng)?;
        spec.y = y;
        Ok((spec, f))
    }

    pub fn with_observations(mut self, y: Vec<f64>) -> Result<Self> {
        check_dim(self.observed_idx.len(), y.len())?;
        self.y = y;
        Ok(self)
    }

    pub fn d(&self) -> usize {
        self.observed_idx.len()
    }

    pub fn observed_points(&self) -> Vec<f64> {
        self.observed_idx.iter().map(|&i| self.grid[i]).collect()
    }

    /// Σ_oo with jitter.
    pub fn prior_cov(&self) -> DMatrix<f64> {
        let t = self.observed_points();
        jittered(kernel_matrix(&t, &t, self.rho))
    }

    pub fn target(&self) -> Result<GpTarget> {
        GpTarget::new(self)
    }

    fn require_y(&self) -> Result<()> {
        if self.y.len() != self.d() {
            return Err(Error::Config("GP spec has no observations attached".into()));
        }
        Ok(())
    }
}

/// Samples f ~ N(0, K_grid) and y = f[I] + √σ²·ε. The `y` stored in `spec` is
/// ignored.
pub fn gp_generate<G: Rng + ?Sized>(spec: &GpSpec, rng: &mut G) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = jittered(kernel_matrix(&spec.grid, &spec.grid, spec.rho));
    let chol = cholesky(k, "the grid kernel")?;
    let eps = DVector::from_vec(standard_normal_vec(rng, spec.grid.len()));
    let f = chol.l() * eps;
    let noise = standard_normal_vec(rng, spec.d());
    let sd = spec.noise_var.sqrt();
    let y = spec
        .observed_idx
        .iter()
        .zip(&noise)
        .map(|(&i, e)| f[i] + sd * e)
        .collect();
    Ok((f.as_slice().to_vec(), y))
}

/// Unnormalized posterior over the latent values at the observed points:
/// log N(z; 0, Σ_oo) + log N(y; z, σ²I).
#[derive(Debug, Clone)]
pub struct GpTarget {
    y: Vec<f64>,
    noise_var: f64,
    /// L⁻¹ where Σ_oo = LLᵀ.
    linv: Arc<ConstMatrix>,
    linv_t: Arc<ConstMatrix>,
    log_const: f64,
    log_evidence: f64,
}

impl GpTarget {
    pub fn new(spec: &GpSpec) -> Result<Self> {
        spec.require_y()?;
        if !(spec.noise_var > 0.0) {
            return Err(Error::Config("GP target needs a positive noise variance".into()));
        }
        let d = spec.d();
        let sigma = spec.prior_cov();
        let chol = cholesky(sigma.clone(), "Σ_oo")?;
        let l = chol.l();
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        let linv_c = ConstMatrix::from_fn(d, d, |i, j| linv[(i, j)]);
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let dd = d as f64;
        let log_const = -0.5 * log_det - dd * LN_2PI - 0.5 * dd * spec.noise_var.ln();

        let mut marg = sigma;
        for i in 0..d {
            marg[(i, i)] += spec.noise_var;
        }
        let mchol = cholesky(marg, "Σ_oo + σ²I")?;
        let alpha = mchol.solve(&DVector::from_column_slice(&spec.y));
        let quad = alpha.dot(&DVector::from_column_slice(&spec.y));
        let mlog_det = 2.0 * mchol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_evidence = -0.5 * (quad + mlog_det + dd * LN_2PI);

        Ok(Self {
            y: spec.y.clone(),
            noise_var: spec.noise_var,
            linv_t: Arc::new(linv_c.transpose()),
            linv: Arc::new(linv_c),
            log_const,
            log_evidence,
        })
    }

    fn whiten<R: Real>(&self, z: &[R]) -> Vec<R> {
        R::mat_vec(&self.linv, z)
    }

    fn eval<R: Real>(&self, z: &[R], want_value: bool) -> (Option<R>, Vec<R>) {
        let u = self.whiten(z);
        let inv_noise = 1.0 / self.noise_var;
        let resid: Vec<R> = z.iter().zip(&self.y).map(|(&zi, &yi)| -(zi - yi)).collect();
        let grad = R::mat_vec(&self.linv_t, &u)
            .into_iter()
            .zip(&resid)
            .map(|(pu, &r)| r * inv_noise - pu)
            .collect();
        let value = want_value.then(|| {
            let prior = R::dot(&u, &u);
            let lik = R::dot(&resid, &resid) * inv_noise;
            (prior + lik) * -0.5 + self.log_const
        });
        (value, grad)
    }
}

impl Target for GpTarget {
    fn dim(&self) -> usize {
        self.y.len()
    }

    fn log_density<R: Real>(&self, z: &[R]) -> R {
        let u = self.whiten(z);
        let resid: Vec<R> = z.iter().zip(&self.y).map(|(&zi, &yi)| zi - yi).collect();
        (R::dot(&u, &u) + R::dot(&resid, &resid) / self.noise_var) * -0.5 + self.log_const
    }

    fn grad_log_density<R: Real>(&self, z: &[R]) -> Vec<R> {
        self.eval(z, false).1
    }

    fn log_density_and_grad<R: Real>(&self, z: &[R]) -> (R, Vec<R>) {
        let (v, g) = self.eval(z, true);
        (v.expect("value requested"), g)
    }

    /// The marginal likelihood log N(y; 0, Σ_oo + σ²I).
    fn log_normalizer(&self) -> Option<f64> {
        Some(self.log_evidence)
    }
}

/// m⁺ = Σ(Σ + σ²I)⁻¹y and Σ⁺ = Σ − Σ(Σ + σ²I)⁻¹Σ with the jittered Σ_oo.
pub fn gp_analytic_posterior(spec: &GpSpec) -> Result<(DVector<f64>, DMatrix<f64>)> {
    spec.require_y()?;
    let sigma = spec.prior_cov();
    let mut a = sigma.clone();
    for i in 0..spec.d() {
        a[(i, i)] += spec.noise_var;
    }
    let chol = cholesky(a, "Σ_oo + σ²I")?;
    let m = &sigma * chol.solve(&DVector::from_column_slice(&spec.y));
    let s = &sigma - &sigma * chol.solve(&sigma);
    Ok((m, (&s + s.transpose()) * 0.5))
}

/// Mean and marginal standard deviations of a Gaussian, dropping correlations.
pub fn diagonalized(m_plus: &DVector<f64>, sigma_plus: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let std = sigma_plus.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    (m_plus.as_slice().to_vec(), std)
}

/// The MAE reference: analytic posterior mean and marginal standard deviations.
pub fn gp_diagonalized_reference(spec: &GpSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, s) = gp_analytic_posterior(spec)?;
    Ok(diagonalized(&m, &s))
}

/// Posterior over the whole grid given a Gaussian N(m⁺, Σ⁺) over the observed
/// values, extended through the prior conditional p(f_u | f_o).
pub fn gp_joint_predictive(
    spec: &GpSpec,
    m_plus: &DVector<f64>,
    sigma_plus: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = spec.d();
    check_dim(d, m_plus.len())?;
    check_dim(d, sigma_plus.nrows())?;
    check_dim(d, sigma_plus.ncols())?;
    let n = spec.grid.len();
    let mut observed = vec![false; n];
    for &i in &spec.observed_idx {
        observed[i] = true;
    }
    let un_idx: Vec<usize> = (0..n).filter(|&i| !observed[i]).collect();
    let t_o = spec.observed_points();
    let t_u: Vec<f64> = un_idx.iter().map(|&i| spec.grid[i]).collect();

    let chol = cholesky(spec.prior_cov(), "Σ_oo")?;
    let s_ou = kernel_matrix(&t_o, &t_u, spec.rho);
    // A = Σ_uo Σ_oo⁻¹
    let a = chol.solve(&s_ou).transpose();
    let mean_u = &a * m_plus;
    let cov_ou = sigma_plus * a.transpose();
    let s_uu = jittered(kernel_matrix(&t_u, &t_u, spec.rho));
    let cov_uu = &a * sigma_plus * a.transpose() + s_uu - &a * &s_ou;

    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    for (p, &gi) in spec.observed_idx.iter().enumerate() {
        mean[gi] = m_plus[p];
        for (q, &gj) in spec.observed_idx.iter().enumerate() {
            cov[(gi, gj)] = sigma_plus[(p, q)];
        }
        for (q, &gj) in un_idx.iter().enumerate() {
            cov[(gi, gj)] = cov_ou[(p, q)];
            cov[(gj, gi)] = cov_ou[(p, q)];
        }
    }
    for (p, &gi) in un_idx.iter().enumerate() {
        mean[gi] = mean_u[p];
        for (q, &gj) in un_idx.iter().enumerate() {
            cov[(gi, gj)] = 0.5 * (cov_uu[(p, q)] + cov_uu[(q, p)]);
        }
    }
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, ParamVector, ScalarObjective, Tape};

    fn single(y: f64) -> GpSpec {
        GpSpec::new(RHO_1, NOISE_VAR, vec![10]).unwrap().with_observations(vec![y]).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(rbf_kernel(2.5, 2.5, RHO_1), 1.0);
        assert!((rbf_kernel(1.0, 1.0 + RHO_2, RHO_2) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((rbf_kernel(0.0, 0.8, 0.8) - 0.6065306597126334).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(GpSpec::new(0.0, 0.1, vec![1]).is_err());
        assert!(GpSpec::new(1.0, 0.1, vec![]).is_err());
        assert!(GpSpec::new(1.0, 0.1, vec![3, 3]).is_err());
        assert!(GpSpec::new(1.0, 0.1, vec![75]).is_err());
        let s = GpSpec::new(1.0, 0.1, vec![0, 74]).unwrap();
        assert_eq!(s.grid.len(), 75);
        assert_eq!(s.grid[74], 10.0);
        assert!(s.target().is_err());
    }

    #[test]
    fn scalar_posterior() {
        let (m, s) = gp_analytic_posterior(&single(1.0)).unwrap();
        // prior variance is 1 + jitter
        let pv = 1.0 + JITTER;
        assert!((m[0] - pv / (pv + 0.1)).abs() < 1e-15);
        assert!((m[0] - 1.0 / 1.1).abs() < 1e-8);
        assert!((s[(0, 0)] - 0.1 / 1.1).abs() < 1e-8);
    }

    #[test]
    fn scalar_target_optimum() {
        let t = single(1.0).target().unwrap();
        let g = t.grad_log_density(&[1.0 / 1.1]);
        assert!(g[0].abs() < 1e-6);
        let v = t.log_density(&[1.0 / 1.1]);
        assert!(v > t.log_density(&[0.9]) && v > t.log_density(&[0.92]));
    }

    #[test]
    fn zero_case_is_normalizers_only() {
        let t = single(0.0).target().unwrap();
        let expect = -0.5 * (1.0 + JITTER).ln() - LN_2PI - 0.5 * 0.1f64.ln();
        assert!((t.log_density(&[0.0]) - expect).abs() < 1e-14);
    }

    #[test]
    fn noiseless_generation_interpolates() {
        let mut spec = GpSpec::new(RHO_1, 0.0, vec![1, 5, 40]).unwrap();
        spec.seed = 3;
        let (f, y) = gp_generate(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for (k, &i) in spec.observed_idx.iter().enumerate() {
            assert_eq!(y[k], f[i]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, fa) = GpSpec::random(RHO_2, 25, 11).unwrap();
        let (b, fb) = GpSpec::random(RHO_2, 25, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(fa, fb);
        assert_eq!(a.d(), 25);
        assert!(a.observed_idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn prior_marginal_variance_is_one() {
        let spec = GpSpec::new(RHO_1, NOISE_VAR, vec![0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 4000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let (f, _) = gp_generate(&spec, &mut rng).unwrap();
            for (a, &i) in acc.iter_mut().zip(&[0usize, 37, 74]) {
                *a += f[i] * f[i];
            }
        }
        // Var of the sample second moment of a unit normal is 2/n.
        let tol = 4.0 * (2.0 / n as f64).sqrt();
        for a in acc {
            assert!((a / n as f64 - 1.0).abs() < tol, "{a}");
        }
    }

    struct Obj<'a>(&'a GpTarget);
    impl ScalarObjective for Obj<'_> {
        fn eval<R: Real>(&self, p: &[R]) -> R {
            self.0.log_density(p)
        }
    }

    #[test]
    fn target_gradient_matches_finite_differences() {
        for rho in [RHO_1, RHO_2] {
            let (spec, _) = GpSpec::random(rho, 10, 2).unwrap();
            let t = spec.target().unwrap();
            let (m, _) = gp_analytic_posterior(&spec).unwrap();
            let z: Vec<f64> = m.iter().enumerate().map(|(i, v)| v + 0.05 * (i as f64 - 4.0)).collect();
            let g = t.grad_log_density(&z);
            let (v2, g2) = t.log_density_and_grad(&z);
            assert_eq!(g, g2);
            assert_eq!(v2, t.log_density(&z));
            if rho == RHO_1 {
                let mut p = ParamVector::new("z", z.clone());
                let err = finite_diff_check(&Obj(&t), &mut p, 1e-6).unwrap();
                assert!(err < 1e-6, "{err}");
                for (a, b) in g.iter().zip(&p.grads) {
                    assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
                }
            }
        }
    }

    fn hessian(t: &GpTarget, z: &[f64]) -> DMatrix<f64> {
        let d = z.len();
        let mut h = DMatrix::zeros(d, d);
        for i in 0..d {
            let tape = Tape::new();
            let zs = tape.vars(z);
            let g = t.grad_log_density(&zs);
            let grads = tape.backward(g[i]).unwrap();
            for j in 0..d {
                h[(i, j)] = grads.wrt(zs[j]);
            }
        }
        h
    }

    #[test]
    fn posterior_matches_stationarity_and_inverse_hessian() {
        let (spec, _) = GpSpec::random(RHO_1, 10, 4).unwrap();
        let t = spec.target().unwrap();
        let (m, s) = gp_analytic_posterior(&spec).unwrap();
        let g = t.grad_log_density(m.as_slice());
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "{norm}");
        let prec = -hessian(&t, m.as_slice());
        let inv = prec.try_inverse().unwrap();
        let err = (&inv - &s).abs().max();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn posterior_covariance_is_psd_with_unit_bounded_diagonal() {
        let (spec, _) = GpSpec::random(RHO_1, 10, 5).unwrap();
        let (_, s) = gp_analytic_posterior(&spec).unwrap();
        assert!((&s - s.transpose()).abs().max() < 1e-15);
        let eig = s.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
        assert!(s.diagonal().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn uninformative_likelihood_returns_prior() {
        let (spec, _) = GpSpec::random(RHO_1, 10, 6).unwrap();
        let mut wide = spec.clone();
        wide.noise_var = 1e6;
        let (_, s) = gp_analytic_posterior(&wide).unwrap();
        assert!((&s - spec.prior_cov()).abs().max() < 1e-3);
    }

    #[test]
    fn diagonalized_reference() {
        let m = DVector::from_vec(vec![0.3, -1.0]);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.25]));
        let (m2, sd) = diagonalized(&m, &s);
        let back = DMatrix::from_diagonal(&DVector::from_vec(sd.iter().map(|v| v * v).collect()));
        assert_eq!(m2, vec![0.3, -1.0]);
        assert!((back - s).abs().max() < 1e-16);

        let (spec, _) = GpSpec::random(RHO_1, 10, 1).unwrap();
        let (rm, rs) = gp_diagonalized_reference(&spec).unwrap();
        let (m, s) = gp_analytic_posterior(&spec).unwrap();
        assert_eq!(rm, m.as_slice());
        for i in 0..10 {
            assert!(rs[i] > 0.0);
            assert_eq!(rs[i], s[(i, i)].sqrt());
        }
    }

    #[test]
    fn joint_predictive_full_grid_is_identity() {
        let all: Vec<usize> = (0..GRID_POINTS).collect();
        let spec = GpSpec::new(RHO_1, NOISE_VAR, all).unwrap();
        let m = DVector::from_fn(GRID_POINTS, |i, _| (i as f64).sin());
        let s = DMatrix::from_fn(GRID_POINTS, GRID_POINTS, |i, j| if i == j { 0.1 } else { 0.0 });
        let (pm, ps) = gp_joint_predictive(&spec, &m, &s).unwrap();
        assert_eq!(pm, m);
        assert_eq!(ps, s);
    }

    #[test]
    fn joint_predictive_interpolates_observed() {
        let (spec, _) = GpSpec::random(RHO_1, 10, 8).unwrap();
        let (m, s) = gp_analytic_posterior(&spec).unwrap();
        let (pm, ps) = gp_joint_predictive(&spec, &m, &s).unwrap();
        for (p, &gi) in spec.observed_idx.iter().enumerate() {
            assert_eq!(pm[gi], m[p]);
            assert_eq!(ps[(gi, gi)], s[(p, p)]);
        }
        assert!(ps.diagonal().iter().all(|&v| v > -1e-9 && v < 1.0 + 1e-6));

        let zero = DMatrix::zeros(10, 10);
        let (_, pz) = gp_joint_predictive(&spec, &m, &zero).unwrap();
        for &gi in &spec.observed_idx {
            assert_eq!(pz[(gi, gi)], 0.0);
        }
    }

    #[test]
    fn log_evidence_matches_quadrature() {
        let t = single(0.7).target().unwrap();
        let q = crate::distributions::Quadrature1d::default();
        let z = q.log_integral(|x| t.log_density(&[x]));
        assert!((z - t.log_normalizer().unwrap()).abs() < 1e-9);
    }
}
