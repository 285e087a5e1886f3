//! Grid execution for each experiment.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{Experiment, ExperimentConfig, Scheme};
use super::metrics::*;
use crate::distributions::{DiagGaussian, Target};
use crate::error::{Error, Result};
use crate::estimators::{dais_forward, dais_moment_estimator, weighted_moments, DaisOptions};
use crate::inference::{train, Method, TrainConfig, TrainResult};
use crate::models::gp::diagonalized;
use crate::models::{gp_analytic_posterior, gp_joint_predictive, BimodalSpec, DatasetSchema, GpSpec, LogRegSpec};
use crate::samplers::{categorical_from_log_weights, mh_hmc_sample, MhHmcConfig};
use crate::theory::{n_particle_gap_mc, verify_js_limit, GaussianPath};

// Stream tags for derived seeds.
const TAG_TRAIN: u64 = 1;
const TAG_EVAL: u64 = 2;
const TAG_GP_DATA: u64 = 3;
const TAG_HMC: u64 = 4;
const TAG_THEORY: u64 = 5;

/// Rows produced by one run, in grid order, and the files written.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRow>,
    pub summary: Vec<SummaryRow>,
    pub timings: Vec<TimingRow>,
    pub files: Vec<PathBuf>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Bimodal => run_bimodal(cfg),
        Experiment::Gp => run_gp(cfg),
        Experiment::Logreg => run_logreg(cfg),
        Experiment::Theory => run_theory(cfg),
        Experiment::Moments => run_moments(cfg),
    }
}

fn method_code(m: Method) -> u64 {
    match m {
        Method::Vi => 0,
        Method::Iwvi => 1,
        Method::Dais => 2,
        Method::Msc => 3,
    }
}

/// One training run shared by the schemes that read off the same model.
#[derive(Debug, Clone)]
struct Job {
    setting_idx: usize,
    setting: String,
    /// `(position in the method list, scheme)`.
    schemes: Vec<(usize, Scheme)>,
    n: usize,
    k: usize,
    d: usize,
    seed: u64,
}

impl Job {
    fn method(&self) -> Method {
        self.schemes[0].1.train_method()
    }

    fn chains(&self) -> usize {
        self.schemes[0].1.chains()
    }

    fn seed_parts(&self) -> [u64; 6] {
        [
            self.setting_idx as u64,
            self.d as u64,
            method_code(self.method()) * 1000 + self.chains() as u64,
            self.n as u64,
            self.k as u64,
            self.seed,
        ]
    }
}

/// Jobs for every setting × method family × N × K × seed; K-independent
/// methods get a single K = 0 entry.
fn build_jobs(cfg: &ExperimentConfig, settings: &[(String, usize)]) -> Vec<Job> {
    let mut families: Vec<Vec<(usize, Scheme)>> = Vec::new();
    for (i, s) in cfg.methods.iter().enumerate() {
        match families
            .iter_mut()
            .find(|f| f[0].1.train_method() == s.train_method() && f[0].1.chains() == s.chains())
        {
            Some(f) => f.push((i, *s)),
            None => families.push(vec![(i, *s)]),
        }
    }
    let mut jobs = Vec::new();
    for (si, (name, d)) in settings.iter().enumerate() {
        for fam in &families {
            let ks: Vec<usize> = if fam[0].1.uses_k() { cfg.k.clone() } else { vec![0] };
            for &n in &cfg.n_particles {
                for &k in &ks {
                    for &seed in &cfg.seeds {
                        jobs.push(Job {
                            setting_idx: si,
                            setting: name.clone(),
                            schemes: fam.clone(),
                            n,
                            k,
                            d: *d,
                            seed,
                        });
                    }
                }
            }
        }
    }
    jobs
}

/// What a problem reports about one fitted Gaussian.
#[derive(Debug, Clone, Copy)]
struct Eval {
    mae_mean: f64,
    mae_std: f64,
    avg_log_density: f64,
    distances: Option<ModeDistances>,
}

trait Problem: Sync {
    type T: Target;
    fn target(&self) -> &Self::T;
    fn evaluate(&self, q: &DiagGaussian, cfg: &ExperimentConfig, seed: u64) -> Result<Eval>;
}

struct SchemeResult {
    order: (usize, usize, usize, usize, usize),
    row: MetricsRow,
    timing: TimingRow,
    q: Option<DiagGaussian>,
}

fn train_config(cfg: &ExperimentConfig, job: &Job, method: Method) -> TrainConfig {
    let mut tc = TrainConfig::new(
        method,
        job.n,
        job.k,
        cfg.lr.get(method),
        cfg.iterations,
        derive_seed(cfg.master_seed, TAG_TRAIN, &job.seed_parts()),
    );
    tc.n_chains = job.chains();
    tc.mass = cfg.mass;
    tc.n_leapfrog = cfg.n_leapfrog;
    tc
}

/// Importance resampling from `q`: each draw picks one of a fresh batch of
/// `proposals` candidates. Returns the sample mean and std.
fn sir_moments<T: Target>(
    q: &DiagGaussian,
    target: &T,
    draws: usize,
    proposals: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut picked = Vec::with_capacity(draws);
    let mut cands = Vec::with_capacity(proposals);
    let mut lw = Vec::with_capacity(proposals);
    for _ in 0..draws {
        cands.clear();
        lw.clear();
        for _ in 0..proposals {
            let z = q.sample(rng);
            lw.push(target.log_density(&z) - q.log_prob_unchecked(&z));
            cands.push(z);
        }
        let i = categorical_from_log_weights(&lw, rng)?;
        picked.push(cands.swap_remove(i));
    }
    let uniform = vec![0.0; draws];
    let row = weighted_moments(&picked, &uniform, &[draws])?.pop().unwrap();
    Ok((row.mean, row.std))
}

/// The Gaussian each scheme hands to the metrics.
fn read_off<T: Target>(
    scheme: Scheme,
    res: &TrainResult,
    target: &T,
    cfg: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DiagGaussian> {
    let (mean, std) = match scheme {
        Scheme::IwviSir => sir_moments(&res.q, target, cfg.sir_draws, cfg.sir_proposals, rng)?,
        Scheme::Dais => {
            let params = res.dais_params(cfg.n_leapfrog)?;
            let run = dais_forward::<f64, _, _>(&params, target, cfg.dais_samples, &DaisOptions::default(), rng)?;
            let row = dais_moment_estimator(&run, &[cfg.dais_samples])?.pop().unwrap();
            (row.mean, row.std)
        }
        _ => return Ok(res.q.clone()),
    };
    if mean.iter().chain(&std).any(|x| !x.is_finite()) || std.iter().any(|s| *s <= 0.0) {
        return Err(Error::Numerical(format!("{} read-off has degenerate moments", scheme.label())));
    }
    DiagGaussian::from_std(mean, &std)
}

fn run_job<P: Problem>(problem: &P, job: &Job, cfg: &ExperimentConfig, init_q: &DiagGaussian) -> Vec<SchemeResult> {
    let method = job.method();
    let start = Instant::now();
    let trained = train(problem.target(), &train_config(cfg, job, method), init_q);
    let train_time = start.elapsed().as_secs_f64();
    job.schemes
        .iter()
        .map(|&(mi, scheme)| {
            let t0 = Instant::now();
            let eval_seed = derive_seed(cfg.master_seed, TAG_EVAL, &job.seed_parts());
            let outcome = trained.as_ref().map_err(|e| e.to_string()).and_then(|res| {
                let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
                rng.set_stream(mi as u64);
                let q = read_off(scheme, res, problem.target(), cfg, &mut rng).map_err(|e| e.to_string())?;
                let ev = problem.evaluate(&q, cfg, eval_seed).map_err(|e| e.to_string())?;
                if ![ev.mae_mean, ev.mae_std, ev.avg_log_density].iter().all(|x| x.is_finite()) {
                    return Err("non-finite metric".to_string());
                }
                Ok((q, ev, res.trace.last().copied()))
            });
            let k = if scheme.uses_k() { job.k } else { 0 };
            let base = MetricsRow {
                experiment: cfg.experiment.name().into(),
                setting: job.setting.clone(),
                method: scheme.label(),
                n: job.n,
                k,
                d: job.d,
                seed: job.seed,
                mae_mean: None,
                mae_std: None,
                avg_log_density: None,
                mode_class: ModeClass::Failed,
                distances: None,
                final_objective: None,
                error: None,
            };
            let (row, q) = match outcome {
                Ok((q, ev, obj)) => (
                    MetricsRow {
                        mae_mean: Some(ev.mae_mean),
                        mae_std: Some(ev.mae_std),
                        avg_log_density: Some(ev.avg_log_density),
                        mode_class: ev
                            .distances
                            .map(|dist| classify_mode_behavior(&dist, cfg.tau))
                            .unwrap_or(ModeClass::None),
                        distances: ev.distances,
                        final_objective: obj,
                        ..base
                    },
                    Some(q),
                ),
                Err(e) => {
                    warn!(
                        "{} {} N={} K={} d={} seed={} failed: {e}",
                        job.setting,
                        scheme.label(),
                        job.n,
                        k,
                        job.d,
                        job.seed
                    );
                    (MetricsRow { error: Some(e), ..base }, None)
                }
            };
            let timing = TimingRow {
                setting: row.setting.clone(),
                method: row.method.clone(),
                n: row.n,
                k: row.k,
                d: row.d,
                seed: row.seed,
                wall_time_s: train_time + t0.elapsed().as_secs_f64(),
            };
            let seed_pos = cfg.seeds.iter().position(|s| *s == job.seed).unwrap_or(0);
            let n_pos = cfg.n_particles.iter().position(|n| *n == job.n).unwrap_or(0);
            let k_pos = cfg.k.iter().position(|x| *x == job.k).unwrap_or(0);
            SchemeResult {
                order: (job.setting_idx, mi, n_pos, k_pos, seed_pos),
                row,
                timing,
                q,
            }
        })
        .collect()
}

/// Runs all jobs in parallel and returns results in grid order.
fn execute<P: Problem>(
    problems: &[P],
    jobs: &[Job],
    cfg: &ExperimentConfig,
    init_q: impl Fn(usize) -> DiagGaussian + Sync,
) -> Vec<SchemeResult> {
    let mut out: Vec<SchemeResult> = jobs
        .par_iter()
        .flat_map_iter(|job| {
            info!(
                "{} {} N={} K={} d={} seed={}",
                job.setting,
                job.schemes[0].1.label(),
                job.n,
                job.k,
                job.d,
                job.seed
            );
            run_job(&problems[job.setting_idx], job, cfg, &init_q(job.d))
        })
        .collect();
    out.sort_by_key(|r| r.order);
    out
}

fn finish(cfg: &ExperimentConfig, results: &[SchemeResult], mut files: Vec<PathBuf>) -> Result<RunOutput> {
    let metrics: Vec<MetricsRow> = results.iter().map(|r| r.row.clone()).collect();
    let timings: Vec<TimingRow> = results.iter().map(|r| r.timing.clone()).collect();
    let summary = summarize(&metrics);
    let paths = ["metrics.csv", "summary.csv", "timings.csv"].map(|n| cfg.out_dir.join(n));
    emit_csv(&metrics, &paths[0])?;
    emit_csv(&summary, &paths[1])?;
    emit_csv(&timings, &paths[2])?;
    files.extend(paths);
    Ok(RunOutput {
        metrics,
        summary,
        timings,
        files,
    })
}

fn standard_init(cfg: &ExperimentConfig) -> impl Fn(usize) -> DiagGaussian + Sync {
    let m = cfg.init_mean;
    move |d| DiagGaussian::isotropic(vec![m; d], 1.0).expect("unit std is valid")
}

struct BimodalProblem {
    target: crate::distributions::IsotropicPairMixture,
}

impl Problem for BimodalProblem {
    type T = crate::distributions::IsotropicPairMixture;

    fn target(&self) -> &Self::T {
        &self.target
    }

    fn evaluate(&self, q: &DiagGaussian, cfg: &ExperimentConfig, seed: u64) -> Result<Eval> {
        let (m, s) = self.target.moments();
        let (mae_mean, mae_std) = mae_metrics(q, &m, &s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let avg = avg_log_density(q, &self.target, cfg.n_eval, &mut rng)?;
        let dist = mode_distances(&q.mean, &self.target.mode_a, &self.target.mode_b)?;
        Ok(Eval {
            mae_mean,
            mae_std,
            avg_log_density: avg,
            distances: Some(dist),
        })
    }
}

/// Mixture of N(0, 0.25²I) and N(1, 0.25²I) for each d.
pub fn run_bimodal(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let settings: Vec<(String, usize)> = cfg.d.iter().map(|&d| (format!("d{d}"), d)).collect();
    let problems = cfg
        .d
        .iter()
        .map(|&d| {
            Ok(BimodalProblem {
                target: BimodalSpec::new(d)?.target()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs = build_jobs(cfg, &settings);
    let results = execute(&problems, &jobs, cfg, standard_init(cfg));
    finish(cfg, &results, Vec::new())
}

struct GpProblem {
    spec: GpSpec,
    target: crate::models::GpTarget,
    f_true: Vec<f64>,
    m_plus: DVector<f64>,
    s_plus: DMatrix<f64>,
    ref_mean: Vec<f64>,
    ref_std: Vec<f64>,
}

impl GpProblem {
    fn new(rho: f64, d: usize, seed: u64) -> Result<Self> {
        let (spec, f_true) = GpSpec::random(rho, d, seed)?;
        let (m_plus, s_plus) = gp_analytic_posterior(&spec)?;
        let (ref_mean, ref_std) = diagonalized(&m_plus, &s_plus);
        Ok(Self {
            target: spec.target()?,
            spec,
            f_true,
            m_plus,
            s_plus,
            ref_mean,
            ref_std,
        })
    }
}

impl Problem for GpProblem {
    type T = crate::models::GpTarget;

    fn target(&self) -> &Self::T {
        &self.target
    }

    fn evaluate(&self, q: &DiagGaussian, _cfg: &ExperimentConfig, _seed: u64) -> Result<Eval> {
        let (mae_mean, mae_std) = mae_metrics(q, &self.ref_mean, &self.ref_std)?;
        let var: Vec<f64> = self.ref_std.iter().map(|s| s * s).collect();
        Ok(Eval {
            mae_mean,
            mae_std,
            avg_log_density: gaussian_expected_log_density(q, &self.ref_mean, &var)?,
            distances: None,
        })
    }
}

/// Predictive mean and std over the whole grid for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct GpCurveRow {
    pub setting: String,
    pub d: usize,
    pub seed: u64,
    pub source: String,
    pub n: usize,
    pub k: usize,
    pub grid_index: usize,
    pub t: f64,
    pub observed: bool,
    pub mean: f64,
    pub std: f64,
}

impl CsvRow for GpCurveRow {
    fn header() -> Vec<&'static str> {
        vec!["setting", "d", "seed", "source", "N", "K", "grid_index", "t", "observed", "mean", "std"]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.setting.clone(),
            self.d.to_string(),
            self.seed.to_string(),
            self.source.clone(),
            self.n.to_string(),
            self.k.to_string(),
            self.grid_index.to_string(),
            fmt_f64(self.t),
            u8::from(self.observed).to_string(),
            fmt_f64(self.mean),
            fmt_f64(self.std),
        ]
    }
}

fn gp_setting_name(i: usize) -> String {
    format!("rbf{}", i + 1)
}

/// Settings (label, kernel index), problems, and (setting, seed) per problem.
type GpProblems = (Vec<(String, usize)>, Vec<GpProblem>, Vec<(usize, u64)>);

/// One generated instance per (kernel, d, seed), shared by all methods.
fn gp_problems(cfg: &ExperimentConfig) -> Result<GpProblems> {
    let mut settings = Vec::new();
    let mut problems = Vec::new();
    let mut keys = Vec::new();
    for (ri, &rho) in cfg.rho.iter().enumerate() {
        for &d in &cfg.d {
            for &seed in &cfg.seeds {
                let data_seed = derive_seed(cfg.master_seed, TAG_GP_DATA, &[ri as u64, d as u64, seed]);
                problems.push(GpProblem::new(rho, d, data_seed)?);
                settings.push((gp_setting_name(ri), d));
                keys.push((ri, seed));
            }
        }
    }
    Ok((settings, problems, keys))
}

fn gp_curve_rows(
    p: &GpProblem,
    setting: &str,
    seed: u64,
    source: &str,
    (n, k): (usize, usize),
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<Vec<GpCurveRow>> {
    let (m, c) = gp_joint_predictive(&p.spec, mean, cov)?;
    let mut observed = vec![false; p.spec.grid.len()];
    for &i in &p.spec.observed_idx {
        observed[i] = true;
    }
    Ok((0..p.spec.grid.len())
        .map(|i| GpCurveRow {
            setting: setting.into(),
            d: p.spec.d(),
            seed,
            source: source.into(),
            n,
            k,
            grid_index: i,
            t: p.spec.grid[i],
            observed: observed[i],
            mean: m[i],
            std: c[(i, i)].max(0.0).sqrt(),
        })
        .collect())
}

/// GP regression with RBF kernels; MAE against the analytic posterior.
pub fn run_gp(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (settings, problems, keys) = gp_problems(cfg)?;
    // Each problem is already seed-specific, so one job seed per problem.
    let mut jobs = Vec::new();
    for job in build_jobs(&ExperimentConfig { seeds: vec![0], ..cfg.clone() }, &settings) {
        let seed = keys[job.setting_idx].1;
        jobs.push(Job { seed, ..job });
    }
    let results = execute(&problems, &jobs, cfg, standard_init(cfg));

    let mut curves = Vec::new();
    for (pi, p) in problems.iter().enumerate() {
        let (setting, seed) = (&settings[pi].0, keys[pi].1);
        let truth = DVector::from_vec(p.f_true.to_vec());
        let grid_rows = (0..p.spec.grid.len()).map(|i| GpCurveRow {
            setting: setting.clone(),
            d: p.spec.d(),
            seed,
            source: "truth".into(),
            n: 0,
            k: 0,
            grid_index: i,
            t: p.spec.grid[i],
            observed: p.spec.observed_idx.contains(&i),
            mean: truth[i],
            std: 0.0,
        });
        curves.extend(grid_rows);
        curves.extend(gp_curve_rows(p, setting, seed, "analytic", (0, 0), &p.m_plus, &p.s_plus)?);
        let diag = DMatrix::from_diagonal(&DVector::from_iterator(
            p.ref_std.len(),
            p.ref_std.iter().map(|s| s * s),
        ));
        curves.extend(gp_curve_rows(p, setting, seed, "analytic_diag", (0, 0), &p.m_plus, &diag)?);
        for r in results.iter().filter(|r| r.order.0 == pi) {
            if let Some(q) = &r.q {
                let cov = DMatrix::from_diagonal(&DVector::from_iterator(q.dim(), q.std().iter().map(|s| s * s)));
                let mean = DVector::from_vec(q.mean.clone());
                curves.extend(gp_curve_rows(p, setting, seed, &r.row.method, (r.row.n, r.row.k), &mean, &cov)?);
            }
        }
    }
    let path = cfg.out_dir.join("curves_gp.csv");
    emit_csv(&curves, &path)?;
    finish(cfg, &results, vec![path])
}

struct LogRegProblem {
    spec: LogRegSpec,
    ref_mean: Vec<f64>,
    ref_std: Vec<f64>,
    samples: Vec<Vec<f64>>,
}

impl Problem for LogRegProblem {
    type T = LogRegSpec;

    fn target(&self) -> &Self::T {
        &self.spec
    }

    fn evaluate(&self, q: &DiagGaussian, _cfg: &ExperimentConfig, _seed: u64) -> Result<Eval> {
        let (mae_mean, mae_std) = mae_metrics(q, &self.ref_mean, &self.ref_std)?;
        Ok(Eval {
            mae_mean,
            mae_std,
            avg_log_density: avg_log_density_at(q, &self.samples)?,
            distances: None,
        })
    }
}

/// Cache file for HMC reference draws, keyed by the data, the sampler
/// settings and the seed.
pub fn hmc_cache_path(dir: &Path, name: &str, spec: &LogRegSpec, hmc: &MhHmcConfig, seed: u64) -> PathBuf {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    h.update((spec.n() as u64).to_le_bytes());
    h.update((spec.d as u64).to_le_bytes());
    for i in 0..spec.n() {
        for j in 0..spec.d - 1 {
            h.update(spec.feature(i, j).to_le_bytes());
        }
        h.update(spec.y[i].to_le_bytes());
    }
    h.update(hmc.eps_hmc.to_le_bytes());
    for v in [hmc.n_l, hmc.n_b, hmc.n_e, hmc.n_t] {
        h.update((v as u64).to_le_bytes());
    }
    h.update(seed.to_le_bytes());
    let hex: String = h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("{name}-{hex}.csv"))
}

/// HMC reference draws, read from the cache when present.
pub fn hmc_reference(
    name: &str,
    spec: &LogRegSpec,
    hmc: &MhHmcConfig,
    seed: u64,
    cache_dir: &Path,
) -> Result<Vec<Vec<f64>>> {
    let path = hmc_cache_path(cache_dir, name, spec, hmc, seed);
    if path.exists() {
        let mut rd = csv::Reader::from_path(&path)?;
        let mut out = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: line + 2,
                    msg: e.to_string(),
                })?;
            crate::error::check_dim(spec.d, row.len())?;
            out.push(row);
        }
        if out.len() == hmc.n_t {
            info!("HMC reference read from {}", path.display());
            return Ok(out);
        }
        warn!("ignoring truncated HMC cache {}", path.display());
    }
    info!("sampling HMC reference for {name} ({} transitions)", hmc.total_transitions());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = mh_hmc_sample(spec, hmc, &vec![0.0; spec.d], &mut rng)?;
    info!(
        "HMC acceptance {:.3} (burn-in {:.3})",
        res.acceptance, res.burn_in_acceptance
    );
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record((0..spec.d).map(|j| format!("z{j}")))?;
    for s in &res.samples {
        w.write_record(s.iter().map(|x| fmt_f64(*x)))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(res.samples)
}

/// Posterior mean and std per coordinate for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordCurveRow {
    pub setting: String,
    pub source: String,
    pub seed: u64,
    pub index: usize,
    pub mean: f64,
    pub std: f64,
}

impl CsvRow for CoordCurveRow {
    fn header() -> Vec<&'static str> {
        vec!["setting", "source", "seed", "index", "mean", "std"]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.setting.clone(),
            self.source.clone(),
            self.seed.to_string(),
            self.index.to_string(),
            fmt_f64(self.mean),
            fmt_f64(self.std),
        ]
    }
}

fn coord_rows(setting: &str, source: &str, seed: u64, mean: &[f64], std: &[f64]) -> Vec<CoordCurveRow> {
    mean.iter()
        .zip(std)
        .enumerate()
        .map(|(index, (m, s))| CoordCurveRow {
            setting: setting.into(),
            source: source.into(),
            seed,
            index,
            mean: *m,
            std: *s,
        })
        .collect()
}

/// Bayesian logistic regression against a Metropolis-corrected HMC reference.
pub fn run_logreg(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let schema_path = cfg.dataset.as_ref().expect("validated");
    let schema = DatasetSchema::from_file(schema_path)?;
    let spec = schema.load()?;
    if !cfg.d.is_empty() && cfg.d != [spec.d] {
        return Err(Error::Config(format!("dataset {} has d = {}, config says {:?}", schema.name, spec.d, cfg.d)));
    }
    let hmc = cfg.hmc.unwrap_or_else(MhHmcConfig::ionosphere);
    let hmc_seed = derive_seed(cfg.master_seed, TAG_HMC, &[]);
    let samples = hmc_reference(&schema.name, &spec, &hmc, hmc_seed, &cfg.hmc_cache_dir)?;
    let uniform = vec![0.0; samples.len()];
    let moments = weighted_moments(&samples, &uniform, &[samples.len()])?.pop().unwrap();
    let d = spec.d;
    let problem = LogRegProblem {
        spec,
        ref_mean: moments.mean,
        ref_std: moments.std,
        samples,
    };
    let jobs = build_jobs(cfg, &[(schema.name.clone(), d)]);
    let results = execute(std::slice::from_ref(&problem), &jobs, cfg, standard_init(cfg));

    let mut curves = coord_rows(&schema.name, "HMC", hmc_seed, &problem.ref_mean, &problem.ref_std);
    for r in &results {
        if let Some(q) = &r.q {
            let source = format!("{}_N{}_K{}", r.row.method, r.row.n, r.row.k);
            curves.extend(coord_rows(&schema.name, &source, r.row.seed, &q.mean, &q.std()));
        }
    }
    let path = cfg.out_dir.join("curves_logreg.csv");
    emit_csv(&curves, &path)?;
    finish(cfg, &results, vec![path])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow {
    pub target_mean: f64,
    pub target_std: f64,
    pub k: usize,
    pub k_gap: f64,
    pub d_js: f64,
    pub residual: f64,
    /// Log-log slope of the residual over the whole K list.
    pub slope: Option<f64>,
}

impl CsvRow for TheoryRow {
    fn header() -> Vec<&'static str> {
        vec!["target_mean", "target_std", "K", "k_gap", "d_js", "residual", "slope"]
    }

    fn record(&self) -> Vec<String> {
        vec![
            fmt_f64(self.target_mean),
            fmt_f64(self.target_std),
            self.k.to_string(),
            fmt_f64(self.k_gap),
            fmt_f64(self.d_js),
            fmt_f64(self.residual),
            fmt_opt(self.slope),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleGapRow {
    pub target_mean: f64,
    pub target_std: f64,
    pub n: usize,
    pub k: usize,
    pub gap: f64,
    pub stderr: f64,
}

impl CsvRow for ParticleGapRow {
    fn header() -> Vec<&'static str> {
        vec!["target_mean", "target_std", "N", "K", "gap", "stderr"]
    }

    fn record(&self) -> Vec<String> {
        vec![
            fmt_f64(self.target_mean),
            fmt_f64(self.target_std),
            self.n.to_string(),
            self.k.to_string(),
            fmt_f64(self.gap),
            fmt_f64(self.stderr),
        ]
    }
}

/// Theory output: the `K·gap` limit tables and the N-particle gaps.
#[derive(Debug, Clone, Default)]
pub struct TheoryOutput {
    pub limit: Vec<TheoryRow>,
    pub particles: Vec<ParticleGapRow>,
    pub files: Vec<PathBuf>,
}

/// Perfect-transition gaps on 1-D paths from N(0, 1).
pub fn theory_tables(cfg: &ExperimentConfig) -> Result<TheoryOutput> {
    let mut out = TheoryOutput::default();
    let k_mc = if cfg.k.contains(&16) { 16 } else { cfg.k[0] };
    for (ti, t) in cfg.theory_targets.iter().enumerate() {
        let path = GaussianPath::new(
            DiagGaussian::standard(1),
            DiagGaussian::from_std(vec![t.mean], &[t.std])?,
            0.0,
        )?;
        let table = verify_js_limit(&path, &cfg.k)?;
        out.limit.extend(table.rows.iter().map(|r| TheoryRow {
            target_mean: t.mean,
            target_std: t.std,
            k: r.k,
            k_gap: r.k_gap,
            d_js: table.d_js,
            residual: r.residual,
            slope: table.fitted_slope,
        }));
        let rows: Vec<Result<ParticleGapRow>> = cfg
            .n_particles
            .par_iter()
            .map(|&n| {
                let seed = derive_seed(cfg.master_seed, TAG_THEORY, &[ti as u64, n as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (gap, stderr) = n_particle_gap_mc(&path, n, k_mc, cfg.theory_n_mc, &mut rng)?;
                Ok(ParticleGapRow {
                    target_mean: t.mean,
                    target_std: t.std,
                    n,
                    k: k_mc,
                    gap,
                    stderr,
                })
            })
            .collect();
        for r in rows {
            out.particles.push(r?);
        }
    }
    Ok(out)
}

pub fn run_theory(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let t = theory_tables(cfg)?;
    let a = cfg.out_dir.join("curves_theory.csv");
    emit_csv(&t.limit, &a)?;
    let b = cfg.out_dir.join("curves_theory_particles.csv");
    emit_csv(&t.particles, &b)?;
    Ok(RunOutput {
        files: vec![a, b],
        ..Default::default()
    })
}

/// Moment errors of the weighted DAIS estimate after `n_samples` particles,
/// with `q0` rows that do not depend on the count.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCurveRow {
    pub setting: String,
    pub d: usize,
    pub seed: u64,
    pub source: String,
    pub n_samples: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub ess: Option<f64>,
}

impl CsvRow for MomentCurveRow {
    fn header() -> Vec<&'static str> {
        vec!["setting", "d", "seed", "source", "n_samples", "mae_mean", "mae_std", "ess"]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.setting.clone(),
            self.d.to_string(),
            self.seed.to_string(),
            self.source.clone(),
            self.n_samples.to_string(),
            fmt_f64(self.mae_mean),
            fmt_f64(self.mae_std),
            fmt_opt(self.ess),
        ]
    }
}

/// Trains DAIS on GP cells, then traces the DAIS moment estimate over
/// growing particle counts against the `q0` read-off.
pub fn run_moments(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (settings, problems, keys) = gp_problems(cfg)?;
    let dais_cfg = ExperimentConfig {
        methods: vec![Scheme::Dais0],
        n_particles: vec![cfg.n_particles[0]],
        k: vec![cfg.k[0]],
        ..cfg.clone()
    };
    let per_problem: Vec<Result<(MetricsRow, Vec<MomentCurveRow>)>> = problems
        .par_iter()
        .enumerate()
        .map(|(pi, p)| {
            let seed = keys[pi].1;
            let job = Job {
                setting_idx: pi,
                setting: settings[pi].0.clone(),
                schemes: vec![(0, Scheme::Dais0)],
                n: dais_cfg.n_particles[0],
                k: dais_cfg.k[0],
                d: p.spec.d(),
                seed,
            };
            let init = standard_init(cfg)(p.spec.d());
            let res = train(&p.target, &train_config(&dais_cfg, &job, Method::Dais), &init)?;
            let params = res.dais_params(cfg.n_leapfrog)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, TAG_EVAL, &job.seed_parts()));
            let run = dais_forward::<f64, _, _>(&params, &p.target, cfg.dais_samples, &DaisOptions::default(), &mut rng)?;
            let table = dais_moment_estimator(&run, &cfg.moment_prefixes)?;
            let (q_mean, q_std) = mae_metrics(&res.q, &p.ref_mean, &p.ref_std)?;
            let mut rows = Vec::with_capacity(2 * table.len());
            for m in &table {
                let (mm, ms) = mae_moments(&m.mean, &m.std, &p.ref_mean, &p.ref_std)?;
                rows.push(MomentCurveRow {
                    setting: job.setting.clone(),
                    d: job.d,
                    seed,
                    source: "DAIS".into(),
                    n_samples: m.n_samples,
                    mae_mean: mm,
                    mae_std: ms,
                    ess: Some(m.ess),
                });
            }
            for m in &table {
                rows.push(MomentCurveRow {
                    source: "q0".into(),
                    n_samples: m.n_samples,
                    mae_mean: q_mean,
                    mae_std: q_std,
                    ess: None,
                    ..rows[0].clone()
                });
            }
            let row = run_job_row(&job, cfg, &res, p)?;
            Ok((row, rows))
        })
        .collect();
    let mut metrics = Vec::new();
    let mut curves = Vec::new();
    for r in per_problem {
        let (m, c) = r?;
        metrics.push(m);
        curves.extend(c);
    }
    let path = cfg.out_dir.join("curves_moments.csv");
    emit_csv(&curves, &path)?;
    let summary = summarize(&metrics);
    let paths = ["metrics.csv", "summary.csv"].map(|n| cfg.out_dir.join(n));
    emit_csv(&metrics, &paths[0])?;
    emit_csv(&summary, &paths[1])?;
    let mut files = vec![path];
    files.extend(paths);
    Ok(RunOutput {
        metrics,
        summary,
        timings: Vec::new(),
        files,
    })
}

fn run_job_row(job: &Job, cfg: &ExperimentConfig, res: &TrainResult, p: &GpProblem) -> Result<MetricsRow> {
    let ev = p.evaluate(&res.q, cfg, 0)?;
    Ok(MetricsRow {
        experiment: cfg.experiment.name().into(),
        setting: job.setting.clone(),
        method: Scheme::Dais0.label(),
        n: job.n,
        k: job.k,
        d: job.d,
        seed: job.seed,
        mae_mean: Some(ev.mae_mean),
        mae_std: Some(ev.mae_std),
        avg_log_density: Some(ev.avg_log_density),
        mode_class: ModeClass::None,
        distances: None,
        final_objective: res.trace.last().copied(),
        error: None,
    })
}
