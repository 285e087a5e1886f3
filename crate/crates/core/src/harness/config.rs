//! Experiment grids and their TOML overlay.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{MassParam, Method};
use crate::samplers::MhHmcConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Bimodal,
    Gp,
    Logreg,
    Theory,
    Moments,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Bimodal => "bimodal",
            Experiment::Gp => "gp",
            Experiment::Logreg => "logreg",
            Experiment::Theory => "theory",
            Experiment::Moments => "moments",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A training method paired with the way the posterior is read off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    Vi,
    Iwvi,
    /// IWVI proposal, resampled.
    IwviSir,
    /// DAIS-trained `q0` used on its own.
    Dais0,
    /// Self-normalized DAIS particles.
    Dais,
    Msc { chains: usize },
}

impl Scheme {
    pub fn train_method(&self) -> Method {
        match self {
            Scheme::Vi => Method::Vi,
            Scheme::Iwvi | Scheme::IwviSir => Method::Iwvi,
            Scheme::Dais0 | Scheme::Dais => Method::Dais,
            Scheme::Msc { .. } => Method::Msc,
        }
    }

    pub fn chains(&self) -> usize {
        match self {
            Scheme::Msc { chains } => *chains,
            _ => 1,
        }
    }

    pub fn uses_k(&self) -> bool {
        self.train_method() == Method::Dais
    }

    /// Read-off is the fitted Gaussian itself rather than a sample set.
    pub fn is_compact(&self) -> bool {
        !matches!(self, Scheme::IwviSir | Scheme::Dais)
    }

    pub fn label(&self) -> String {
        match self {
            Scheme::Vi => "VI".into(),
            Scheme::Iwvi => "IWVI".into(),
            Scheme::IwviSir => "IWVI_SIR".into(),
            Scheme::Dais0 => "DAIS0".into(),
            Scheme::Dais => "DAIS".into(),
            Scheme::Msc { chains } => format!("MSC_{chains}c"),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from(*self))
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        match s {
            Scheme::Vi => "vi".into(),
            Scheme::Iwvi => "iwvi".into(),
            Scheme::IwviSir => "iwvi_sir".into(),
            Scheme::Dais0 => "dais0".into(),
            Scheme::Dais => "dais".into(),
            Scheme::Msc { chains } => format!("msc_{chains}c"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "vi" => Scheme::Vi,
            "iwvi" => Scheme::Iwvi,
            "iwvi_sir" => Scheme::IwviSir,
            "dais0" => Scheme::Dais0,
            "dais" => Scheme::Dais,
            other => {
                let chains = other
                    .strip_prefix("msc_")
                    .and_then(|r| r.strip_suffix('c'))
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))?;
                Scheme::Msc { chains }
            }
        })
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub vi: f64,
    pub iwvi: f64,
    pub dais: f64,
    pub msc: f64,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            vi: lr,
            iwvi: lr,
            dais: lr,
            msc: lr,
        }
    }

    pub fn get(&self, method: Method) -> f64 {
        match method {
            Method::Vi => self.vi,
            Method::Iwvi => self.iwvi,
            Method::Dais => self.dais,
            Method::Msc => self.msc,
        }
    }
}

/// A Gaussian pair `q0 = N(0, 1)`, `f = N(mean, std²)` for the theory run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryTarget {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub methods: Vec<Scheme>,
    pub n_particles: Vec<usize>,
    pub k: Vec<usize>,
    /// Target dimensions; ignored by `logreg`, whose dimension comes from the
    /// dataset, and by `theory`.
    pub d: Vec<usize>,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub lr: LearningRates,
    pub out_dir: PathBuf,
    pub master_seed: u64,
    /// Mode-classification threshold in √d-normalized units.
    pub tau: f64,
    /// GP lengthscales, one setting each.
    pub rho: Vec<f64>,
    /// Dataset schema for `logreg`.
    pub dataset: Option<PathBuf>,
    /// Exact target draws for the average log density.
    pub n_eval: usize,
    /// Particles for the DAIS sample read-off and the moments curves.
    pub dais_samples: usize,
    pub sir_draws: usize,
    pub sir_proposals: usize,
    pub hmc: Option<MhHmcConfig>,
    pub hmc_cache_dir: PathBuf,
    pub moment_prefixes: Vec<usize>,
    pub theory_targets: Vec<TheoryTarget>,
    pub theory_n_mc: usize,
    pub mass: MassParam,
    /// Every coordinate of the initial mean; the initial std is 1.
    pub init_mean: f64,
    pub n_leapfrog: usize,
}

fn k_powers(lo: usize, hi: usize) -> Vec<usize> {
    std::iter::successors(Some(lo), |k| Some(k * 2))
        .take_while(|&k| k <= hi)
        .collect()
}

impl ExperimentConfig {
    /// Desk-scale defaults, or the published budgets with `paper_scale`.
    pub fn defaults(experiment: Experiment, paper_scale: bool) -> Self {
        let compact = vec![
            Scheme::Iwvi,
            Scheme::IwviSir,
            Scheme::Dais0,
            Scheme::Dais,
            Scheme::Msc { chains: 8 },
        ];
        let mut cfg = Self {
            experiment,
            methods: compact,
            n_particles: vec![16],
            k: vec![16],
            d: vec![10, 25],
            seeds: vec![0, 1, 2],
            iterations: if paper_scale { 50_000 } else { 10_000 },
            lr: LearningRates::uniform(1e-3),
            out_dir: PathBuf::from("out").join(experiment.name()),
            master_seed: 0,
            tau: 0.15,
            rho: vec![0.8, 3.0],
            dataset: None,
            n_eval: 1000,
            dais_samples: if paper_scale { 100_000 } else { 10_000 },
            sir_draws: 1000,
            sir_proposals: if paper_scale { 1000 } else { 100 },
            hmc: None,
            hmc_cache_dir: PathBuf::from("hmc_cache"),
            moment_prefixes: Vec::new(),
            theory_targets: Vec::new(),
            theory_n_mc: if paper_scale { 100_000 } else { 10_000 },
            mass: MassParam::Diagonal,
            init_mean: 0.0,
            n_leapfrog: 1,
        };
        match experiment {
            Experiment::Bimodal => {
                cfg.methods = vec![
                    Scheme::Vi,
                    Scheme::Iwvi,
                    Scheme::Dais0,
                    Scheme::Msc { chains: 1 },
                    Scheme::Msc { chains: 8 },
                ];
                cfg.n_particles = if paper_scale { vec![1, 2, 4, 8, 16] } else { vec![4] };
                cfg.k = if paper_scale { vec![2, 4, 8, 16] } else { vec![16] };
                cfg.d = (1..=if paper_scale { 15 } else { 8 }).collect();
                cfg.iterations = 7500;
                cfg.lr = LearningRates {
                    msc: 1e-4,
                    ..LearningRates::uniform(1e-2)
                };
                cfg.mass = MassParam::Scalar;
                cfg.init_mean = 0.5;
            }
            Experiment::Gp => {}
            Experiment::Logreg => {
                cfg.d = Vec::new();
                cfg.iterations = if paper_scale { 100_000 } else { 20_000 };
                cfg.dataset = Some(PathBuf::from("data/ionosphere.toml"));
                cfg.hmc = Some(MhHmcConfig::ionosphere());
            }
            Experiment::Theory => {
                cfg.methods = Vec::new();
                cfg.d = Vec::new();
                cfg.seeds = vec![0];
                cfg.n_particles = vec![1, 2, 4, 8, 16];
                cfg.k = k_powers(4, 512);
                cfg.theory_targets = vec![
                    TheoryTarget { mean: 1.0, std: 1.0 },
                    TheoryTarget { mean: 1.0, std: 0.5 },
                ];
            }
            Experiment::Moments => {
                cfg.methods = vec![Scheme::Dais];
                cfg.d = vec![25];
                cfg.rho = vec![0.8];
                cfg.seeds = vec![0];
                let mut prefixes = Vec::new();
                let mut decade = 10;
                while decade <= cfg.dais_samples {
                    for m in [1, 2, 5] {
                        if m * decade <= cfg.dais_samples {
                            prefixes.push(m * decade);
                        }
                    }
                    decade *= 10;
                }
                cfg.moment_prefixes = prefixes;
            }
        }
        cfg
    }

    /// Defaults overlaid with the keys present in `text`.
    pub fn from_toml_overlay(base: &Self, text: &str) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut table = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, overlay);
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the `experiment` key first to pick the defaults to overlay.
    pub fn from_file(path: &Path, paper_scale: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let probe: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let exp: Experiment = probe
            .get("experiment")
            .cloned()
            .ok_or_else(|| Error::Config(format!("{}: missing `experiment`", path.display())))?
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_overlay(&Self::defaults(exp, paper_scale), &text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        let needs_d = matches!(
            self.experiment,
            Experiment::Bimodal | Experiment::Gp | Experiment::Moments
        );
        if self.experiment != Experiment::Theory && self.methods.is_empty() {
            return bad("method list is empty");
        }
        if self.n_particles.is_empty() || self.k.is_empty() || self.seeds.is_empty() {
            return bad("N, K and seed lists must be non-empty");
        }
        if needs_d && self.d.is_empty() {
            return bad("d list is empty");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct");
        }
        if self.n_particles.contains(&0) || self.d.contains(&0) {
            return bad("N and d must be positive");
        }
        if self.methods.iter().any(|m| m.uses_k()) && self.k.contains(&0) {
            return bad("DAIS needs K ≥ 1");
        }
        let lrs = [self.lr.vi, self.lr.iwvi, self.lr.dais, self.lr.msc];
        if lrs.iter().any(|l| !(*l > 0.0)) {
            return bad("learning rates must be positive");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if self.iterations == 0 || self.n_eval == 0 || self.dais_samples == 0 {
            return bad("iterations, n_eval and dais_samples must be positive");
        }
        if self.sir_draws == 0 || self.sir_proposals == 0 {
            return bad("SIR sizes must be positive");
        }
        if self.n_leapfrog == 0 {
            return bad("n_leapfrog must be positive");
        }
        if matches!(self.experiment, Experiment::Gp | Experiment::Moments)
            && (self.rho.is_empty() || self.rho.iter().any(|r| !(*r > 0.0)))
        {
            return bad("rho list must be non-empty and positive");
        }
        if self.experiment == Experiment::Logreg && self.dataset.is_none() {
            return bad("logreg needs a dataset schema");
        }
        if let Some(h) = &self.hmc {
            h.validate()?;
        }
        if self.experiment == Experiment::Moments
            && (self.moment_prefixes.is_empty()
                || self.moment_prefixes[0] == 0
                || self.moment_prefixes.windows(2).any(|w| w[0] >= w[1])
                || *self.moment_prefixes.last().unwrap() > self.dais_samples)
        {
            return bad("moment prefixes must increase strictly within 1..=dais_samples");
        }
        if self.experiment == Experiment::Theory {
            if self.theory_targets.is_empty() || self.theory_targets.iter().any(|t| !(t.std > 0.0)) {
                return bad("theory targets must be non-empty with positive std");
            }
            if self.k[0] < 4 || self.k.windows(2).any(|w| w[0] >= w[1]) {
                return bad("theory K list must increase and start at ≥ 4");
            }
            if self.theory_n_mc < 2 {
                return bad("theory_n_mc must be at least 2");
            }
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
