//! Per-cell metrics, mode classification and CSV emission.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::distributions::{DiagGaussian, Target};
use crate::error::{check_dim, Error, Result};

/// `(mean |μ − ref_mean|, mean |σ − ref_std|)`.
pub fn mae_metrics(q: &DiagGaussian, ref_mean: &[f64], ref_std: &[f64]) -> Result<(f64, f64)> {
    mae_moments(&q.mean, &q.std(), ref_mean, ref_std)
}

pub fn mae_moments(mean: &[f64], std: &[f64], ref_mean: &[f64], ref_std: &[f64]) -> Result<(f64, f64)> {
    let d = mean.len();
    check_dim(d, std.len())?;
    check_dim(d, ref_mean.len())?;
    check_dim(d, ref_std.len())?;
    if d == 0 {
        return Err(Error::Config("empty moment vectors".into()));
    }
    let mae = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / d as f64;
    Ok((mae(mean, ref_mean), mae(std, ref_std)))
}

/// `(1/n) Σ log q(z_j)` over `n` exact target draws.
pub fn avg_log_density<T: Target, G: Rng + ?Sized>(
    q: &DiagGaussian,
    target: &T,
    n: usize,
    rng: &mut G,
) -> Result<f64> {
    check_dim(target.dim(), q.dim())?;
    if !target.has_exact_sampler() {
        return Err(Error::Unsupported("target has no exact sampler".into()));
    }
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        draws.push(
            target
                .sample_exact(rng)
                .ok_or_else(|| Error::Unsupported("exact sampler returned nothing".into()))?,
        );
    }
    avg_log_density_at(q, &draws)
}

/// Average `log q` over given reference draws.
pub fn avg_log_density_at(q: &DiagGaussian, draws: &[Vec<f64>]) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::Config("no draws to average over".into()));
    }
    let mut acc = 0.0;
    for z in draws {
        acc += q.log_prob(z)?;
    }
    Ok(acc / draws.len() as f64)
}

/// `E_{z ~ N(m, S)}[log q(z)]` for diagonal `q`, using only `diag S`.
pub fn gaussian_expected_log_density(q: &DiagGaussian, mean: &[f64], var: &[f64]) -> Result<f64> {
    check_dim(q.dim(), mean.len())?;
    check_dim(q.dim(), var.len())?;
    let mut acc = 0.0;
    for i in 0..q.dim() {
        let s2 = (2.0 * q.log_std[i]).exp();
        acc -= 0.5 * ((mean[i] - q.mean[i]).powi(2) + var[i]) / s2 + q.log_std[i];
    }
    Ok(acc - 0.5 * crate::distributions::LN_2PI * q.dim() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeClass {
    Covering,
    Seeking,
    Undecided,
    /// No optimum found.
    Failed,
    /// Not a bimodal cell.
    None,
}

impl ModeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeClass::Covering => "c",
            ModeClass::Seeking => "s",
            ModeClass::Undecided => "u",
            ModeClass::Failed => "-",
            ModeClass::None => "",
        }
    }
}

impl fmt::Display for ModeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// √d-normalized distances of `mean` to the two modes and their midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDistances {
    pub mode_a: f64,
    pub mode_b: f64,
    pub mid: f64,
}

pub fn mode_distances(mean: &[f64], mode_a: &[f64], mode_b: &[f64]) -> Result<ModeDistances> {
    let d = mean.len();
    check_dim(d, mode_a.len())?;
    check_dim(d, mode_b.len())?;
    let dist = |p: &dyn Fn(usize) -> f64| {
        ((0..d).map(|i| (mean[i] - p(i)).powi(2)).sum::<f64>() / d as f64).sqrt()
    };
    Ok(ModeDistances {
        mode_a: dist(&|i| mode_a[i]),
        mode_b: dist(&|i| mode_b[i]),
        mid: dist(&|i| 0.5 * (mode_a[i] + mode_b[i])),
    })
}

/// `c` if the mean sits within `tau` of the midpoint, `s` if within `tau` of
/// a mode, `u` otherwise.
pub fn classify_mode_behavior(dist: &ModeDistances, tau: f64) -> ModeClass {
    if dist.mid < tau {
        ModeClass::Covering
    } else if dist.mode_a.min(dist.mode_b) < tau {
        ModeClass::Seeking
    } else {
        ModeClass::Undecided
    }
}

/// Seed for one cell, chained through ChaCha20 over the master seed, a
/// stream tag and the cell's coordinates.
pub fn derive_seed(master: u64, stream: u64, parts: &[u64]) -> u64 {
    let mut h = master;
    for &p in std::iter::once(&stream).chain(parts) {
        let mut rng = ChaCha20Rng::seed_from_u64(h);
        rng.set_stream(p);
        h = rng.next_u64();
    }
    h
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Row type of one CSV file.
pub trait CsvRow {
    fn header() -> Vec<&'static str>;
    fn record(&self) -> Vec<String>;
}

/// Writes a header and the rows in order; floats keep 17 significant digits.
pub fn emit_csv<T: CsvRow>(rows: &[T], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(T::header())?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub experiment: String,
    /// Target variant, e.g. `rbf1` or the dataset name.
    pub setting: String,
    pub method: String,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    pub mae_mean: Option<f64>,
    pub mae_std: Option<f64>,
    pub avg_log_density: Option<f64>,
    pub mode_class: ModeClass,
    pub distances: Option<ModeDistances>,
    /// Last training-objective value.
    pub final_objective: Option<f64>,
    pub error: Option<String>,
}

impl MetricsRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

impl CsvRow for MetricsRow {
    fn header() -> Vec<&'static str> {
        vec![
            "experiment",
            "setting",
            "method",
            "N",
            "K",
            "d",
            "seed",
            "mae_mean",
            "mae_std",
            "avg_log_density",
            "mode_class",
            "dist_mode0",
            "dist_mode1",
            "dist_mid",
            "final_objective",
            "error",
        ]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.experiment.clone(),
            self.setting.clone(),
            self.method.clone(),
            self.n.to_string(),
            self.k.to_string(),
            self.d.to_string(),
            self.seed.to_string(),
            fmt_opt(self.mae_mean),
            fmt_opt(self.mae_std),
            fmt_opt(self.avg_log_density),
            self.mode_class.to_string(),
            fmt_opt(self.distances.map(|x| x.mode_a)),
            fmt_opt(self.distances.map(|x| x.mode_b)),
            fmt_opt(self.distances.map(|x| x.mid)),
            fmt_opt(self.final_objective),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// Wall-clock per cell, kept out of `metrics.csv` so that file stays
/// byte-reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub setting: String,
    pub method: String,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl CsvRow for TimingRow {
    fn header() -> Vec<&'static str> {
        vec!["setting", "method", "N", "K", "d", "seed", "wall_time_s"]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.setting.clone(),
            self.method.clone(),
            self.n.to_string(),
            self.k.to_string(),
            self.d.to_string(),
            self.seed.to_string(),
            fmt_f64(self.wall_time_s),
        ]
    }
}

/// Mean and sample standard deviation; the latter is NaN below two values.
pub fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    pub setting: String,
    pub method: String,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub runs: usize,
    pub completed: usize,
    pub mae_mean: (f64, f64),
    pub mae_std: (f64, f64),
    pub avg_log_density: (f64, f64),
    /// Per-seed classes joined by `/`.
    pub mode_classes: String,
}

impl CsvRow for SummaryRow {
    fn header() -> Vec<&'static str> {
        vec![
            "experiment",
            "setting",
            "method",
            "N",
            "K",
            "d",
            "runs",
            "completed",
            "mae_mean",
            "mae_mean_sd",
            "mae_std",
            "mae_std_sd",
            "avg_log_density",
            "avg_log_density_sd",
            "mode_classes",
        ]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.experiment.clone(),
            self.setting.clone(),
            self.method.clone(),
            self.n.to_string(),
            self.k.to_string(),
            self.d.to_string(),
            self.runs.to_string(),
            self.completed.to_string(),
            fmt_f64(self.mae_mean.0),
            fmt_f64(self.mae_mean.1),
            fmt_f64(self.mae_std.0),
            fmt_f64(self.mae_std.1),
            fmt_f64(self.avg_log_density.0),
            fmt_f64(self.avg_log_density.1),
            self.mode_classes.clone(),
        ]
    }
}

/// Groups rows by everything but the seed, in order of first appearance,
/// averaging over completed seeds.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    type Key = (String, String, String, usize, usize, usize);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: std::collections::HashMap<Key, Vec<&MetricsRow>> = Default::default();
    for r in rows {
        let key = (r.experiment.clone(), r.setting.clone(), r.method.clone(), r.n, r.k, r.d);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let ok: Vec<&&MetricsRow> = members.iter().filter(|r| !r.failed()).collect();
            let stat = |f: fn(&MetricsRow) -> Option<f64>| {
                let xs: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                mean_and_sd(&xs)
            };
            let classes: Vec<&str> = members.iter().map(|r| r.mode_class.as_str()).collect();
            SummaryRow {
                experiment: key.0,
                setting: key.1,
                method: key.2,
                n: key.3,
                k: key.4,
                d: key.5,
                runs: members.len(),
                completed: ok.len(),
                mae_mean: stat(|r| r.mae_mean),
                mae_std: stat(|r| r.mae_std),
                avg_log_density: stat(|r| r.avg_log_density),
                mode_classes: if classes.iter().all(|c| c.is_empty()) {
                    String::new()
                } else {
                    classes.join("/")
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::GaussianTarget;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_examples() {
        let q = DiagGaussian::from_std(vec![0.1, 0.3], &[1.0, 2.0]).unwrap();
        assert_eq!(mae_metrics(&q, &[0.1, 0.3], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        let (m, _) = mae_metrics(&q, &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert!((m - 0.2).abs() < 1e-15);
        assert!(mae_metrics(&q, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn avg_log_density_is_negative_entropy_at_target() {
        let dist = DiagGaussian::from_std(vec![0.3, -1.0], &[0.5, 2.0]).unwrap();
        let target = GaussianTarget::normalized(dist.clone());
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<Vec<f64>> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let lps: Vec<f64> = draws.iter().map(|z| dist.log_prob(z).unwrap()).collect();
        let (m, sd) = mean_and_sd(&lps);
        let se = sd / (n as f64).sqrt();
        assert!((m + dist.entropy()).abs() < 3.0 * se);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let est = avg_log_density(&dist, &target, n, &mut rng).unwrap();
        assert_eq!(est, m);
        // Closed form from the moments agrees with the sampled mean.
        let exact = gaussian_expected_log_density(&dist, &dist.mean, &[0.25, 4.0]).unwrap();
        assert!((exact + dist.entropy()).abs() < 1e-12);
    }

    #[test]
    fn avg_log_density_decreases_with_offset() {
        let target = GaussianTarget::normalized(DiagGaussian::standard(1));
        let mut last = f64::INFINITY;
        for shift in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let q = DiagGaussian::from_std(vec![shift], &[1.0]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let v = avg_log_density(&q, &target, 1000, &mut rng).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(last < -8.0);
    }

    #[test]
    fn avg_log_density_is_deterministic() {
        let target = GaussianTarget::normalized(DiagGaussian::standard(3));
        let q = DiagGaussian::isotropic(vec![0.2; 3], 0.7).unwrap();
        let run = || avg_log_density(&q, &target, 1000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(run().to_bits(), run().to_bits());
    }

    fn classify(mean: &[f64], tau: f64) -> ModeClass {
        let d = mean.len();
        let dist = mode_distances(mean, &vec![0.0; d], &vec![1.0; d]).unwrap();
        classify_mode_behavior(&dist, tau)
    }

    #[test]
    fn classification_examples() {
        for tau in [1e-6, 0.15, 0.4] {
            assert_eq!(classify(&[0.5; 4], tau), ModeClass::Covering);
        }
        assert_eq!(classify(&[0.0; 4], 0.15), ModeClass::Seeking);
        assert_eq!(classify(&[0.25; 4], 0.15), ModeClass::Undecided);
        let d = mode_distances(&[0.25; 4], &[0.0; 4], &[1.0; 4]).unwrap();
        assert!((d.mode_a - 0.25).abs() < 1e-15 && (d.mid - 0.25).abs() < 1e-15);
        let d = mode_distances(&[0.0; 9], &[0.0; 9], &[1.0; 9]).unwrap();
        assert_eq!((d.mode_a, d.mode_b, d.mid), (0.0, 1.0, 0.5));
    }

    proptest! {
        #[test]
        fn classification_symmetric_under_relabeling(
            mean in proptest::collection::vec(-1.0f64..2.0, 1..8),
            tau in 0.01f64..0.6,
        ) {
            let flipped: Vec<f64> = mean.iter().map(|x| 1.0 - x).collect();
            let d = mean.len();
            let a = mode_distances(&mean, &vec![0.0; d], &vec![1.0; d]).unwrap();
            let b = mode_distances(&flipped, &vec![0.0; d], &vec![1.0; d]).unwrap();
            // Reflection swaps the mode distances; tiny rounding may differ.
            prop_assert!((a.mode_a - b.mode_b).abs() < 1e-12);
            prop_assert!((a.mid - b.mid).abs() < 1e-12);
            let near = |x: f64| (x - tau).abs() < 1e-9;
            if !near(a.mid) && !near(a.mode_a.min(a.mode_b)) {
                prop_assert_eq!(classify_mode_behavior(&a, tau), classify_mode_behavior(&b, tau));
            }
        }

        #[test]
        fn summary_matches_direct_statistics(
            vals in proptest::collection::vec(-5.0f64..5.0, 2..6),
        ) {
            let rows: Vec<MetricsRow> = vals
                .iter()
                .enumerate()
                .map(|(i, v)| row("A", i as u64, Some(*v)))
                .collect();
            let s = summarize(&rows);
            prop_assert_eq!(s.len(), 1);
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
            prop_assert!((s[0].mae_mean.0 - m).abs() < 1e-12);
            prop_assert!((s[0].mae_mean.1 - sd).abs() < 1e-12);
        }
    }

    fn row(method: &str, seed: u64, v: Option<f64>) -> MetricsRow {
        MetricsRow {
            experiment: "gp".into(),
            setting: "rbf1".into(),
            method: method.into(),
            n: 16,
            k: 16,
            d: 10,
            seed,
            mae_mean: v,
            mae_std: v,
            avg_log_density: v,
            mode_class: ModeClass::None,
            distances: None,
            final_objective: v,
            error: None,
        }
    }

    #[test]
    fn summary_skips_failed_and_keeps_order() {
        let mut bad = row("B", 1, None);
        bad.error = Some("diverged".into());
        bad.mode_class = ModeClass::Failed;
        let rows = vec![row("B", 0, Some(1.0)), row("A", 0, Some(2.0)), bad, row("A", 1, Some(4.0))];
        let s = summarize(&rows);
        assert_eq!(s.iter().map(|r| r.method.as_str()).collect::<Vec<_>>(), ["B", "A"]);
        assert_eq!((s[0].runs, s[0].completed), (2, 1));
        assert_eq!(s[0].mae_mean.0, 1.0);
        assert!(s[0].mae_mean.1.is_nan());
        assert_eq!(s[0].mode_classes, "/-");
        assert_eq!(s[1].mae_mean.0, 3.0);
    }

    #[test]
    fn csv_header_only_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/empty.csv");
        emit_csv::<MetricsRow>(&[], &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("experiment,setting,method,N,K,d,seed"));

        let vals = [0.1, 1.0 / 3.0, -2.5e-300, std::f64::consts::PI * 1e12];
        let mut r = row("IWVI, \"odd\"", 3, Some(vals[1]));
        r.mae_std = Some(vals[0]);
        r.avg_log_density = Some(vals[2]);
        r.final_objective = Some(vals[3]);
        let p = dir.path().join("one.csv");
        emit_csv(&[r.clone()], &p).unwrap();
        let mut rd = csv::Reader::from_path(&p).unwrap();
        let rec = rd.records().next().unwrap().unwrap();
        assert_eq!(&rec[2], "IWVI, \"odd\"");
        assert_eq!(rec[7].parse::<f64>().unwrap(), vals[1]);
        assert_eq!(rec[8].parse::<f64>().unwrap(), vals[0]);
        assert_eq!(rec[9].parse::<f64>().unwrap(), vals[2]);
        assert_eq!(rec[14].parse::<f64>().unwrap(), vals[3]);
    }

    #[test]
    fn csv_unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        fs::write(&file, "x").unwrap();
        assert!(emit_csv::<MetricsRow>(&[], &file.join("under_a_file.csv")).is_err());
    }

    #[test]
    fn derived_seeds_differ_and_repeat() {
        let a = derive_seed(0, 1, &[0, 1, 2]);
        assert_eq!(a, derive_seed(0, 1, &[0, 1, 2]));
        assert_ne!(a, derive_seed(0, 1, &[0, 1, 3]));
        assert_ne!(a, derive_seed(0, 2, &[0, 1, 2]));
        assert_ne!(a, derive_seed(1, 1, &[0, 1, 2]));
    }
}
