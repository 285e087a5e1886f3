//! Bayesian logistic regression with a standard normal prior on (w, b), and
//! CSV ingestion driven by a small TOML schema.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConstMatrix, Real};
use crate::distributions::{Target, LN_2PI};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegSpec {
    /// Features with a trailing column of ones for the bias.
    x: Arc<ConstMatrix>,
    xt: Arc<ConstMatrix>,
    pub y: Vec<f64>,
    pub d: usize,
    pub feature_names: Vec<String>,
}

impl LogRegSpec {
    /// `x` holds one row of d − 1 features per observation.
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Config(format!(
                "need a non-empty design with one label per row, got {} rows and {} labels",
                x.len(),
                y.len()
            )));
        }
        let p = x[0].len();
        if let Some(i) = x.iter().position(|r| r.len() != p) {
            return Err(Error::Config(format!("row {i} has {} features, expected {p}", x[i].len())));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("design matrix has missing or non-finite entries".into()));
        }
        if let Some(l) = y.iter().find(|&&l| l != 0.0 && l != 1.0) {
            return Err(Error::Config(format!("labels must be 0 or 1, found {l}")));
        }
        let rows: Vec<Vec<f64>> = x
            .into_iter()
            .map(|mut r| {
                r.push(1.0);
                r
            })
            .collect();
        let x = ConstMatrix::from_rows(&rows);
        Ok(Self {
            xt: Arc::new(x.transpose()),
            x: Arc::new(x),
            y,
            d: p + 1,
            feature_names: (0..p).map(|j| format!("x{j}")).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Feature value `j` of row `i` (excluding the bias column).
    pub fn feature(&self, i: usize, j: usize) -> f64 {
        self.x.row(i)[j]
    }

    fn activations<R: Real>(&self, z: &[R]) -> Vec<R> {
        R::mat_vec(&self.x, z)
    }

    fn value_from<R: Real>(&self, z: &[R], a: &[R]) -> R {
        let terms: Vec<R> = a
            .iter()
            .zip(&self.y)
            .map(|(&ai, &yi)| if yi == 1.0 { -(-ai).softplus() } else { -ai.softplus() })
            .collect();
        R::sum(&terms) - R::dot(z, z) * 0.5 - 0.5 * self.d as f64 * LN_2PI
    }

    fn grad_from<R: Real>(&self, z: &[R], a: &[R]) -> Vec<R> {
        let r: Vec<R> = a.iter().zip(&self.y).map(|(&ai, &yi)| -ai.sigmoid() + yi).collect();
        R::mat_vec(&self.xt, &r)
            .into_iter()
            .zip(z)
            .map(|(g, &zj)| g - zj)
            .collect()
    }
}

impl Target for LogRegSpec {
    fn dim(&self) -> usize {
        self.d
    }

    fn log_density<R: Real>(&self, z: &[R]) -> R {
        let a = self.activations(z);
        self.value_from(z, &a)
    }

    fn grad_log_density<R: Real>(&self, z: &[R]) -> Vec<R> {
        let a = self.activations(z);
        self.grad_from(z, &a)
    }

    fn log_density_and_grad<R: Real>(&self, z: &[R]) -> (R, Vec<R>) {
        let a = self.activations(z);
        (self.value_from(z, &a), self.grad_from(z, &a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

fn yes() -> bool {
    true
}

/// Column layout and preprocessing of one dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub name: String,
    /// CSV path, relative to the schema file when loaded through
    /// [`DatasetSchema::from_file`].
    pub file: PathBuf,
    #[serde(default = "yes")]
    pub has_header: bool,
    pub label_column: LabelColumn,
    /// Label string mapped to 1; all others map to 0. Without it labels must
    /// read as 0/1.
    #[serde(default)]
    pub positive_label: Option<String>,
    #[serde(default = "yes")]
    pub standardize: bool,
    /// Keep zero-variance columns (centered, not scaled) instead of dropping.
    #[serde(default)]
    pub keep_constant: bool,
    #[serde(default)]
    pub expected_d: Option<usize>,
}

impl DatasetSchema {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut schema: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if schema.file.is_relative() {
            if let Some(dir) = path.parent() {
                schema.file = dir.join(&schema.file);
            }
        }
        Ok(schema)
    }

    pub fn load(&self) -> Result<LogRegSpec> {
        load_dataset(&self.file, self)
    }
}

/// Reads a CSV file into a logistic regression problem. Feature columns are
/// standardized to zero mean and unit (population) variance unless disabled.
pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<LogRegSpec> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{}: {other:?}", path.display())),
        })?;
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        msg,
    };
    let header: Option<Vec<String>> = if schema.has_header {
        Some(reader.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut labels_raw = Vec::new();
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut label_idx = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let li = match label_idx {
            Some(i) => i,
            None => {
                let i = match &schema.label_column {
                    LabelColumn::Index(i) => *i,
                    LabelColumn::Name(n) => header
                        .as_ref()
                        .and_then(|h| h.iter().position(|c| c == n))
                        .ok_or_else(|| Error::Config(format!("label column `{n}` not found")))?,
                };
                if i >= rec.len() {
                    return Err(Error::Config(format!("label column {i} out of range")));
                }
                label_idx = Some(i);
                i
            }
        };
        let mut row = Vec::with_capacity(rec.len() - 1);
        for (j, field) in rec.iter().enumerate() {
            if j == li {
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column {j}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {j}: non-finite value")));
            }
            row.push(v);
        }
        labels_raw.push((line, rec[li].to_string()));
        features.push(row);
    }
    if features.is_empty() {
        return Err(Error::Config(format!("{}: no data rows", path.display())));
    }

    let mut distinct: Vec<&str> = labels_raw.iter().map(|(_, l)| l.as_str()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() > 2 {
        return Err(Error::Config(format!(
            "{}: labels are not binary, found {distinct:?}",
            path.display()
        )));
    }
    let y = labels_raw
        .iter()
        .map(|(line, l)| match &schema.positive_label {
            Some(pos) => Ok(if l == pos { 1.0 } else { 0.0 }),
            None => match l.parse::<f64>() {
                Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
                _ => Err(parse_err(*line, format!("label `{l}` is not 0 or 1"))),
            },
        })
        .collect::<Result<Vec<f64>>>()?;

    let names: Vec<String> = match &header {
        Some(h) => h
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != label_idx)
            .map(|(_, n)| n.clone())
            .collect(),
        None => (0..features[0].len()).map(|j| format!("x{j}")).collect(),
    };

    let n = features.len() as f64;
    let mut keep = Vec::new();
    for j in 0..features[0].len() {
        let mean = features.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = features.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        if var == 0.0 {
            if !schema.keep_constant {
                warn!("{}: dropping constant column `{}`", schema.name, names[j]);
                continue;
            }
            if schema.standardize {
                features.iter_mut().for_each(|r| r[j] -= mean);
            }
        } else if schema.standardize {
            let sd = var.sqrt();
            features.iter_mut().for_each(|r| r[j] = (r[j] - mean) / sd);
        }
        keep.push(j);
    }
    let x = features
        .into_iter()
        .map(|r| keep.iter().map(|&j| r[j]).collect())
        .collect();
    let mut spec = LogRegSpec::new(x, y)?;
    spec.feature_names = keep.iter().map(|&j| names[j].clone()).collect();
    if let Some(expected) = schema.expected_d {
        if expected != spec.d {
            return Err(Error::Config(format!(
                "{}: expected d = {expected}, got {}",
                schema.name, spec.d
            )));
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, ParamVector, ScalarObjective};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn random_spec(n: usize, p: usize, seed: u64) -> LogRegSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y = (0..n).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
        LogRegSpec::new(x, y).unwrap()
    }

    #[test]
    fn zero_parameters() {
        let s = random_spec(20, 4, 1);
        let v = s.log_density(&[0.0; 5]);
        let expect = 20.0 * 0.5f64.ln() - 2.5 * LN_2PI;
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn saturation() {
        let s = LogRegSpec::new(vec![vec![10.0]], vec![1.0]).unwrap();
        let z = [5.0, 0.0];
        let prior = -0.5 * 25.0 - LN_2PI;
        assert!((s.log_density(&z) - prior).abs() < 1e-12);
        let flipped = LogRegSpec::new(vec![vec![10.0]], vec![0.0]).unwrap();
        assert!((flipped.log_density(&z) - (prior - 50.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(LogRegSpec::new(vec![vec![1.0]], vec![2.0]).is_err());
        assert!(LogRegSpec::new(vec![vec![f64::NAN]], vec![1.0]).is_err());
    }

    struct Obj<'a>(&'a LogRegSpec);
    impl ScalarObjective for Obj<'_> {
        fn eval<R: Real>(&self, p: &[R]) -> R {
            self.0.log_density(p)
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = random_spec(50, 6, 2);
        let z = vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.05];
        let mut p = ParamVector::new("z", z.clone());
        let err = finite_diff_check(&Obj(&s), &mut p, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
        let g = s.grad_log_density(&z);
        for (a, b) in g.iter().zip(&p.grads) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
        let (v, g2) = s.log_density_and_grad(&z);
        assert_eq!(g, g2);
        assert_eq!(v, s.log_density(&z));
    }

    #[test]
    fn concave_on_random_probes() {
        let s = random_spec(40, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-5;
        for _ in 0..20 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut hess = nalgebra::DMatrix::zeros(4, 4);
            for j in 0..4 {
                let mut up = z.clone();
                let mut dn = z.clone();
                up[j] += h;
                dn[j] -= h;
                let (gu, gd) = (s.grad_log_density(&up), s.grad_log_density(&dn));
                for i in 0..4 {
                    hess[(i, j)] = (gu[i] - gd[i]) / (2.0 * h);
                }
            }
            let sym = (&hess + hess.transpose()) * 0.5;
            let top = sym.symmetric_eigen().eigenvalues.max();
            assert!(top < 1e-6, "{top}");
        }
    }

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn schema(label: LabelColumn, pos: Option<&str>) -> DatasetSchema {
        DatasetSchema {
            name: "t".into(),
            file: PathBuf::new(),
            has_header: true,
            label_column: label,
            positive_label: pos.map(str::to_string),
            standardize: true,
            keep_constant: false,
            expected_d: None,
        }
    }

    #[test]
    fn constant_column_dropped() {
        let f = write_csv("a,b,c,y\n1,5,2,0\n2,5,4,1\n3,5,9,1\n4,5,1,0\n");
        let s = load_dataset(f.path(), &schema(LabelColumn::Name("y".into()), None)).unwrap();
        assert_eq!(s.d, 3);
        assert_eq!(s.feature_names, vec!["a", "c"]);
        let mut keep = schema(LabelColumn::Index(3), None);
        keep.keep_constant = true;
        let s = load_dataset(f.path(), &keep).unwrap();
        assert_eq!(s.d, 4);
        assert!((0..4).all(|i| s.feature(i, 1) == 0.0));
    }

    #[test]
    fn standardized_columns() {
        let mut text = String::from("y,u,v\n");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let lab = if rng.random_bool(0.5) { "g" } else { "b" };
            text += &format!("{lab},{},{}\n", rng.random_range(0.0..100.0), rng.random_range(-1e-3..1e-3));
        }
        let f = write_csv(&text);
        let s = load_dataset(f.path(), &schema(LabelColumn::Index(0), Some("g"))).unwrap();
        assert_eq!(s.d, 3);
        for j in 0..2 {
            let col: Vec<f64> = (0..s.n()).map(|i| s.feature(i, j)).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(m.abs() < 1e-10);
            assert!((sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let f = write_csv("a,y\n1,0\n2,1\nx,1\n");
        match load_dataset(f.path(), &schema(LabelColumn::Name("y".into()), None)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let f = write_csv("a,y\n1,0\n2,1\n3\n");
        assert!(matches!(
            load_dataset(f.path(), &schema(LabelColumn::Name("y".into()), None)),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn non_binary_labels_rejected() {
        let f = write_csv("a,y\n1,0\n2,1\n3,2\n");
        assert!(load_dataset(f.path(), &schema(LabelColumn::Name("y".into()), None)).is_err());
        let f = write_csv("a,y\n1,r\n2,g\n3,b\n");
        assert!(load_dataset(f.path(), &schema(LabelColumn::Name("y".into()), Some("g"))).is_err());
    }

    #[test]
    fn expected_dimension_enforced() {
        let f = write_csv("a,b,y\n1,2,0\n2,1,1\n");
        let mut sc = schema(LabelColumn::Name("y".into()), None);
        sc.expected_d = Some(4);
        assert!(matches!(load_dataset(f.path(), &sc), Err(Error::Config(_))));
        sc.expected_d = Some(3);
        assert!(load_dataset(f.path(), &sc).is_ok());
    }

    #[test]
    fn schema_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        fs::write(
            &p,
            "name = \"x\"\nfile = \"x.csv\"\nlabel_column = 2\npositive_label = \"g\"\nkeep_constant = true\n",
        )
        .unwrap();
        let s = DatasetSchema::from_file(&p).unwrap();
        assert_eq!(s.file, dir.path().join("x.csv"));
        assert_eq!(s.label_column, LabelColumn::Index(2));
        assert!(s.standardize && s.has_header && s.keep_constant);
        fs::write(&p, "name = \"x\"\nfile = \"x.csv\"\nlabel_column = \"y\"\nbogus = 1\n").unwrap();
        assert!(DatasetSchema::from_file(&p).is_err());
    }
}
