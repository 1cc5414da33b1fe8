//! Dataset ingestion, preprocessing, and the resampling protocol.
//!
//! Preprocessing runs standardize → PCA → range-scale, each fit on the
//! training portion only. Variances use the population (divide by m)
//! convention throughout.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{QmklError, Result};
use crate::linalg::symmetric_eigen;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    Whitespace,
    Char(char),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum ColumnSpec {
    Numeric { name: String },
    /// One-hot encoded. With `levels` given, any other value is an error and
    /// the encoding has exactly those columns; otherwise levels are the
    /// sorted distinct values found in the file.
    Categorical {
        name: String,
        #[serde(default)]
        levels: Option<Vec<String>>,
    },
    /// Rows whose value equals `positive` get label +1, all others −1.
    Label { name: String, positive: String },
    Ignore { name: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub delimiter: Delimiter,
    pub has_header: bool,
    pub columns: Vec<ColumnSpec>,
}

fn strings(values: &[&str]) -> Option<Vec<String>> {
    Some(values.iter().map(|s| s.to_string()).collect())
}

impl CsvSchema {
    /// UCI German Credit, numeric variant: 24 whitespace-separated numeric
    /// attributes, then the class (1 = good, 2 = bad; bad is +1).
    pub fn german_numeric() -> Self {
        let mut columns: Vec<ColumnSpec> = (1..=24)
            .map(|i| ColumnSpec::Numeric {
                name: format!("a{i}"),
            })
            .collect();
        columns.push(ColumnSpec::Label {
            name: "class".into(),
            positive: "2".into(),
        });
        CsvSchema {
            delimiter: Delimiter::Whitespace,
            has_header: false,
            columns,
        }
    }

    /// UCI Bank Marketing `bank-full.csv`: semicolon-separated with a quoted
    /// header; `y = "yes"` is +1.
    pub fn bank_marketing() -> Self {
        use ColumnSpec::*;
        let num = |n: &str| Numeric { name: n.into() };
        let cat = |n: &str, levels: &[&str]| Categorical {
            name: n.into(),
            levels: strings(levels),
        };
        let yes_no = ["no", "yes"];
        CsvSchema {
            delimiter: Delimiter::Char(';'),
            has_header: true,
            columns: vec![
                num("age"),
                cat(
                    "job",
                    &[
                        "admin.",
                        "blue-collar",
                        "entrepreneur",
                        "housemaid",
                        "management",
                        "retired",
                        "self-employed",
                        "services",
                        "student",
                        "technician",
                        "unemployed",
                        "unknown",
                    ],
                ),
                cat("marital", &["divorced", "married", "single"]),
                cat("education", &["primary", "secondary", "tertiary", "unknown"]),
                cat("default", &yes_no),
                num("balance"),
                cat("housing", &yes_no),
                cat("loan", &yes_no),
                cat("contact", &["cellular", "telephone", "unknown"]),
                num("day"),
                cat(
                    "month",
                    &[
                        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov",
                        "dec",
                    ],
                ),
                num("duration"),
                num("campaign"),
                num("pdays"),
                num("previous"),
                cat("poutcome", &["failure", "other", "success", "unknown"]),
                Label {
                    name: "y".into(),
                    positive: "yes".into(),
                },
            ],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "german_numeric" => Ok(Self::german_numeric()),
            "bank_marketing" => Ok(Self::bank_marketing()),
            other => Err(QmklError::config(format!("unknown schema preset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
    pub provenance: String,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }
}

fn ingestion(path: &Path, row: usize, message: impl Into<String>) -> QmklError {
    QmklError::Ingestion {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

fn read_records(path: &Path, schema: &CsvSchema) -> Result<Vec<(usize, Vec<String>)>> {
    match schema.delimiter {
        Delimiter::Whitespace => {
            let text = fs::read_to_string(path).map_err(|e| QmklError::io(path, e))?;
            Ok(text
                .lines()
                .enumerate()
                .skip(usize::from(schema.has_header))
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| (i + 1, l.split_whitespace().map(str::to_string).collect()))
                .collect())
        }
        Delimiter::Char(c) => {
            let delim = u8::try_from(c)
                .map_err(|_| QmklError::config(format!("delimiter {c:?} is not ASCII")))?;
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(delim)
                .has_headers(schema.has_header)
                .flexible(true)
                .from_path(path)
                .map_err(|e| match e.into_kind() {
                    csv::ErrorKind::Io(io) => QmklError::io(path, io),
                    other => ingestion(path, 0, format!("{other:?}")),
                })?;
            let offset = 1 + usize::from(schema.has_header);
            reader
                .records()
                .enumerate()
                .map(|(i, r)| {
                    let r = r.map_err(|e| ingestion(path, i + offset, e.to_string()))?;
                    Ok((i + offset, r.iter().map(|f| f.trim().to_string()).collect()))
                })
                .collect()
        }
    }
}

/// Reads a delimited file into a dense numeric dataset. Categorical columns
/// are one-hot encoded in place; the label column is mapped to ±1.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    if !path.exists() {
        return Err(QmklError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
        ));
    }
    let n_labels = schema
        .columns
        .iter()
        .filter(|c| matches!(c, ColumnSpec::Label { .. }))
        .count();
    if n_labels != 1 {
        return Err(QmklError::config(format!(
            "schema must have exactly one label column, found {n_labels}"
        )));
    }
    let records = read_records(path, schema)?;
    let width = schema.columns.len();
    for (line, rec) in &records {
        if rec.len() != width {
            return Err(ingestion(
                path,
                *line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
    }

    let levels: Vec<Option<Vec<String>>> = schema
        .columns
        .iter()
        .enumerate()
        .map(|(ci, c)| match c {
            ColumnSpec::Categorical { levels: Some(l), .. } => Some(l.clone()),
            ColumnSpec::Categorical { levels: None, .. } => {
                let mut seen: Vec<String> = records.iter().map(|(_, r)| r[ci].clone()).collect();
                seen.sort();
                seen.dedup();
                Some(seen)
            }
            _ => None,
        })
        .collect();

    let mut names = Vec::new();
    for (c, lv) in schema.columns.iter().zip(&levels) {
        match c {
            ColumnSpec::Numeric { name } => names.push(name.clone()),
            ColumnSpec::Categorical { name, .. } => {
                for l in lv.as_ref().expect("categorical levels") {
                    names.push(format!("{name}={l}"));
                }
            }
            _ => {}
        }
    }

    let mut data = Vec::with_capacity(records.len() * names.len());
    let mut labels = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        for ((c, lv), field) in schema.columns.iter().zip(&levels).zip(rec) {
            match c {
                ColumnSpec::Numeric { name } => {
                    let v: f64 = field.parse().map_err(|_| {
                        ingestion(path, *line, format!("column {name}: not a number: {field:?}"))
                    })?;
                    if !v.is_finite() {
                        return Err(ingestion(path, *line, format!("column {name}: non-finite")));
                    }
                    data.push(v);
                }
                ColumnSpec::Categorical { name, .. } => {
                    let lv = lv.as_ref().expect("categorical levels");
                    let hit = lv.iter().position(|l| l == field).ok_or_else(|| {
                        ingestion(path, *line, format!("column {name}: unknown category {field:?}"))
                    })?;
                    data.extend((0..lv.len()).map(|k| f64::from(u8::from(k == hit))));
                }
                ColumnSpec::Label { positive, .. } => {
                    labels.push(if field == positive { 1.0 } else { -1.0 });
                }
                ColumnSpec::Ignore { .. } => {}
            }
        }
    }
    let features = Array2::from_shape_vec((labels.len(), names.len()), data)
        .map_err(|e| ingestion(path, 0, e.to_string()))?;
    Ok(Dataset {
        features,
        labels,
        feature_names: names,
        provenance: path.display().to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations; zero-variance
    /// columns get scale 1.
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(QmklError::usage("cannot standardize an empty matrix"));
        }
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let var = x.var_axis(Axis(0), 0.0);
        let scale = var.mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        Ok(Standardizer {
            mean: mean.to_vec(),
            scale: scale.to_vec(),
        })
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width(x, self.mean.len())?;
        let mean = Array1::from(self.mean.clone());
        let scale = Array1::from(self.scale.clone());
        Ok((&x - &mean) / &scale)
    }
}

fn check_width(x: ArrayView2<f64>, d: usize) -> Result<()> {
    if x.ncols() != d {
        return Err(QmklError::usage(format!("expected {d} columns, got {}", x.ncols())));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k × d`, orthonormal rows.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    /// Top-`k` eigenvectors of the population covariance. Each component's
    /// largest-magnitude entry is made positive.
    pub fn fit(x: ArrayView2<f64>, k: usize) -> Result<Self> {
        let (m, d) = x.dim();
        if k == 0 || m < 2 || k > (m - 1).min(d) {
            return Err(QmklError::usage(format!(
                "PCA with k={k} needs 1 ≤ k ≤ min(rows−1, cols) = {}",
                m.saturating_sub(1).min(d)
            )));
        }
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let centered = &x - &mean;
        let cov = centered.t().dot(&centered) / m as f64;
        let eig = symmetric_eigen(cov.view())?;
        let components = (0..k)
            .map(|c| {
                let col = eig.vectors.column(c);
                let pivot = col
                    .iter()
                    .copied()
                    .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                    .unwrap_or(1.0);
                let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                col.iter().map(|v| v * sign).collect()
            })
            .collect();
        Ok(Pca {
            mean: mean.to_vec(),
            components,
            explained_variance: eig.values.iter().take(k).map(|v| v.max(0.0)).collect(),
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    fn component_matrix(&self) -> Array2<f64> {
        let d = self.mean.len();
        Array2::from_shape_fn((self.n_components(), d), |(i, j)| self.components[i][j])
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width(x, self.mean.len())?;
        let mean = Array1::from(self.mean.clone());
        Ok((&x - &mean).dot(&self.component_matrix().t()))
    }

    pub fn reconstruct(&self, projected: ArrayView2<f64>) -> Array2<f64> {
        let mean = Array1::from(self.mean.clone());
        projected.dot(&self.component_matrix()) + &mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl RangeScaler {
    pub fn fit(x: ArrayView2<f64>, lo: f64, hi: f64) -> Result<Self> {
        if x.nrows() == 0 || !(lo < hi) {
            return Err(QmklError::usage("range scaling needs rows and lo < hi"));
        }
        let min = x
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let max = x
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(RangeScaler { min, max, lo, hi })
    }

    /// Affine map of the fitted range onto `[lo, hi]`, clipped; constant
    /// columns map to the midpoint.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width(x, self.min.len())?;
        let mid = (self.lo + self.hi) / 2.0;
        Ok(Array2::from_shape_fn(x.dim(), |(i, j)| {
            let span = self.max[j] - self.min[j];
            if span > 0.0 {
                let t = self.lo + (x[[i, j]] - self.min[j]) / span * (self.hi - self.lo);
                t.clamp(self.lo, self.hi)
            } else {
                mid
            }
        }))
    }
}

/// The fitted standardize → PCA → range-scale chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub standardizer: Standardizer,
    pub pca: Pca,
    pub scaler: RangeScaler,
}

impl Pipeline {
    pub fn fit(train: ArrayView2<f64>, dim: usize) -> Result<Self> {
        let standardizer = Standardizer::fit(train)?;
        let z = standardizer.apply(train)?;
        let pca = Pca::fit(z.view(), dim)?;
        let p = pca.apply(z.view())?;
        let scaler = RangeScaler::fit(p.view(), 0.0, 2.0)?;
        Ok(Pipeline {
            standardizer,
            pca,
            scaler,
        })
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.standardizer.apply(x)?;
        let p = self.pca.apply(z.view())?;
        self.scaler.apply(p.view())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub n_points: usize,
    pub test_frac: f64,
    pub n_folds: usize,
    pub balanced: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            n_points: 400,
            test_frac: 0.33,
            n_folds: 4,
            balanced: true,
        }
    }
}

/// Row indices (into the dataset) for one resample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub sample_id: usize,
    pub seed: u64,
    pub points: Vec<usize>,
    pub test: Vec<usize>,
    pub train: Vec<usize>,
    /// Fold of each entry of `train`.
    pub folds: Vec<usize>,
    pub n_folds: usize,
}

impl SplitPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.folds {
            sizes[f] += 1;
        }
        sizes
    }

    /// Positions within `train` for the fit and validation parts of `fold`.
    pub fn fold_positions(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.train.len()).partition(|&p| self.folds[p] != fold)
    }
}

/// Draws `n_points` rows without replacement, then splits off
/// `⌊test_frac·n_points⌋` test rows and assigns the rest to folds round-robin.
/// With `balanced`, half the draw comes from each class when both classes
/// are large enough.
pub fn make_split_plan(
    labels: &[f64],
    sample_id: usize,
    seed: u64,
    opts: &SplitOptions,
) -> Result<SplitPlan> {
    let n = opts.n_points;
    if labels.len() < n {
        return Err(QmklError::usage(format!(
            "dataset has {} rows, the protocol needs {n}",
            labels.len()
        )));
    }
    if opts.n_folds == 0 || !(0.0..1.0).contains(&opts.test_frac) {
        return Err(QmklError::config("need n_folds ≥ 1 and 0 ≤ test_frac < 1"));
    }
    let mut rng = rng_from_seed(derive_seed(seed, &[sample_id as u64]));
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] > 0.0).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] <= 0.0).collect();
    let half = n / 2;
    let mut points = if opts.balanced && pos.len() >= half && neg.len() >= n - half {
        let mut p = pos;
        let mut q = neg;
        p.shuffle(&mut rng);
        q.shuffle(&mut rng);
        let mut pts: Vec<usize> = p[..half].to_vec();
        pts.extend_from_slice(&q[..n - half]);
        pts
    } else {
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(n);
        all
    };
    points.shuffle(&mut rng);
    let n_test = (opts.test_frac * n as f64).floor() as usize;
    let test = points[..n_test].to_vec();
    let train = points[n_test..].to_vec();
    let folds = (0..train.len()).map(|p| p % opts.n_folds).collect();
    Ok(SplitPlan {
        sample_id,
        seed,
        points,
        test,
        train,
        folds,
        n_folds: opts.n_folds,
    })
}

/// Features and labels of one split after preprocessing to `dim` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSplit {
    pub plan: SplitPlan,
    pub dim: usize,
    pub train_x: Array2<f64>,
    pub test_x: Array2<f64>,
    pub train_y: Vec<f64>,
    pub test_y: Vec<f64>,
    pub pipeline: Pipeline,
}

pub fn prepare_split(dataset: &Dataset, plan: &SplitPlan, dim: usize) -> Result<PreparedSplit> {
    let train_raw = dataset.features.select(Axis(0), &plan.train);
    let test_raw = dataset.features.select(Axis(0), &plan.test);
    let pipeline = Pipeline::fit(train_raw.view(), dim)?;
    Ok(PreparedSplit {
        plan: plan.clone(),
        dim,
        train_x: pipeline.apply(train_raw.view())?,
        test_x: pipeline.apply(test_raw.view())?,
        train_y: plan.train.iter().map(|&i| dataset.labels[i]).collect(),
        test_y: plan.test.iter().map(|&i| dataset.labels[i]).collect(),
        pipeline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn standardize_examples() {
        let x = array![[1.0, 4.0], [2.0, 4.0], [3.0, 4.0]];
        let s = Standardizer::fit(x.view()).unwrap();
        let z = s.apply(x.view()).unwrap();
        let r = 1.5f64.sqrt();
        assert!((z[[0, 0]] + r).abs() < 1e-15 && z[[1, 0]].abs() < 1e-15 && (z[[2, 0]] - r).abs() < 1e-15);
        assert!(z.column(1).iter().all(|&v| v == 0.0));
        let twice = s.apply(z.view()).unwrap();
        assert_ne!(twice, z);
    }

    #[test]
    fn pca_examples() {
        let x = array![[-1.0, 0.0], [1.0, 0.0], [0.0, 0.0]];
        let p = Pca::fit(x.view(), 1).unwrap();
        assert!((p.components[0][0] - 1.0).abs() < 1e-12 && p.components[0][1].abs() < 1e-12);
        assert!((p.explained_variance[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(Pca::fit(x.view(), 3).is_err());
        assert!(Pca::fit(x.view(), 0).is_err());
    }

    #[test]
    fn pca_full_rank_reconstructs() {
        let x = array![[1.0, 2.0, 0.5], [0.3, -1.0, 2.0], [2.2, 0.1, 1.1], [-0.7, 0.9, 0.0], [0.0, 0.0, 3.0]];
        let p = Pca::fit(x.view(), 3).unwrap();
        let back = p.reconstruct(p.apply(x.view()).unwrap().view());
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn range_scale_examples() {
        let train = array![[0.0, 3.0], [5.0, 3.0], [10.0, 3.0]];
        let s = RangeScaler::fit(train.view(), 0.0, 2.0).unwrap();
        let t = s.apply(train.view()).unwrap();
        assert_eq!(t.column(0).to_vec(), vec![0.0, 1.0, 2.0]);
        assert!(t.column(1).iter().all(|&v| v == 1.0));
        let test = s.apply(array![[12.0, 7.0]].view()).unwrap();
        assert_eq!(test[[0, 0]], 2.0);
    }

    fn toy_labels(n_pos: usize, n_neg: usize) -> Vec<f64> {
        let mut l = vec![1.0; n_pos];
        l.extend(vec![-1.0; n_neg]);
        l
    }

    #[test]
    fn split_plan_shape_and_determinism() {
        let labels = toy_labels(300, 700);
        let opts = SplitOptions::default();
        let a = make_split_plan(&labels, 0, 42, &opts).unwrap();
        let b = make_split_plan(&labels, 0, 42, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 400);
        assert_eq!(a.test.len(), 132);
        assert_eq!(a.train.len(), 268);
        assert_eq!(a.fold_sizes(), vec![67; 4]);
        let pos = a.points.iter().filter(|&&i| labels[i] > 0.0).count();
        assert_eq!(pos, 200);
        let mut all = a.points.clone();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 400);
        let c = make_split_plan(&labels, 1, 42, &opts).unwrap();
        assert_ne!(a.points, c.points);
        assert!(make_split_plan(&labels[..399], 0, 42, &opts).is_err());
    }

    #[test]
    fn split_plan_falls_back_to_uniform_draw() {
        let labels = toy_labels(50, 450);
        let a = make_split_plan(&labels, 3, 1, &SplitOptions::default()).unwrap();
        assert_eq!(a.points.len(), 400);
    }

    #[test]
    fn load_toy_csv_with_categorical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        fs::write(&path, "x,colour,y\n1.5,red,yes\n2.0,blue,no\n").unwrap();
        let schema = CsvSchema {
            delimiter: Delimiter::Char(','),
            has_header: true,
            columns: vec![
                ColumnSpec::Numeric { name: "x".into() },
                ColumnSpec::Categorical {
                    name: "colour".into(),
                    levels: strings(&["blue", "green", "red"]),
                },
                ColumnSpec::Label {
                    name: "y".into(),
                    positive: "yes".into(),
                },
            ],
        };
        let d = load_csv(&path, &schema).unwrap();
        assert_eq!(d.features, array![[1.5, 0.0, 0.0, 1.0], [2.0, 1.0, 0.0, 0.0]]);
        assert_eq!(d.labels, vec![1.0, -1.0]);

        fs::write(&path, "x,colour,y\n1.5,red,yes\n2.0,purple,no\n").unwrap();
        match load_csv(&path, &schema) {
            Err(QmklError::Ingestion { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "x,colour,y\n1.5,red\n").unwrap();
        assert!(matches!(load_csv(&path, &schema), Err(QmklError::Ingestion { row: 2, .. })));
        assert!(matches!(
            load_csv(&dir.path().join("missing.csv"), &schema),
            Err(QmklError::Io { .. })
        ));
    }

    #[test]
    fn whitespace_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        let row = |label: u8| {
            let mut s: String = (1..=24).map(|i| format!("  {i}")).collect();
            s.push_str(&format!("   {label}\n"));
            s
        };
        fs::write(&path, format!("{}{}", row(1), row(2))).unwrap();
        let d = load_csv(&path, &CsvSchema::german_numeric()).unwrap();
        assert_eq!(d.features.dim(), (2, 24));
        assert_eq!(d.labels, vec![-1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn pca_variances_are_rotation_invariant(
            entries in proptest::collection::vec(-3.0f64..3.0, 24),
            theta in 0.0f64..6.28,
        ) {
            let x = Array2::from_shape_vec((8, 3), entries).unwrap();
            let (c, s) = (theta.cos(), theta.sin());
            let rot = array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
            let y = x.dot(&rot);
            let a = Pca::fit(x.view(), 3).unwrap();
            let b = Pca::fit(y.view(), 3).unwrap();
            for (u, v) in a.explained_variance.iter().zip(&b.explained_variance) {
                prop_assert!((u - v).abs() < 1e-8);
            }
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = a.components[i].iter().zip(&a.components[j]).map(|(p, q)| p * q).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot - expected).abs() < 1e-8);
                }
            }
            for w in a.explained_variance.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn standardized_train_has_zero_mean_unit_variance(
            entries in proptest::collection::vec(-100.0f64..100.0, 30),
        ) {
            let x = Array2::from_shape_vec((10, 3), entries).unwrap();
            let z = Standardizer::fit(x.view()).unwrap().apply(x.view()).unwrap();
            for col in z.axis_iter(Axis(1)) {
                let mean = col.mean().unwrap();
                prop_assert!(mean.abs() < 1e-10);
                let var = col.var(0.0);
                prop_assert!((var - 1.0).abs() < 1e-8 || var < 1e-20);
            }
        }
    }
}
