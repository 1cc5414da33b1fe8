//! The four pipeline stages behind the command line: `prepare`, `kernels`,
//! `run` and `diagnose`.
//!
//! Layout under the configured output directory:
//!
//! ```text
//! prepared/{dataset}_sNN_dNN.csv     one prepared split per (sample, dim)
//! kernels/{dataset}_sNN_dNN/*.csv    train/train and test/train kernel matrices
//! results/{dataset}_sNN_dNN.json     ResultsRecord per (sample, dim)
//! results/tidy.csv                   long-format metrics
//! results/best_counts.csv            per-dim best-model counts over samples
//! timings/{dataset}_sNN_dNN.json     wall-clock seconds per stage
//! diagnostics/                       concentration.csv, shot_sweep.csv, tidy.csv, scatter/
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Family};
use crate::dataprep::{load_csv, make_split_plan, prepare_split, Dataset, PreparedSplit};
use crate::diagnostics::{concentration_stats, shot_sweep, ConcentrationStats, SweepKernel};
use crate::error::{QmklError, Result};
use crate::feature_map::FeatureMapSpec;
use crate::kernels::{
    fidelity_matrix, projected_features, projected_matrix, psd_project, rbf_default_gamma, rbf_matrix,
    KernelKind, KernelMatrix, KernelMeta, ProjectedFeatures,
};
use crate::linalg::frobenius_norm;
use crate::mkl::{
    alignment, centered_alignment, combine_views, fit_weights, target_kernel, weights_average, Strategy,
    TargetKernel, WeightVector,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::svm::{decision_values, roc_auc, train};

pub const TIDY_HEADER: [&str; 8] = [
    "dataset",
    "sample_id",
    "n_qubits",
    "kernel_kind",
    "strategy",
    "shots",
    "metric",
    "value",
];

const TAG_FIDELITY: u64 = 1;
const TAG_PROJECTED: u64 = 2;
const TAG_FOLDS: u64 = 3;
const TAG_SWEEP: u64 = 4;

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn key_u64(text: &str) -> u64 {
    let d = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| QmklError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| QmklError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| QmklError::io(path, e))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn task_stem(cfg: &ExperimentConfig, sample_id: usize, dim: usize) -> String {
    format!("{}_s{sample_id:02}_d{dim:02}", cfg.dataset.name)
}

pub fn prepared_path(cfg: &ExperimentConfig, sample_id: usize, dim: usize) -> PathBuf {
    cfg.output_dir()
        .join("prepared")
        .join(format!("{}.csv", task_stem(cfg, sample_id, dim)))
}

pub fn results_path(cfg: &ExperimentConfig, sample_id: usize, dim: usize) -> PathBuf {
    cfg.output_dir()
        .join("results")
        .join(format!("{}.json", task_stem(cfg, sample_id, dim)))
}

fn tasks(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    (0..cfg.evaluation.n_samples)
        .flat_map(|s| cfg.preprocessing.dims.iter().map(move |&d| (s, d)))
        .collect()
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let schema = cfg.dataset.schema.resolve()?;
    load_csv(&cfg.dataset_path(), &schema)
}

// ---------------------------------------------------------------- prepare

/// Columns: `sample_id,dim,point_index,role,fold,label,f0..f{dim-1}`.
/// Train rows come first in plan order; test rows have an empty fold.
pub fn prepared_csv(split: &PreparedSplit) -> String {
    let mut out = String::from("sample_id,dim,point_index,role,fold,label");
    for i in 0..split.dim {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    let plan = &split.plan;
    let mut row = |idx: usize, role: &str, fold: Option<usize>, y: f64, x: ArrayView2<f64>, r: usize| {
        out.push_str(&format!(
            "{},{},{idx},{role},{},{}",
            plan.sample_id,
            split.dim,
            fold.map(|f| f.to_string()).unwrap_or_default(),
            y as i64
        ));
        for v in x.row(r) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    };
    for (p, &idx) in plan.train.iter().enumerate() {
        row(idx, "train", Some(plan.folds[p]), split.train_y[p], split.train_x.view(), p);
    }
    for (p, &idx) in plan.test.iter().enumerate() {
        row(idx, "test", None, split.test_y[p], split.test_x.view(), p);
    }
    out
}

/// A prepared split as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub sample_id: usize,
    pub dim: usize,
    pub train_points: Vec<usize>,
    pub test_points: Vec<usize>,
    pub folds: Vec<usize>,
    pub train_x: Array2<f64>,
    pub test_x: Array2<f64>,
    pub train_y: Vec<f64>,
    pub test_y: Vec<f64>,
    /// sha256 of the file bytes.
    pub digest: String,
}

pub fn read_prepared(path: &Path) -> Result<PreparedData> {
    let bytes = fs::read(path).map_err(|e| QmklError::io(path, e))?;
    let digest = sha256_hex(&bytes);
    let bad = |row: usize, msg: String| QmklError::Ingestion {
        path: path.to_path_buf(),
        row,
        message: msg,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if header.len() < 6 || &header[3] != "role" {
        return Err(bad(1, "not a prepared-split file".into()));
    }
    let dim = header.len() - 6;
    let (mut sample_id, mut tr_x, mut te_x) = (0, Vec::new(), Vec::new());
    let mut d = PreparedData {
        sample_id: 0,
        dim,
        train_points: vec![],
        test_points: vec![],
        folds: vec![],
        train_x: Array2::zeros((0, dim)),
        test_x: Array2::zeros((0, dim)),
        train_y: vec![],
        test_y: vec![],
        digest,
    };
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|_| bad(line, format!("column {} is not numeric: {:?}", k + 1, &rec[k])))
        };
        sample_id = num(0)? as usize;
        let idx = num(2)? as usize;
        let y = num(5)?;
        let feats = (6..rec.len()).map(num).collect::<Result<Vec<_>>>()?;
        match &rec[3] {
            "train" => {
                d.train_points.push(idx);
                d.folds.push(num(4)? as usize);
                d.train_y.push(y);
                tr_x.extend(feats);
            }
            "test" => {
                d.test_points.push(idx);
                d.test_y.push(y);
                te_x.extend(feats);
            }
            other => return Err(bad(line, format!("unknown role {other:?}"))),
        }
    }
    d.sample_id = sample_id;
    d.train_x = Array2::from_shape_vec((d.train_y.len(), dim), tr_x).map_err(|e| bad(0, e.to_string()))?;
    d.test_x = Array2::from_shape_vec((d.test_y.len(), dim), te_x).map_err(|e| bad(0, e.to_string()))?;
    Ok(d)
}

fn prepare_one(cfg: &ExperimentConfig, data: &Dataset, sample_id: usize, dim: usize) -> Result<PreparedSplit> {
    let plan = make_split_plan(&data.labels, sample_id, cfg.preprocessing.seed, &cfg.split_options())?;
    prepare_split(data, &plan, dim)
}

/// Writes every prepared split; output bytes depend only on the config.
pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    log::info!("loaded {} rows from {}", data.n_rows(), data.provenance);
    tasks(cfg)
        .par_iter()
        .map(|&(s, d)| {
            let split = prepare_one(cfg, &data, s, d)?;
            let path = prepared_path(cfg, s, d);
            write_atomic(&path, prepared_csv(&split).as_bytes())?;
            Ok(path)
        })
        .collect()
}

fn load_prepared(cfg: &ExperimentConfig, sample_id: usize, dim: usize) -> Result<PreparedData> {
    let path = prepared_path(cfg, sample_id, dim);
    if !path.is_file() {
        return Err(QmklError::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "prepared split missing; run `prepare` first"),
        ));
    }
    read_prepared(&path)
}

// ---------------------------------------------------------------- kernels

/// One base kernel evaluated on a prepared split.
#[derive(Clone, Debug)]
pub struct BaseKernel {
    pub label: String,
    pub kind: KernelKind,
    pub gamma: Option<f64>,
    /// Train × train.
    pub train: Array2<f64>,
    /// Test × train.
    pub test: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct KernelSet {
    pub kernels: Vec<BaseKernel>,
    pub fidelity: Vec<usize>,
    /// Projected kernels grouped by γ.
    pub projected: Vec<(f64, Vec<usize>)>,
    pub rbf: Vec<usize>,
    /// Untuned quantum baseline.
    pub baseline: usize,
    /// RBF with the inverse-variance bandwidth.
    pub rbf_scale: usize,
}

struct ArtifactStore<'a> {
    dir: PathBuf,
    digest: &'a str,
    shots: u64,
    master: u64,
    force: bool,
}

impl ArtifactStore<'_> {
    fn fetch(
        &self,
        identity: &str,
        role: &str,
        kind: KernelKind,
        meta: KernelMeta,
        compute: &mut dyn FnMut() -> Result<Array2<f64>>,
    ) -> Result<Array2<f64>> {
        let path = self
            .dir
            .join(format!("{}_{role}.csv", &sha256_hex(identity.as_bytes())[..16]));
        let hash = sha256_hex(
            format!("{identity}|{role}|{}|shots={}|seed={}", self.digest, self.shots, self.master).as_bytes(),
        );
        if path.is_file() && !self.force {
            let (_, existing) = KernelMatrix::read_csv_header(&path)?;
            if existing.hash.as_deref() == Some(hash.as_str()) {
                return Ok(KernelMatrix::read_csv(&path)?.values);
            }
            return Err(QmklError::StaleArtifact {
                path,
                message: "content hash differs from the current config and split; rerun with --force".into(),
            });
        }
        let values = compute()?;
        fs::create_dir_all(&self.dir).map_err(|e| QmklError::io(&self.dir, e))?;
        let km = KernelMatrix::new(
            values,
            kind,
            KernelMeta {
                hash: Some(hash),
                ..meta
            },
        );
        km.write_csv(&path)?;
        Ok(km.values)
    }
}

fn quantum_meta(spec: &FeatureMapSpec, dim: usize, gamma: Option<f64>, shots: u64, seed: u64) -> KernelMeta {
    KernelMeta {
        spec: Some(spec.to_string()),
        n_qubits: dim,
        alpha: Some(spec.alpha()),
        gamma,
        shots,
        seed,
        hash: None,
    }
}

fn fidelity_kernel(
    store: &ArtifactStore,
    prep: &PreparedData,
    spec: &FeatureMapSpec,
    label: String,
) -> Result<BaseKernel> {
    let identity = format!("fidelity|{}", spec.canonical());
    let base = derive_seed(
        store.master,
        &[prep.sample_id as u64, prep.dim as u64, key_u64(&identity), TAG_FIDELITY],
    );
    let (s_tr, s_te) = (derive_seed(base, &[0]), derive_seed(base, &[1]));
    let shots = store.shots;
    let train = store.fetch(
        &identity,
        "train",
        KernelKind::Fidelity,
        quantum_meta(spec, prep.dim, None, shots, s_tr),
        &mut || Ok(fidelity_matrix(spec, prep.train_x.view(), None, shots, s_tr)?.values),
    )?;
    let test = store.fetch(
        &identity,
        "test",
        KernelKind::Fidelity,
        quantum_meta(spec, prep.dim, None, shots, s_te),
        &mut || Ok(fidelity_matrix(spec, prep.test_x.view(), Some(prep.train_x.view()), shots, s_te)?.values),
    )?;
    Ok(BaseKernel {
        label,
        kind: KernelKind::Fidelity,
        gamma: None,
        train,
        test,
    })
}

fn projected_kernels(
    store: &ArtifactStore,
    prep: &PreparedData,
    spec: &FeatureMapSpec,
    gammas: &[f64],
) -> Result<Vec<BaseKernel>> {
    let base = derive_seed(
        store.master,
        &[
            prep.sample_id as u64,
            prep.dim as u64,
            key_u64(&format!("projected|{}", spec.canonical())),
            TAG_PROJECTED,
        ],
    );
    let (s_tr, s_te) = (derive_seed(base, &[0]), derive_seed(base, &[1]));
    let shots = store.shots;
    let mut feats: Option<(ProjectedFeatures, ProjectedFeatures)> = None;
    let features = |feats: &mut Option<(ProjectedFeatures, ProjectedFeatures)>| -> Result<()> {
        if feats.is_none() {
            *feats = Some((
                projected_features(spec, prep.train_x.view(), shots, s_tr)?,
                projected_features(spec, prep.test_x.view(), shots, s_te)?,
            ));
        }
        Ok(())
    };
    let mut out = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let identity = format!("projected|{}|gamma={g:?}", spec.canonical());
        let train = store.fetch(
            &identity,
            "train",
            KernelKind::Projected,
            quantum_meta(spec, prep.dim, Some(g), shots, s_tr),
            &mut || {
                features(&mut feats)?;
                let (tr, _) = feats.as_ref().expect("features computed");
                Ok(projected_matrix(tr, tr, g)?.values)
            },
        )?;
        let test = store.fetch(
            &identity,
            "test",
            KernelKind::Projected,
            quantum_meta(spec, prep.dim, Some(g), shots, s_te),
            &mut || {
                features(&mut feats)?;
                let (tr, te) = feats.as_ref().expect("features computed");
                Ok(projected_matrix(te, tr, g)?.values)
            },
        )?;
        out.push(BaseKernel {
            label: format!("PQ[{spec}|g={g}]"),
            kind: KernelKind::Projected,
            gamma: Some(g),
            train,
            test,
        });
    }
    Ok(out)
}

fn rbf_kernel(prep: &PreparedData, gamma: f64, label: String) -> Result<BaseKernel> {
    Ok(BaseKernel {
        label,
        kind: KernelKind::Rbf,
        gamma: Some(gamma),
        train: rbf_matrix(prep.train_x.view(), None, gamma)?.values,
        test: rbf_matrix(prep.test_x.view(), Some(prep.train_x.view()), gamma)?.values,
    })
}

/// Loads cached quantum kernels for one split, computing and caching any
/// that are missing. RBF kernels are always recomputed.
pub fn kernel_set(cfg: &ExperimentConfig, prep: &PreparedData, force: bool) -> Result<KernelSet> {
    let dir = cfg
        .output_dir()
        .join("kernels")
        .join(task_stem(cfg, prep.sample_id, prep.dim));
    let store = ArtifactStore {
        dir,
        digest: &prep.digest,
        shots: cfg.mode.shots,
        master: cfg.preprocessing.seed,
        force,
    };
    let specs = cfg.feature_map_specs()?;
    let mut set = KernelSet {
        kernels: vec![],
        fidelity: vec![],
        projected: cfg.kernels.pq_gammas.iter().map(|&g| (g, vec![])).collect(),
        rbf: vec![],
        baseline: 0,
        rbf_scale: 0,
    };
    if cfg.wants(KernelKind::Fidelity) {
        for spec in &specs {
            set.fidelity.push(set.kernels.len());
            set.kernels
                .push(fidelity_kernel(&store, prep, spec, format!("FQ[{spec}]"))?);
        }
    }
    if cfg.wants(KernelKind::Projected) {
        for spec in &specs {
            for (gi, k) in projected_kernels(&store, prep, spec, &cfg.kernels.pq_gammas)?
                .into_iter()
                .enumerate()
            {
                set.projected[gi].1.push(set.kernels.len());
                set.kernels.push(k);
            }
        }
    } else {
        set.projected.clear();
    }
    if cfg.wants(KernelKind::Rbf) {
        for &g in &cfg.kernels.rbf_gammas {
            set.rbf.push(set.kernels.len());
            set.kernels.push(rbf_kernel(prep, g, format!("RBF[g={g}]"))?);
        }
    }
    let baseline = cfg.kernels.baseline.to_spec()?;
    set.baseline = set.kernels.len();
    set.kernels
        .push(fidelity_kernel(&store, prep, &baseline, format!("FQ[{baseline}]"))?);
    let g = rbf_default_gamma(prep.train_x.view());
    set.rbf_scale = set.kernels.len();
    set.kernels.push(rbf_kernel(prep, g, format!("RBF[g=scale:{g:.6}]"))?);
    Ok(set)
}

/// Computes (or validates cached) kernel matrices for every split. Returns
/// the number of splits processed.
pub fn cmd_kernels(cfg: &ExperimentConfig, force: bool) -> Result<usize> {
    cfg.validate()?;
    let t = tasks(cfg);
    t.par_iter()
        .map(|&(s, d)| {
            let prep = load_prepared(cfg, s, d)?;
            let start = Instant::now();
            let set = kernel_set(cfg, &prep, force)?;
            log::info!(
                "{}: {} kernels in {:.1}s",
                task_stem(cfg, s, d),
                set.kernels.len(),
                start.elapsed().as_secs_f64()
            );
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(t.len())
}

// ---------------------------------------------------------------- run

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    /// `FQ-MKL`, `Single (Q)`, or a base kernel label.
    pub model: String,
    /// Strategy name, or `single`.
    pub strategy: String,
    pub mkl: bool,
    pub c: Option<f64>,
    pub gamma: Option<f64>,
    pub cv_auc: Option<f64>,
    pub train_auc: Option<f64>,
    pub test_auc: Option<f64>,
    pub n_support: Option<usize>,
    pub bias: Option<f64>,
    pub alignment: Option<f64>,
    pub centered_alignment: Option<f64>,
    pub stats: Option<ConcentrationStats>,
    pub kernels: Vec<String>,
    pub weights: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub config_hash: String,
    pub dataset: String,
    pub sample_id: usize,
    pub n_qubits: usize,
    pub shots: u64,
    pub prepared_digest: String,
    pub models: Vec<ModelResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub sample_id: usize,
    pub n_qubits: usize,
    pub kernel_seconds: f64,
    pub cv_seconds: f64,
    pub final_seconds: f64,
}

#[derive(Clone, Debug)]
struct Variant {
    indices: Vec<usize>,
    gamma: Option<f64>,
}

#[derive(Clone, Debug)]
struct ModelSpec {
    name: String,
    strategy: Option<Strategy>,
    mkl: bool,
    variants: Vec<Variant>,
}

fn model_specs(cfg: &ExperimentConfig, set: &KernelSet) -> Vec<ModelSpec> {
    let mut out = Vec::new();
    let one = |i: usize, k: &BaseKernel| Variant {
        indices: vec![i],
        gamma: k.gamma,
    };
    for &fam in &cfg.mkl.families {
        let variants: Vec<Variant> = match fam {
            Family::Fidelity => vec![Variant {
                indices: set.fidelity.clone(),
                gamma: None,
            }],
            Family::Projected => set
                .projected
                .iter()
                .map(|(g, idx)| Variant {
                    indices: idx.clone(),
                    gamma: Some(*g),
                })
                .collect(),
            Family::Classical => vec![Variant {
                indices: set.rbf.clone(),
                gamma: None,
            }],
            Family::Hybrid => {
                let join = |pq: &[usize]| {
                    let mut v = set.fidelity.clone();
                    v.extend_from_slice(pq);
                    v.extend_from_slice(&set.rbf);
                    v
                };
                if set.projected.is_empty() {
                    vec![Variant {
                        indices: join(&[]),
                        gamma: None,
                    }]
                } else {
                    set.projected
                        .iter()
                        .map(|(g, idx)| Variant {
                            indices: join(idx),
                            gamma: Some(*g),
                        })
                        .collect()
                }
            }
        };
        let variants: Vec<Variant> = variants.into_iter().filter(|v| !v.indices.is_empty()).collect();
        if variants.is_empty() {
            continue;
        }
        for &s in &cfg.mkl.strategies {
            out.push(ModelSpec {
                name: fam.label().to_string(),
                strategy: Some(s),
                mkl: true,
                variants: variants.clone(),
            });
        }
    }
    let single = |name: &str, idx: &[usize]| ModelSpec {
        name: name.to_string(),
        strategy: None,
        mkl: false,
        variants: idx.iter().map(|&i| one(i, &set.kernels[i])).collect(),
    };
    out.push(single("Single (Q)", &[set.baseline]));
    if !set.fidelity.is_empty() {
        out.push(single("Single (Q) Opt", &set.fidelity));
    }
    out.push(single("Single (C)", &[set.rbf_scale]));
    if !set.rbf.is_empty() {
        out.push(single("Single (C) Opt", &set.rbf));
    }
    if cfg.evaluation.singles {
        let mut all = set.fidelity.clone();
        all.extend(set.projected.iter().flat_map(|(_, v)| v.iter().copied()));
        all.extend(&set.rbf);
        for i in all {
            out.push(single(&set.kernels[i].label, &[i]));
        }
    }
    out
}

/// Fold assignment with both classes in every fit and validation part; one
/// seeded reshuffle is attempted before giving up.
pub fn checked_folds(labels: &[f64], folds: &[usize], n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    let ok = |f: &[usize]| {
        (0..n_folds).all(|k| {
            let has = |pick: &dyn Fn(usize) -> bool| {
                let ys: Vec<f64> = (0..labels.len()).filter(|&p| pick(f[p])).map(|p| labels[p]).collect();
                ys.iter().any(|&y| y > 0.0) && ys.iter().any(|&y| y <= 0.0)
            };
            has(&|x| x == k) && has(&|x| x != k)
        })
    };
    if ok(folds) {
        return Ok(folds.to_vec());
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut resampled = vec![0; labels.len()];
    for (r, &p) in order.iter().enumerate() {
        resampled[p] = r % n_folds;
    }
    if ok(&resampled) {
        log::warn!("degenerate fold resampled");
        return Ok(resampled);
    }
    Err(QmklError::degenerate(
        "a cross-validation fold lacks one class, also after resampling",
    ))
}

fn fit_model_weights(
    cfg: &ExperimentConfig,
    strategy: Option<Strategy>,
    kernels: &[ArrayView2<f64>],
    target: &TargetKernel,
) -> Result<WeightVector> {
    match strategy {
        None => weights_average(kernels.len()),
        Some(s) => fit_weights(
            s,
            kernels,
            target.values.view(),
            &cfg.mkl.options(frobenius_norm(target.values.view())),
        ),
    }
}

fn maybe_psd(cfg: &ExperimentConfig, k: Array2<f64>, dim: usize) -> Result<Array2<f64>> {
    if cfg.mode.shots == 0 {
        return Ok(k);
    }
    let km = KernelMatrix::new(
        k,
        KernelKind::Combined,
        KernelMeta {
            n_qubits: dim,
            shots: cfg.mode.shots,
            ..Default::default()
        },
    );
    Ok(psd_project(&km, 0.0)?.values)
}

/// Validation AUC for every C in the grid.
fn fold_scores(
    cfg: &ExperimentConfig,
    strategy: Option<Strategy>,
    fit_k: &[ArrayView2<f64>],
    val_k: &[ArrayView2<f64>],
    target: &TargetKernel,
    y_val: &[f64],
    dim: usize,
) -> Result<Vec<f64>> {
    let w = fit_model_weights(cfg, strategy, fit_k, target)?;
    let k_fit = maybe_psd(cfg, combine_views(fit_k, &w.weights)?, dim)?;
    let k_val = combine_views(val_k, &w.weights)?;
    cfg.svm
        .c_grid
        .iter()
        .map(|&c| {
            let model = train(k_fit.view(), &target.labels, &cfg.svm.params(c))?;
            let scores = decision_values(&model, k_val.view())?;
            Ok(roc_auc(&scores, y_val)?.auc)
        })
        .collect()
}

struct Selection {
    variant: usize,
    c: f64,
    cv_auc: f64,
}

/// Cross-validates every (model, variant, C); returns the best per model.
fn cross_validate(
    cfg: &ExperimentConfig,
    set: &KernelSet,
    models: &[ModelSpec],
    y: &[f64],
    folds: &[usize],
    dim: usize,
) -> Result<Vec<std::result::Result<Selection, String>>> {
    let jobs: Vec<(usize, usize)> = models
        .iter()
        .enumerate()
        .flat_map(|(m, spec)| (0..spec.variants.len()).map(move |v| (m, v)))
        .collect();
    let n_c = cfg.svm.c_grid.len();
    let mut sums: Vec<std::result::Result<Vec<f64>, String>> = vec![Ok(vec![0.0; n_c]); jobs.len()];
    for f in 0..cfg.evaluation.folds {
        let fit: Vec<usize> = (0..y.len()).filter(|&p| folds[p] != f).collect();
        let val: Vec<usize> = (0..y.len()).filter(|&p| folds[p] == f).collect();
        let y_fit: Vec<f64> = fit.iter().map(|&p| y[p]).collect();
        let y_val: Vec<f64> = val.iter().map(|&p| y[p]).collect();
        let target = target_kernel(&y_fit)?;
        let fit_k: Vec<Array2<f64>> = set
            .kernels
            .par_iter()
            .map(|k| k.train.select(Axis(0), &fit).select(Axis(1), &fit))
            .collect();
        let val_k: Vec<Array2<f64>> = set
            .kernels
            .par_iter()
            .map(|k| k.train.select(Axis(0), &val).select(Axis(1), &fit))
            .collect();
        let scores: Vec<Result<Vec<f64>>> = jobs
            .par_iter()
            .map(|&(m, v)| {
                let idx = &models[m].variants[v].indices;
                let fk: Vec<ArrayView2<f64>> = idx.iter().map(|&i| fit_k[i].view()).collect();
                let vk: Vec<ArrayView2<f64>> = idx.iter().map(|&i| val_k[i].view()).collect();
                fold_scores(cfg, models[m].strategy, &fk, &vk, &target, &y_val, dim)
            })
            .collect();
        for (acc, s) in sums.iter_mut().zip(scores) {
            if let Ok(a) = acc {
                match s {
                    Ok(s) => a.iter_mut().zip(s).for_each(|(x, v)| *x += v),
                    Err(e) => *acc = Err(format!("fold {f}: {e}")),
                }
            }
        }
    }
    let nf = cfg.evaluation.folds as f64;
    let mut out: Vec<std::result::Result<Selection, String>> =
        (0..models.len()).map(|_| Err(String::new())).collect();
    for (&(m, v), acc) in jobs.iter().zip(sums) {
        match acc {
            Ok(a) => {
                for (ci, total) in a.into_iter().enumerate() {
                    let mean = total / nf;
                    let better = match &out[m] {
                        Ok(sel) => mean > sel.cv_auc,
                        Err(_) => true,
                    };
                    if better {
                        out[m] = Ok(Selection {
                            variant: v,
                            c: cfg.svm.c_grid[ci],
                            cv_auc: mean,
                        });
                    }
                }
            }
            Err(e) => {
                if let Err(prev) = &mut out[m] {
                    if prev.is_empty() {
                        *prev = e;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn final_fit(
    cfg: &ExperimentConfig,
    set: &KernelSet,
    spec: &ModelSpec,
    sel: &Selection,
    y_train: &[f64],
    target: &TargetKernel,
    y_test: &[f64],
    dim: usize,
) -> Result<ModelResult> {
    let variant = &spec.variants[sel.variant];
    let tr: Vec<ArrayView2<f64>> = variant.indices.iter().map(|&i| set.kernels[i].train.view()).collect();
    let te: Vec<ArrayView2<f64>> = variant.indices.iter().map(|&i| set.kernels[i].test.view()).collect();
    let w = fit_model_weights(cfg, spec.strategy, &tr, target)?;
    let k_train = maybe_psd(cfg, combine_views(&tr, &w.weights)?, dim)?;
    let k_test = combine_views(&te, &w.weights)?;
    let model = train(k_train.view(), y_train, &cfg.svm.params(sel.c))?;
    let train_auc = roc_auc(&decision_values(&model, k_train.view())?, y_train)?.auc;
    // Test labels are used here and nowhere earlier.
    let test_auc = roc_auc(&decision_values(&model, k_test.view())?, y_test)?.auc;
    Ok(ModelResult {
        model: spec.name.clone(),
        strategy: spec.strategy.map_or_else(|| "single".to_string(), |s| s.to_string()),
        mkl: spec.mkl,
        c: Some(sel.c),
        gamma: variant.gamma,
        cv_auc: Some(sel.cv_auc),
        train_auc: Some(train_auc),
        test_auc: Some(test_auc),
        n_support: Some(model.n_support()),
        bias: Some(model.bias),
        alignment: alignment(k_train.view(), target.values.view()).ok(),
        centered_alignment: centered_alignment(k_train.view(), target.values.view()).ok(),
        stats: concentration_stats(k_train.view(), dim).ok(),
        kernels: variant.indices.iter().map(|&i| set.kernels[i].label.clone()).collect(),
        weights: w.weights,
        error: None,
    })
}

fn failed(spec: &ModelSpec, err: String) -> ModelResult {
    ModelResult {
        model: spec.name.clone(),
        strategy: spec.strategy.map_or_else(|| "single".to_string(), |s| s.to_string()),
        mkl: spec.mkl,
        c: None,
        gamma: None,
        cv_auc: None,
        train_auc: None,
        test_auc: None,
        n_support: None,
        bias: None,
        alignment: None,
        centered_alignment: None,
        stats: None,
        kernels: vec![],
        weights: vec![],
        error: Some(err),
    }
}

/// Evaluates every model on one (sample, dim) split.
pub fn run_task(cfg: &ExperimentConfig, prep: &PreparedData, force: bool) -> Result<(ResultsRecord, TimingRecord)> {
    let t0 = Instant::now();
    let set = kernel_set(cfg, prep, force)?;
    let t1 = Instant::now();
    let folds = checked_folds(
        &prep.train_y,
        &prep.folds,
        cfg.evaluation.folds,
        derive_seed(cfg.preprocessing.seed, &[prep.sample_id as u64, prep.dim as u64, TAG_FOLDS]),
    )?;
    let models = model_specs(cfg, &set);
    let selections = cross_validate(cfg, &set, &models, &prep.train_y, &folds, prep.dim)?;
    let t2 = Instant::now();
    let target = target_kernel(&prep.train_y)?;
    let results: Vec<ModelResult> = models
        .par_iter()
        .zip(selections.par_iter())
        .map(|(spec, sel)| match sel {
            Ok(sel) => final_fit(cfg, &set, spec, sel, &prep.train_y, &target, &prep.test_y, prep.dim)
                .unwrap_or_else(|e| failed(spec, e.to_string())),
            Err(e) => failed(spec, e.clone()),
        })
        .collect();
    for r in results.iter().filter(|r| r.error.is_some()) {
        log::warn!("{} {}: {}", r.model, r.strategy, r.error.as_deref().unwrap_or(""));
    }
    let record = ResultsRecord {
        config_hash: cfg.hash(),
        dataset: cfg.dataset.name.clone(),
        sample_id: prep.sample_id,
        n_qubits: prep.dim,
        shots: cfg.mode.shots,
        prepared_digest: prep.digest.clone(),
        models: results,
    };
    let timing = TimingRecord {
        sample_id: prep.sample_id,
        n_qubits: prep.dim,
        kernel_seconds: (t1 - t0).as_secs_f64(),
        cv_seconds: (t2 - t1).as_secs_f64(),
        final_seconds: t2.elapsed().as_secs_f64(),
    };
    Ok((record, timing))
}

/// Tidy rows (see [`TIDY_HEADER`]) for one record.
pub fn tidy_rows(record: &ResultsRecord) -> Vec<[String; 8]> {
    let mut rows = Vec::new();
    for m in record.models.iter().filter(|m| m.error.is_none()) {
        let mut push = |metric: &str, v: Option<f64>| {
            if let Some(v) = v {
                rows.push([
                    record.dataset.clone(),
                    record.sample_id.to_string(),
                    record.n_qubits.to_string(),
                    m.model.clone(),
                    m.strategy.clone(),
                    record.shots.to_string(),
                    metric.to_string(),
                    fmt_f64(v),
                ]);
            }
        };
        push("test_auc", m.test_auc);
        push("train_auc", m.train_auc);
        push("cv_auc", m.cv_auc);
        push("alignment", m.alignment);
        push("centered_alignment", m.centered_alignment);
        push("c", m.c);
        push("gamma", m.gamma);
        push("n_support", m.n_support.map(|n| n as f64));
        if let Some(s) = &m.stats {
            push("offdiag_mean", Some(s.offdiag_mean));
            push("offdiag_variance", Some(s.offdiag_variance));
        }
    }
    rows
}

/// `(n_qubits, model, strategy) → count` of samples on which the MKL model
/// reaches the best test AUC among MKL models; ties credit every tied model.
pub fn best_counts(records: &[ResultsRecord]) -> BTreeMap<(usize, String, String), usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        let mkl: Vec<&ModelResult> = r.models.iter().filter(|m| m.mkl && m.test_auc.is_some()).collect();
        for m in &mkl {
            counts
                .entry((r.n_qubits, m.model.clone(), m.strategy.clone()))
                .or_insert(0);
        }
        let best = mkl
            .iter()
            .filter_map(|m| m.test_auc)
            .fold(f64::NEG_INFINITY, f64::max);
        for m in mkl.iter().filter(|m| m.test_auc == Some(best)) {
            *counts
                .get_mut(&(r.n_qubits, m.model.clone(), m.strategy.clone()))
                .expect("inserted above") += 1;
        }
    }
    counts
}

fn write_csv_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| QmklError::io(path, std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| QmklError::io(path, std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("record serializes");
    s.push(b'\n');
    s
}

/// Runs (or reloads) every (sample, dim) task, then writes the tidy table and
/// best-count table.
pub fn cmd_run(cfg: &ExperimentConfig, force: bool) -> Result<Vec<ResultsRecord>> {
    cfg.validate()?;
    let hash = cfg.hash();
    let records = tasks(cfg)
        .par_iter()
        .map(|&(s, d)| {
            let path = results_path(cfg, s, d);
            if path.is_file() && !force {
                let text = fs::read_to_string(&path).map_err(|e| QmklError::io(&path, e))?;
                let rec: ResultsRecord = serde_json::from_str(&text)
                    .map_err(|e| QmklError::Parse(format!("{}: {e}", path.display())))?;
                if rec.config_hash == hash {
                    log::info!("{}: reusing results", task_stem(cfg, s, d));
                    return Ok(rec);
                }
                return Err(QmklError::StaleArtifact {
                    path,
                    message: "written under a different config; rerun with --force".into(),
                });
            }
            let prep = load_prepared(cfg, s, d)?;
            let (rec, timing) = run_task(cfg, &prep, force)?;
            write_atomic(&path, &to_json(&rec))?;
            let tpath = cfg
                .output_dir()
                .join("timings")
                .join(format!("{}.json", task_stem(cfg, s, d)));
            write_atomic(&tpath, &to_json(&timing))?;
            log::info!(
                "{}: {} models, {:.1}s",
                task_stem(cfg, s, d),
                rec.models.len(),
                timing.kernel_seconds + timing.cv_seconds + timing.final_seconds
            );
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = cfg.output_dir().join("results");
    write_csv_rows(
        &dir.join("tidy.csv"),
        &TIDY_HEADER,
        records.iter().flat_map(tidy_rows).map(|r| r.to_vec()),
    )?;
    let n_samples = cfg.evaluation.n_samples.to_string();
    write_csv_rows(
        &dir.join("best_counts.csv"),
        &["dataset", "n_qubits", "model", "strategy", "count", "n_samples"],
        best_counts(&records).into_iter().map(|((d, m, s), c)| {
            vec![cfg.dataset.name.clone(), d.to_string(), m, s, c.to_string(), n_samples.clone()]
        }),
    )?;
    Ok(records)
}

// ---------------------------------------------------------------- diagnose

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnoseOutputs {
    pub concentration: PathBuf,
    pub shot_sweep: PathBuf,
    pub tidy: PathBuf,
}

/// First `n_points` train rows of sample 0 prepared at `dim`.
pub fn diagnostic_sample(cfg: &ExperimentConfig, data: &Dataset, dim: usize) -> Result<Array2<f64>> {
    let split = prepare_one(cfg, data, 0, dim)?;
    let n = cfg.diagnostics.n_points;
    if split.train_x.nrows() < n {
        return Err(QmklError::config(format!(
            "diagnostics.n_points: {n} exceeds the {} train rows",
            split.train_x.nrows()
        )));
    }
    Ok(split.train_x.slice(s![..n, ..]).to_owned())
}

fn exact_kernel(spec: &FeatureMapSpec, x: ArrayView2<f64>, kind: KernelKind, gamma: f64) -> Result<KernelMatrix> {
    match kind {
        KernelKind::Projected => {
            let f = projected_features(spec, x, 0, 0)?;
            projected_matrix(&f, &f, gamma)
        }
        _ => fidelity_matrix(spec, x, None, 0, 0),
    }
}

/// Concentration statistics over `diagnostics.dims` and the exact-vs-sampled
/// sweep over `diagnostics.shot_dims`.
pub fn cmd_diagnose(cfg: &ExperimentConfig) -> Result<DiagnoseOutputs> {
    cfg.validate()?;
    let d = &cfg.diagnostics;
    let data = load_dataset(cfg)?;
    let specs = d
        .feature_maps
        .iter()
        .map(|f| f.to_spec())
        .collect::<Result<Vec<_>>>()?;
    let dir = cfg.output_dir().join("diagnostics");
    let name = &cfg.dataset.name;
    let mut tidy: Vec<Vec<String>> = Vec::new();
    let tidy_row = |n: usize, kernel: String, strategy: &str, shots: u64, metric: &str, v: f64| {
        vec![
            name.clone(),
            "0".into(),
            n.to_string(),
            kernel,
            strategy.into(),
            shots.to_string(),
            metric.into(),
            fmt_f64(v),
        ]
    };

    let conc_jobs: Vec<(usize, usize, KernelKind)> = d
        .dims
        .iter()
        .flat_map(|&dim| {
            (0..specs.len()).flat_map(move |si| d.kinds.iter().map(move |&k| (dim, si, k)))
        })
        .collect();
    let samples: BTreeMap<usize, Array2<f64>> = d
        .dims
        .iter()
        .chain(&d.shot_dims)
        .map(|&dim| Ok((dim, diagnostic_sample(cfg, &data, dim)?)))
        .collect::<Result<_>>()?;
    let conc = conc_jobs
        .par_iter()
        .map(|&(dim, si, kind)| {
            let k = exact_kernel(&specs[si], samples[&dim].view(), kind, d.pq_gamma)?;
            concentration_stats(k.view(), dim)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut conc_rows = Vec::new();
    for (&(dim, si, kind), st) in conc_jobs.iter().zip(&conc) {
        let label = format!("{kind}[{}]", specs[si]);
        conc_rows.push(vec![
            name.clone(),
            dim.to_string(),
            specs[si].to_string(),
            kind.to_string(),
            d.n_points.to_string(),
            fmt_f64(st.offdiag_mean),
            fmt_f64(st.offdiag_variance),
            fmt_f64(st.fq_distance),
            fmt_f64(st.pq_distance),
        ]);
        for (metric, v) in [
            ("offdiag_mean", st.offdiag_mean),
            ("offdiag_variance", st.offdiag_variance),
            ("fq_distance", st.fq_distance),
            ("pq_distance", st.pq_distance),
        ] {
            tidy.push(tidy_row(dim, label.clone(), "exact", 0, metric, v));
        }
    }
    let concentration = dir.join("concentration.csv");
    write_csv_rows(
        &concentration,
        &[
            "dataset",
            "n_qubits",
            "feature_map",
            "kernel_kind",
            "n_points",
            "offdiag_mean",
            "offdiag_variance",
            "fq_distance",
            "pq_distance",
        ],
        conc_rows,
    )?;

    let seeds: Vec<u64> = d
        .seeds
        .iter()
        .map(|&s| derive_seed(cfg.preprocessing.seed, &[TAG_SWEEP, s]))
        .collect();
    let sweep_jobs: Vec<(usize, usize, KernelKind)> = d
        .shot_dims
        .iter()
        .flat_map(|&dim| {
            (0..specs.len()).flat_map(move |si| d.kinds.iter().map(move |&k| (dim, si, k)))
        })
        .collect();
    let sweep_kind = |k: KernelKind| match k {
        KernelKind::Projected => SweepKernel::Projected { gamma: d.pq_gamma },
        _ => SweepKernel::Fidelity,
    };
    let sweeps = sweep_jobs
        .par_iter()
        .map(|&(dim, si, kind)| shot_sweep(&specs[si], samples[&dim].view(), sweep_kind(kind), &d.shots, &seeds))
        .collect::<Result<Vec<_>>>()?;
    let mut sweep_rows = Vec::new();
    let scatter = dir.join("scatter");
    for (&(dim, si, kind), rows) in sweep_jobs.iter().zip(&sweeps) {
        let spec = &specs[si];
        let label = format!("{kind}[{spec}]");
        let x = samples[&dim].view();
        let stem = format!("{}_{kind}_d{dim:02}", &sha256_hex(spec.to_string().as_bytes())[..8]);
        fs::create_dir_all(&scatter).map_err(|e| QmklError::io(&scatter, e))?;
        exact_kernel(spec, x, kind, d.pq_gamma)?.write_csv(&scatter.join(format!("{stem}_exact.csv")))?;
        for row in rows {
            // First seed only, for scatter plots.
            let sampled = match sweep_kind(kind) {
                SweepKernel::Fidelity => fidelity_matrix(spec, x, None, row.shots, seeds[0])?,
                SweepKernel::Projected { gamma } => {
                    let f = projected_features(spec, x, row.shots, seeds[0])?;
                    projected_matrix(&f, &f, gamma)?
                }
            };
            sampled.write_csv(&scatter.join(format!("{stem}_shots{}.csv", row.shots)))?;
            sweep_rows.push(vec![
                name.clone(),
                dim.to_string(),
                spec.to_string(),
                kind.to_string(),
                row.shots.to_string(),
                seeds.len().to_string(),
                fmt_f64(row.fit.slope),
                fmt_f64(row.fit.intercept),
                fmt_f64(row.fit.r_squared),
                fmt_f64(row.stats.offdiag_mean),
                fmt_f64(row.stats.offdiag_variance),
            ]);
            for (metric, v) in [
                ("slope", row.fit.slope),
                ("intercept", row.fit.intercept),
                ("r_squared", row.fit.r_squared),
                ("offdiag_mean", row.stats.offdiag_mean),
                ("offdiag_variance", row.stats.offdiag_variance),
            ] {
                tidy.push(tidy_row(dim, label.clone(), "sampled", row.shots, metric, v));
            }
        }
    }
    let shot_sweep_path = dir.join("shot_sweep.csv");
    write_csv_rows(
        &shot_sweep_path,
        &[
            "dataset",
            "n_qubits",
            "feature_map",
            "kernel_kind",
            "shots",
            "n_seeds",
            "slope",
            "intercept",
            "r_squared",
            "offdiag_mean",
            "offdiag_variance",
        ],
        sweep_rows,
    )?;
    let tidy_path = dir.join("tidy.csv");
    write_csv_rows(&tidy_path, &TIDY_HEADER, tidy)?;
    Ok(DiagnoseOutputs {
        concentration,
        shot_sweep: shot_sweep_path,
        tidy: tidy_path,
    })
}
