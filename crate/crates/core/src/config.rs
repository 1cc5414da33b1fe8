//! Declarative experiment configuration (JSON, versioned).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataprep::{CsvSchema, SplitOptions};
use crate::error::{QmklError, Result};
use crate::feature_map::{default_kernel_set, DataMap, Entanglement, FeatureMapConfig, FeatureMapSpec};
use crate::kernels::KernelKind;
use crate::mkl::{MklOptions, Strategy};
use crate::statevector::MAX_QUBITS;
use crate::svm::SvmParams;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaRef {
    Preset(String),
    Inline(CsvSchema),
}

impl SchemaRef {
    pub fn resolve(&self) -> Result<CsvSchema> {
        match self {
            SchemaRef::Preset(name) => CsvSchema::preset(name),
            SchemaRef::Inline(s) => Ok(s.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// Relative paths are resolved against the config file's directory.
    pub path: PathBuf,
    pub schema: SchemaRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessingConfig {
    pub dims: Vec<usize>,
    pub balanced_sample: bool,
    pub seed: u64,
}

impl Default for PreprocessingConfig {
    fn default() -> Self {
        PreprocessingConfig {
            dims: vec![6, 10, 14, 18],
            balanced_sample: true,
            seed: 2024,
        }
    }
}

/// The untuned quantum baseline ("Single (Q)").
pub fn baseline_feature_map() -> FeatureMapConfig {
    FeatureMapConfig {
        paulis: "Z-ZZ".into(),
        alpha: 0.4,
        reps: 1,
        entanglement: Entanglement::Linear,
        data_map: DataMap::Product,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSetConfig {
    pub feature_maps: Vec<FeatureMapConfig>,
    pub kinds: Vec<KernelKind>,
    pub rbf_gammas: Vec<f64>,
    /// Projected-kernel γ values; with more than one, CV picks one per family.
    pub pq_gammas: Vec<f64>,
    pub baseline: FeatureMapConfig,
}

impl Default for KernelSetConfig {
    fn default() -> Self {
        KernelSetConfig {
            feature_maps: default_kernel_set().iter().map(FeatureMapConfig::from).collect(),
            kinds: vec![KernelKind::Fidelity, KernelKind::Projected, KernelKind::Rbf],
            rbf_gammas: vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0],
            pq_gammas: vec![1.0],
            baseline: baseline_feature_map(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeConfig {
    /// 0 = exact statevector values.
    pub shots: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "FQ")]
    Fidelity,
    #[serde(rename = "PQ")]
    Projected,
    #[serde(rename = "C")]
    Classical,
    #[serde(rename = "CQ")]
    Hybrid,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::Fidelity => "FQ-MKL",
            Family::Projected => "PQ-MKL",
            Family::Classical => "C-MKL",
            Family::Hybrid => "CQ-MKL",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MklConfig {
    pub strategies: Vec<Strategy>,
    pub families: Vec<Family>,
    pub tol: f64,
    pub max_iter: usize,
    pub proj_normalize_distance: bool,
    /// Fraction of `‖K_y‖_F` used as the PROJ stopping threshold.
    pub proj_threshold_frac: f64,
}

impl Default for MklConfig {
    fn default() -> Self {
        let o = MklOptions::default();
        MklConfig {
            strategies: Strategy::ALL.to_vec(),
            families: vec![Family::Fidelity, Family::Projected, Family::Classical, Family::Hybrid],
            tol: o.tol,
            max_iter: o.max_iter,
            proj_normalize_distance: o.proj_normalize_distance,
            proj_threshold_frac: 0.05,
        }
    }
}

impl MklConfig {
    pub fn options(&self, target_norm: f64) -> MklOptions {
        MklOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            proj_normalize_distance: self.proj_normalize_distance,
            proj_threshold: Some(self.proj_threshold_frac * target_norm),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    pub c_grid: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        let p = SvmParams::default();
        SvmConfig {
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
            tol: p.tol,
            max_iter: p.max_iter,
        }
    }
}

impl SvmConfig {
    pub fn params(&self, c: f64) -> SvmParams {
        SvmParams {
            c,
            tol: self.tol,
            max_iter: self.max_iter,
            record_objective: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub n_samples: usize,
    pub n_points: usize,
    pub test_frac: f64,
    pub folds: usize,
    /// Also report every base kernel on its own.
    pub singles: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            n_samples: 20,
            n_points: 400,
            test_frac: 0.33,
            folds: 4,
            singles: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub dims: Vec<usize>,
    pub n_points: usize,
    pub feature_maps: Vec<FeatureMapConfig>,
    pub kinds: Vec<KernelKind>,
    pub pq_gamma: f64,
    pub shot_dims: Vec<usize>,
    pub shots: Vec<u64>,
    pub seeds: Vec<u64>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            dims: vec![4, 8, 12, 16, 20],
            n_points: 50,
            feature_maps: vec![FeatureMapConfig {
                paulis: "Z-ZZ".into(),
                alpha: 2.0,
                reps: 1,
                entanglement: Entanglement::Linear,
                data_map: DataMap::Product,
            }],
            kinds: vec![KernelKind::Fidelity, KernelKind::Projected],
            pq_gamma: 1.0,
            shot_dims: vec![4, 8, 12],
            shots: vec![1, 100, 1024, 8192, 1_000_000],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub preprocessing: PreprocessingConfig,
    #[serde(default)]
    pub kernels: KernelSetConfig,
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default)]
    pub mkl: MklConfig,
    #[serde(default)]
    pub svm: SvmConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory that relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn field(path: &str, msg: impl std::fmt::Display) -> QmklError {
    QmklError::Config(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetConfig) -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            dataset,
            preprocessing: Default::default(),
            kernels: Default::default(),
            mode: Default::default(),
            mkl: Default::default(),
            svm: Default::default(),
            evaluation: Default::default(),
            diagnostics: Default::default(),
            output: Default::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| QmklError::Config(format!("invalid config JSON: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| QmklError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.resolve(&self.dataset.path)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn split_options(&self) -> SplitOptions {
        SplitOptions {
            n_points: self.evaluation.n_points,
            test_frac: self.evaluation.test_frac,
            n_folds: self.evaluation.folds,
            balanced: self.preprocessing.balanced_sample,
        }
    }

    pub fn feature_map_specs(&self) -> Result<Vec<FeatureMapSpec>> {
        self.kernels
            .feature_maps
            .iter()
            .enumerate()
            .map(|(i, f)| f.to_spec().map_err(|e| field(&format!("kernels.feature_maps[{i}]"), e)))
            .collect()
    }

    pub fn wants(&self, kind: KernelKind) -> bool {
        self.kernels.kinds.contains(&kind)
    }

    /// Checks every field; errors name the offending field path.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(field(
                "version",
                format!("unsupported version {} (expected {CONFIG_VERSION})", self.version),
            ));
        }
        if self.dataset.name.is_empty()
            || !self
                .dataset
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(field("dataset.name", "must be nonempty [A-Za-z0-9_-]"));
        }
        self.dataset
            .schema
            .resolve()
            .map_err(|e| field("dataset.schema", e))?;
        let path = self.dataset_path();
        if !path.is_file() {
            return Err(QmklError::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
            ));
        }
        let check_dims = |name: &str, dims: &[usize]| -> Result<()> {
            if dims.is_empty() {
                return Err(field(name, "must not be empty"));
            }
            if let Some(d) = dims.iter().find(|&&d| d == 0 || d > MAX_QUBITS) {
                return Err(field(name, format!("dimension {d} outside 1..={MAX_QUBITS}")));
            }
            Ok(())
        };
        check_dims("preprocessing.dims", &self.preprocessing.dims)?;
        self.feature_map_specs()?;
        self.kernels
            .baseline
            .to_spec()
            .map_err(|e| field("kernels.baseline", e))?;
        if self.kernels.kinds.is_empty() {
            return Err(field("kernels.kinds", "must not be empty"));
        }
        if self.kernels.kinds.contains(&KernelKind::Combined) {
            return Err(field("kernels.kinds", "\"combined\" is not a base kernel kind"));
        }
        let positive = |name: &str, v: &[f64]| -> Result<()> {
            if let Some(g) = v.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
                return Err(field(name, format!("value {g} must be positive")));
            }
            Ok(())
        };
        positive("kernels.rbf_gammas", &self.kernels.rbf_gammas)?;
        positive("kernels.pq_gammas", &self.kernels.pq_gammas)?;
        if self.wants(KernelKind::Rbf) && self.kernels.rbf_gammas.is_empty() {
            return Err(field("kernels.rbf_gammas", "must not be empty when rbf kernels are used"));
        }
        if self.wants(KernelKind::Projected) && self.kernels.pq_gammas.is_empty() {
            return Err(field("kernels.pq_gammas", "must not be empty when projected kernels are used"));
        }
        if (self.wants(KernelKind::Fidelity) || self.wants(KernelKind::Projected))
            && self.kernels.feature_maps.is_empty()
        {
            return Err(field("kernels.feature_maps", "must not be empty"));
        }
        if self.mkl.strategies.is_empty() {
            return Err(field("mkl.strategies", "must not be empty"));
        }
        if !(self.mkl.tol > 0.0) || self.mkl.max_iter == 0 {
            return Err(field("mkl", "tol and max_iter must be positive"));
        }
        if !(self.mkl.proj_threshold_frac >= 0.0) {
            return Err(field("mkl.proj_threshold_frac", "must be ≥ 0"));
        }
        if self.svm.c_grid.is_empty() {
            return Err(field("svm.c_grid", "must not be empty"));
        }
        positive("svm.c_grid", &self.svm.c_grid)?;
        if !(self.svm.tol > 0.0) || self.svm.max_iter == 0 {
            return Err(field("svm", "tol and max_iter must be positive"));
        }
        let e = &self.evaluation;
        if e.n_samples == 0 {
            return Err(field("evaluation.n_samples", "must be ≥ 1"));
        }
        if e.folds < 2 {
            return Err(field("evaluation.folds", "must be ≥ 2"));
        }
        if !(e.test_frac > 0.0 && e.test_frac < 1.0) {
            return Err(field("evaluation.test_frac", "must lie in (0, 1)"));
        }
        let n_test = (e.test_frac * e.n_points as f64).floor() as usize;
        if e.n_points < 4 || e.n_points - n_test < 2 * e.folds {
            return Err(field("evaluation.n_points", "too few points for the split"));
        }
        let d = &self.diagnostics;
        check_dims("diagnostics.dims", &d.dims)?;
        if !d.shot_dims.is_empty() {
            check_dims("diagnostics.shot_dims", &d.shot_dims)?;
        }
        if d.feature_maps.is_empty() {
            return Err(field("diagnostics.feature_maps", "must not be empty"));
        }
        for (i, f) in d.feature_maps.iter().enumerate() {
            f.to_spec()
                .map_err(|err| field(&format!("diagnostics.feature_maps[{i}]"), err))?;
        }
        if d.kinds.is_empty()
            || d
                .kinds
                .iter()
                .any(|k| !matches!(k, KernelKind::Fidelity | KernelKind::Projected))
        {
            return Err(field("diagnostics.kinds", "must list fidelity and/or projected"));
        }
        if d.n_points < 2 {
            return Err(field("diagnostics.n_points", "must be ≥ 2"));
        }
        if !(d.pq_gamma > 0.0) {
            return Err(field("diagnostics.pq_gamma", "must be positive"));
        }
        if d.shots.contains(&0) {
            return Err(field("diagnostics.shots", "shot counts must be positive"));
        }
        if !d.shots.is_empty() && d.seeds.is_empty() {
            return Err(field("diagnostics.seeds", "must not be empty"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
