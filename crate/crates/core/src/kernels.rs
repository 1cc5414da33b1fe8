//! Gram matrices for fidelity, projected, and RBF kernels.
//!
//! Fills are parallel over rows. Every stochastic entry draws from its own
//! generator seeded by `derive_seed(seed, [tag, row, col])`, so the result
//! does not depend on the thread count.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QmklError, Result};
use crate::feature_map::FeatureMapSpec;
use crate::linalg::symmetric_eigen;
use crate::rng::derive_seed;
use crate::statevector::{sample_frequency, StateVector};

const TAG_FIDELITY_SAME: u64 = 1;
const TAG_FIDELITY_CROSS: u64 = 2;
const TAG_PROJECTED: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Fidelity,
    Projected,
    Rbf,
    Combined,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Fidelity => "fidelity",
            KernelKind::Projected => "projected",
            KernelKind::Rbf => "rbf",
            KernelKind::Combined => "combined",
        })
    }
}

impl FromStr for KernelKind {
    type Err = QmklError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fidelity" => Ok(KernelKind::Fidelity),
            "projected" => Ok(KernelKind::Projected),
            "rbf" => Ok(KernelKind::Rbf),
            "combined" => Ok(KernelKind::Combined),
            other => Err(QmklError::Parse(format!("unknown kernel kind {other:?}"))),
        }
    }
}

/// Provenance of a kernel matrix. `shots == 0` means exact evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub spec: Option<String>,
    pub n_qubits: usize,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub shots: u64,
    pub seed: u64,
    /// Content hash of the inputs that produced the matrix.
    pub hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub values: Array2<f64>,
    pub row_ids: Vec<usize>,
    pub col_ids: Vec<usize>,
    pub kind: KernelKind,
    pub meta: KernelMeta,
}

impl KernelMatrix {
    pub fn new(values: Array2<f64>, kind: KernelKind, meta: KernelMeta) -> Self {
        let (r, c) = values.dim();
        KernelMatrix {
            values,
            row_ids: (0..r).collect(),
            col_ids: (0..c).collect(),
            kind,
            meta,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn is_square(&self) -> bool {
        self.values.nrows() == self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Writes the matrix as a `# kind=… n=… alpha=… shots=… seed=…` header
    /// line followed by comma-separated rows at 17 significant digits.
    /// Optional `gamma=` and `spec=` tokens follow the required ones.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let alpha = self
            .meta
            .alpha
            .map_or_else(|| "nan".to_string(), |a| format!("{a:?}"));
        out.push_str(&format!(
            "# kind={} n={} alpha={} shots={} seed={}",
            self.kind, self.meta.n_qubits, alpha, self.meta.shots, self.meta.seed
        ));
        if let Some(g) = self.meta.gamma {
            out.push_str(&format!(" gamma={g:?}"));
        }
        if let Some(spec) = &self.meta.spec {
            out.push_str(&format!(" spec={}", spec.replace(' ', "_")));
        }
        if let Some(hash) = &self.meta.hash {
            out.push_str(&format!(" hash={hash}"));
        }
        out.push('\n');
        for row in self.values.rows() {
            let line = row
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&line);
            out.push('\n');
        }
        let tmp = path.with_extension("csv.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| QmklError::io(&tmp, e))?;
        f.write_all(out.as_bytes()).map_err(|e| QmklError::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| QmklError::io(path, e))
    }

    /// Reads only the header line.
    pub fn read_csv_header(path: &Path) -> Result<(KernelKind, KernelMeta)> {
        use std::io::BufRead;
        let f = fs::File::open(path).map_err(|e| QmklError::io(path, e))?;
        let mut line = String::new();
        std::io::BufReader::new(f)
            .read_line(&mut line)
            .map_err(|e| QmklError::io(path, e))?;
        parse_header(path, line.trim_end())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| QmklError::io(path, e))?;
        let mut lines = text.lines();
        let (kind, meta) = parse_header(path, lines.next().unwrap_or(""))?;
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| ingestion(path, i + 2, &e.to_string()))?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(ingestion(path, i + 2, &format!("expected {c} columns")));
                }
                _ => {}
            }
            data.extend(row);
            rows += 1;
        }
        let values = Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)
            .map_err(|e| ingestion(path, 0, &e.to_string()))?;
        Ok(KernelMatrix::new(values, kind, meta))
    }
}

fn parse_header(path: &Path, line: &str) -> Result<(KernelKind, KernelMeta)> {
    let header = line
        .strip_prefix('#')
        .ok_or_else(|| ingestion(path, 1, "missing '#' header line"))?;
    let mut kind = None;
    let mut meta = KernelMeta::default();
    for token in header.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| ingestion(path, 1, &format!("malformed header token {token:?}")))?;
        let bad = |what: &str| ingestion(path, 1, &format!("bad {what} value {value:?}"));
        match key {
            "kind" => kind = Some(value.parse::<KernelKind>()?),
            "n" => meta.n_qubits = value.parse().map_err(|_| bad("n"))?,
            "alpha" => {
                let a: f64 = value.parse().map_err(|_| bad("alpha"))?;
                meta.alpha = (!a.is_nan()).then_some(a);
            }
            "shots" => meta.shots = value.parse().map_err(|_| bad("shots"))?,
            "seed" => meta.seed = value.parse().map_err(|_| bad("seed"))?,
            "gamma" => meta.gamma = Some(value.parse().map_err(|_| bad("gamma"))?),
            "spec" => meta.spec = Some(value.to_string()),
            "hash" => meta.hash = Some(value.to_string()),
            _ => {}
        }
    }
    let kind = kind.ok_or_else(|| ingestion(path, 1, "header lacks kind="))?;
    Ok((kind, meta))
}

fn ingestion(path: &Path, row: usize, message: &str) -> QmklError {
    QmklError::Ingestion {
        path: path.to_path_buf(),
        row,
        message: message.to_string(),
    }
}

fn check_sample(x: ArrayView2<f64>, what: &str) -> Result<()> {
    if x.nrows() == 0 {
        return Err(QmklError::usage(format!("{what} sample is empty")));
    }
    Ok(())
}

/// `|⟨ψ(x)|ψ(x′)⟩|²`.
pub fn fidelity_entry(spec: &FeatureMapSpec, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    if x.len() != x_prime.len() {
        return Err(QmklError::usage(format!(
            "feature lengths differ: {} vs {}",
            x.len(),
            x_prime.len()
        )));
    }
    let a = spec.encode(x)?;
    let b = spec.encode(x_prime)?;
    Ok(a.overlap(&b)?.norm_sqr())
}

/// Upper bound on memory held in encoded states at once.
const STATE_BUDGET_BYTES: usize = 512 << 20;

fn encode_block(
    spec: &FeatureMapSpec,
    x: ArrayView2<f64>,
    range: std::ops::Range<usize>,
) -> Result<Vec<StateVector>> {
    range
        .into_par_iter()
        .map(|i| spec.encode(&x.row(i).to_vec()))
        .collect()
}

/// Fidelity Gram matrix between `rows` and `cols` (or `rows` with itself when
/// `cols` is `None`). With `shots > 0` each entry is an independent
/// `Binomial(shots, K)/shots` draw of the compute-uncompute all-zeros
/// frequency; same-sample matrices are drawn on the upper triangle, mirrored,
/// and keep a unit diagonal.
///
/// States are encoded in blocks so that at most about 512 MiB of amplitudes
/// is alive at once; large registers re-encode column blocks as needed.
pub fn fidelity_matrix(
    spec: &FeatureMapSpec,
    rows: ArrayView2<f64>,
    cols: Option<ArrayView2<f64>>,
    shots: u64,
    seed: u64,
) -> Result<KernelMatrix> {
    check_sample(rows, "row")?;
    if let Some(c) = cols {
        check_sample(c, "column")?;
        if c.ncols() != rows.ncols() {
            return Err(QmklError::usage("row and column samples differ in dimension"));
        }
    }
    let same = cols.is_none();
    let cols = cols.unwrap_or(rows);
    let (m, l) = (rows.nrows(), cols.nrows());
    let n = rows.ncols();
    let state_bytes = 16usize << n.min(crate::statevector::MAX_QUBITS);
    let block = (STATE_BUDGET_BYTES / (2 * state_bytes)).max(1);
    let tag = if same { TAG_FIDELITY_SAME } else { TAG_FIDELITY_CROSS };
    let entry = |i: usize, j: usize, a: &StateVector, b: &StateVector| -> Result<f64> {
        let exact = a.overlap(b)?.norm_sqr();
        if shots == 0 {
            Ok(exact)
        } else {
            sample_frequency(exact, shots, derive_seed(seed, &[tag, i as u64, j as u64]))
        }
    };

    let mut values = Array2::<f64>::zeros((m, l));
    for r0 in (0..m).step_by(block) {
        let r1 = (r0 + block).min(m);
        let row_states = encode_block(spec, rows, r0..r1)?;
        let c_start = if same { r0 } else { 0 };
        for c0 in (c_start..l).step_by(block) {
            let c1 = (c0 + block).min(l);
            let fresh;
            let col_states = if same && c0 == r0 {
                &row_states
            } else {
                fresh = encode_block(spec, cols, c0..c1)?;
                &fresh
            };
            let filled: Vec<Vec<f64>> = (r0..r1)
                .into_par_iter()
                .map(|i| {
                    let lo = if same { c0.max(i + 1) } else { c0 };
                    (lo..c1)
                        .map(|j| entry(i, j, &row_states[i - r0], &col_states[j - c0]))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            for (i, row) in (r0..r1).zip(filled) {
                let lo = if same { c0.max(i + 1) } else { c0 };
                for (j, v) in (lo..c1).zip(row) {
                    values[[i, j]] = v;
                }
            }
        }
    }
    if same {
        for i in 0..m {
            values[[i, i]] = 1.0;
            for j in 0..i {
                values[[i, j]] = values[[j, i]];
            }
        }
    }
    Ok(KernelMatrix::new(
        values,
        KernelKind::Fidelity,
        KernelMeta {
            spec: Some(spec.to_string()),
            n_qubits: n,
            alpha: Some(spec.alpha()),
            gamma: None,
            shots,
            seed,
            hash: None,
        },
    ))
}

/// Per-point, per-qubit Bloch vectors of the one-qubit reduced states.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedFeatures {
    pub bloch: Vec<Vec<[f64; 3]>>,
    pub meta: KernelMeta,
}

impl ProjectedFeatures {
    pub fn n_points(&self) -> usize {
        self.bloch.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.meta.n_qubits
    }
}

/// Bloch vectors for every point. With `shots > 0` each of ⟨X⟩, ⟨Y⟩, ⟨Z⟩ per
/// qubit is estimated from `shots` ±1 outcomes (`3·n·shots` per point).
pub fn projected_features(
    spec: &FeatureMapSpec,
    x: ArrayView2<f64>,
    shots: u64,
    seed: u64,
) -> Result<ProjectedFeatures> {
    check_sample(x, "feature")?;
    let n = x.ncols();
    let bloch = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let state = spec.encode(&x.row(i).to_vec())?;
            (0..n)
                .map(|q| {
                    let exact = state.reduced_density_matrix(q)?.bloch_vector();
                    if shots == 0 {
                        return Ok(exact);
                    }
                    let mut est = [0.0; 3];
                    for (axis, (e, r)) in est.iter_mut().zip(exact).enumerate() {
                        let s = derive_seed(seed, &[TAG_PROJECTED, i as u64, q as u64, axis as u64]);
                        let p_plus = (1.0 + r) / 2.0;
                        *e = (2.0 * sample_frequency(p_plus, shots, s)? - 1.0).clamp(-1.0, 1.0);
                    }
                    Ok(est)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectedFeatures {
        bloch,
        meta: KernelMeta {
            spec: Some(spec.to_string()),
            n_qubits: n,
            alpha: Some(spec.alpha()),
            gamma: None,
            shots,
            seed,
            hash: None,
        },
    })
}

/// `exp(−γ Σ_k ‖ρ_k − ρ′_k‖_F²)` using `‖ρ − ρ′‖_F² = ½|r − r′|²`.
pub fn projected_matrix(
    rows: &ProjectedFeatures,
    cols: &ProjectedFeatures,
    gamma: f64,
) -> Result<KernelMatrix> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(QmklError::usage(format!("gamma must be positive, got {gamma}")));
    }
    if rows.n_qubits() != cols.n_qubits() {
        return Err(QmklError::usage(format!(
            "projected features on {} vs {} qubits",
            rows.n_qubits(),
            cols.n_qubits()
        )));
    }
    let (m, l) = (rows.n_points(), cols.n_points());
    let data: Vec<f64> = (0..m)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = &rows.bloch[i];
            (0..l).map(move |j| {
                let dist: f64 = a
                    .iter()
                    .zip(&cols.bloch[j])
                    .map(|(u, v)| {
                        0.5 * u.iter().zip(v).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
                    })
                    .sum();
                (-gamma * dist).exp()
            })
        })
        .collect();
    let values = Array2::from_shape_vec((m, l), data).expect("shape matches");
    Ok(KernelMatrix::new(
        values,
        KernelKind::Projected,
        KernelMeta {
            gamma: Some(gamma),
            ..rows.meta.clone()
        },
    ))
}

/// `exp(−γ‖x − x′‖²)`.
pub fn rbf_matrix(
    rows: ArrayView2<f64>,
    cols: Option<ArrayView2<f64>>,
    gamma: f64,
) -> Result<KernelMatrix> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(QmklError::usage(format!("gamma must be positive, got {gamma}")));
    }
    check_sample(rows, "row")?;
    let cols = cols.unwrap_or(rows);
    if cols.ncols() != rows.ncols() {
        return Err(QmklError::usage(format!(
            "dimension mismatch: {} vs {}",
            rows.ncols(),
            cols.ncols()
        )));
    }
    let values = Array2::from_shape_fn((rows.nrows(), cols.nrows()), |(i, j)| {
        let d: f64 = rows
            .row(i)
            .iter()
            .zip(cols.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (-gamma * d).exp()
    });
    Ok(KernelMatrix::new(
        values,
        KernelKind::Rbf,
        KernelMeta {
            spec: None,
            n_qubits: rows.ncols(),
            alpha: None,
            gamma: Some(gamma),
            shots: 0,
            seed: 0,
            hash: None,
        },
    ))
}

/// Inverse-variance bandwidth `1 / (d · Var(X))` over all entries of `x`;
/// the usual "scale" default for RBF kernels.
pub fn rbf_default_gamma(x: ArrayView2<f64>) -> f64 {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let d = x.ncols() as f64;
    if var > 0.0 {
        1.0 / (d * var)
    } else {
        1.0
    }
}

/// Eigenvalues below `floor` are raised to `floor`. Exact-mode matrices whose
/// smallest eigenvalue is at least `−1e-8·λ_max` are returned unchanged.
pub fn psd_project(k: &KernelMatrix, floor: f64) -> Result<KernelMatrix> {
    if !k.is_square() {
        return Err(QmklError::usage(format!(
            "PSD projection needs a square matrix, got {:?}",
            k.shape()
        )));
    }
    let eig = symmetric_eigen(k.view())?;
    if k.meta.shots == 0 && eig.min_value() >= -1e-8 * eig.max_value().abs() && floor <= 0.0 {
        return Ok(k.clone());
    }
    let mut out = k.clone();
    out.values = eig.reassemble(|v| v.max(floor));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_map::FeatureMapSpec;
    use ndarray::array;
    use std::f64::consts::PI;

    fn z_map(alpha: f64) -> FeatureMapSpec {
        FeatureMapSpec::simple("Z", alpha).unwrap()
    }

    #[test]
    fn fidelity_entry_examples() {
        let s = FeatureMapSpec::simple("Z-ZZ", 1.2).unwrap();
        let x = [0.3, 1.1, 0.2];
        assert!((fidelity_entry(&s, &x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(fidelity_entry(&z_map(2.0), &[0.0], &[PI / 4.0]).unwrap().abs() < 1e-12);
        assert!((fidelity_entry(&z_map(1.0), &[PI / 3.0], &[0.0]).unwrap() - 0.25).abs() < 1e-12);
        assert!(fidelity_entry(&s, &x, &[0.1]).is_err());
    }

    #[test]
    fn exact_same_sample_matrix_is_symmetric_unit_diagonal() {
        let s = FeatureMapSpec::simple("Y-XZ", 0.8).unwrap();
        let x = array![[0.1, 0.5, 1.9], [1.2, 0.3, 0.7], [2.0, 1.5, 0.0], [0.4, 0.4, 0.4]];
        let k = fidelity_matrix(&s, x.view(), None, 0, 0).unwrap();
        for i in 0..4 {
            assert!((k.values[[i, i]] - 1.0).abs() < 1e-12);
            for j in 0..4 {
                assert!((k.values[[i, j]] - k.values[[j, i]]).abs() < 1e-12);
                assert!(k.values[[i, j]] >= 0.0 && k.values[[i, j]] <= 1.0 + 1e-9);
            }
        }
        assert!(fidelity_matrix(&s, x.slice(ndarray::s![0..0, ..]), None, 0, 0).is_err());
    }

    #[test]
    fn sampled_matrix_is_reproducible_and_near_exact() {
        let s = FeatureMapSpec::simple("Z-ZZ", 1.0).unwrap();
        let x = array![[0.1, 0.5], [1.2, 0.3], [2.0, 1.5]];
        let exact = fidelity_matrix(&s, x.view(), None, 0, 0).unwrap();
        let a = fidelity_matrix(&s, x.view(), None, 10_000_000, 5).unwrap();
        let b = fidelity_matrix(&s, x.view(), None, 10_000_000, 5).unwrap();
        assert_eq!(a.values, b.values);
        for (p, q) in a.values.iter().zip(exact.values.iter()) {
            assert!((p - q).abs() < 1e-3);
        }
        assert_eq!(a.values[[1, 1]], 1.0);
    }

    #[test]
    fn projected_feature_examples() {
        let x = array![[0.0]];
        // α·t = 0 leaves H|0⟩, whose Bloch vector is +x.
        let f = projected_features(&z_map(1.0), x.view(), 0, 0).unwrap();
        let r = f.bloch[0][0];
        assert!((r[0] - 1.0).abs() < 1e-15 && r[1].abs() < 1e-15 && r[2].abs() < 1e-15);

        let (alpha, t) = (0.7, 0.9);
        let f = projected_features(&z_map(alpha), array![[t]].view(), 0, 0).unwrap();
        let r = f.bloch[0][0];
        assert!((r[0] - (2.0 * alpha * t).cos()).abs() < 1e-14);
        assert!((r[1] + (2.0 * alpha * t).sin()).abs() < 1e-14);
        assert!(r[2].abs() < 1e-14);

        let s = FeatureMapSpec::simple("Y-XZ", 0.8).unwrap();
        let x = array![[0.1, 0.5, 1.9], [1.2, 0.3, 0.7]];
        let exact = projected_features(&s, x.view(), 0, 0).unwrap();
        let sampled = projected_features(&s, x.view(), 1_000_000, 11).unwrap();
        for (a, b) in exact.bloch.iter().flatten().zip(sampled.bloch.iter().flatten()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 0.01);
            }
        }
    }

    #[test]
    fn projected_matrix_examples() {
        let f = |r: [f64; 3]| ProjectedFeatures {
            bloch: vec![vec![r]],
            meta: KernelMeta {
                n_qubits: 1,
                ..Default::default()
            },
        };
        let k = projected_matrix(&f([0.0, 0.0, 1.0]), &f([0.0, 0.0, -1.0]), 1.0).unwrap();
        assert!((k.values[[0, 0]] - (-2.0f64).exp()).abs() < 1e-15);
        let k = projected_matrix(&f([0.3, 0.1, 0.2]), &f([0.3, 0.1, 0.2]), 1.0).unwrap();
        assert_eq!(k.values[[0, 0]], 1.0);
        assert!(projected_matrix(&f([0.0; 3]), &f([0.0; 3]), 0.0).is_err());

        let feats = projected_features(&z_map(1.0), array![[PI / 2.0], [0.0]].view(), 0, 0).unwrap();
        let k = projected_matrix(&feats, &feats, 1.0).unwrap();
        assert!((k.values[[0, 1]] - 0.1353352832366127).abs() < 1e-12);
    }

    #[test]
    fn frobenius_identity_matches_direct_matrices() {
        let s = FeatureMapSpec::simple("Y-XZ", 0.8).unwrap();
        let a = s.encode(&[0.2, 1.7]).unwrap();
        let b = s.encode(&[1.3, 0.4]).unwrap();
        for q in 0..2 {
            let ra = a.reduced_density_matrix(q).unwrap();
            let rb = b.reduced_density_matrix(q).unwrap();
            let direct: f64 = (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| (ra.0[i][j] - rb.0[i][j]).norm_sqr())
                .sum();
            let (va, vb) = (ra.bloch_vector(), rb.bloch_vector());
            let via_bloch: f64 = 0.5 * (0..3).map(|k| (va[k] - vb[k]).powi(2)).sum::<f64>();
            assert!((direct - via_bloch).abs() < 1e-14);
        }
    }

    #[test]
    fn rbf_examples() {
        let x = array![[0.0, 0.0], [1.0, 0.0]];
        let k = rbf_matrix(x.view(), None, 1.0).unwrap();
        assert_eq!(k.values[[0, 0]], 1.0);
        assert!((k.values[[0, 1]] - (-1.0f64).exp()).abs() < 1e-15);
        let k = rbf_matrix(x.view(), None, 1e-12).unwrap();
        assert!(k.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(rbf_matrix(x.view(), Some(array![[1.0]].view()), 1.0).is_err());
    }

    #[test]
    fn psd_projection_examples() {
        let k = KernelMatrix::new(array![[1.0, 1.2], [1.2, 1.0]], KernelKind::Combined, KernelMeta::default());
        let p = psd_project(&k, 0.0).unwrap();
        let e = symmetric_eigen(p.view()).unwrap();
        assert!((e.values[0] - 2.2).abs() < 1e-12 && e.values[1].abs() < 1e-12);
        assert!((p.values[[0, 0]] - 1.1).abs() < 1e-12);

        let eye = KernelMatrix::new(Array2::eye(3), KernelKind::Rbf, KernelMeta::default());
        assert_eq!(psd_project(&eye, 0.0).unwrap().values, eye.values);

        let psd = KernelMatrix::new(
            array![[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]],
            KernelKind::Rbf,
            KernelMeta { shots: 100, ..Default::default() },
        );
        let p = psd_project(&psd, 0.0).unwrap();
        for (a, b) in p.values.iter().zip(psd.values.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let rect = KernelMatrix::new(Array2::zeros((2, 3)), KernelKind::Rbf, KernelMeta::default());
        assert!(psd_project(&rect, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let s = FeatureMapSpec::simple("Z-ZZ", 2.0).unwrap();
        let x = array![[0.1, 0.5], [1.2, 0.3], [2.0, 1.5]];
        let k = fidelity_matrix(&s, x.view(), None, 0, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        k.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# kind=fidelity n=2 alpha=2.0 shots=0 seed=9"));
        let back = KernelMatrix::read_csv(&path).unwrap();
        assert_eq!(back.kind, KernelKind::Fidelity);
        assert_eq!(back.meta.n_qubits, 2);
        assert_eq!(back.meta.alpha, Some(2.0));
        for (a, b) in back.values.iter().zip(k.values.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_errors_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "# kind=rbf n=1 alpha=nan shots=0 seed=0\n1,0\n0\n").unwrap();
        match KernelMatrix::read_csv(&path) {
            Err(QmklError::Ingestion { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }
}
