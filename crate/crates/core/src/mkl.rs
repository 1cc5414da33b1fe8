//! Kernel-target alignment and multiple kernel learning.
//!
//! Four weighting strategies are provided: uniform averaging (AVE), the
//! alignment QCQP (SDP), centered alignment (CENT), and greedy projection
//! (PROJ). Each returns nonnegative weights normalized to sum to one; the
//! optimizer's own scaling is kept in [`WeightVector::raw`].

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QmklError, Result};
use crate::kernels::{KernelKind, KernelMatrix, KernelMeta};
use crate::linalg::{cholesky_solve, frobenius_inner, frobenius_norm, symmetric_eigen};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Strategy {
    Ave,
    Sdp,
    Cent,
    Proj,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Ave, Strategy::Sdp, Strategy::Cent, Strategy::Proj];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Ave => "AVE",
            Strategy::Sdp => "SDP",
            Strategy::Cent => "CENT",
            Strategy::Proj => "PROJ",
        })
    }
}

impl FromStr for Strategy {
    type Err = QmklError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AVE" => Ok(Strategy::Ave),
            "SDP" => Ok(Strategy::Sdp),
            "CENT" => Ok(Strategy::Cent),
            "PROJ" => Ok(Strategy::Proj),
            _ => Err(QmklError::Parse(format!("unknown MKL strategy {s:?}"))),
        }
    }
}

/// Learned kernel weights. `weights` sum to one; `raw` holds the optimizer's
/// native scaling (unit `wᵀSw` for SDP, unit 2-norm for CENT, projection
/// coefficients for PROJ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub strategy: Strategy,
    pub weights: Vec<f64>,
    pub raw: Vec<f64>,
    pub selected: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MklOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub proj_normalize_distance: bool,
    /// Absolute residual threshold for PROJ; `None` means `0.05·‖K_y‖_F`.
    pub proj_threshold: Option<f64>,
}

impl Default for MklOptions {
    fn default() -> Self {
        MklOptions {
            tol: 1e-9,
            max_iter: 100_000,
            proj_normalize_distance: true,
            proj_threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetKernel {
    pub values: Array2<f64>,
    pub labels: Vec<f64>,
}

/// `(K_y)_ij = 1` when `y_i = y_j`, else 0.
pub fn target_kernel(labels: &[f64]) -> Result<TargetKernel> {
    if labels.is_empty() {
        return Err(QmklError::usage("target kernel needs at least one label"));
    }
    let m = labels.len();
    let values = Array2::from_shape_fn((m, m), |(i, j)| f64::from(u8::from(labels[i] == labels[j])));
    Ok(TargetKernel {
        values,
        labels: labels.to_vec(),
    })
}

fn check_same_square(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() || a.nrows() != a.ncols() {
        return Err(QmklError::usage(format!(
            "expected equal square matrices, got {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Frobenius cosine `⟨K1, K2⟩ / (‖K1‖‖K2‖)`.
pub fn alignment(k1: ArrayView2<f64>, k2: ArrayView2<f64>) -> Result<f64> {
    check_same_square(k1, k2)?;
    let (n1, n2) = (frobenius_norm(k1), frobenius_norm(k2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(QmklError::degenerate("alignment with a zero-norm matrix"));
    }
    Ok(frobenius_inner(k1, k2) / (n1 * n2))
}

/// `(I − 11ᵀ/m) K (I − 11ᵀ/m)`.
pub fn center_kernel(k: ArrayView2<f64>) -> Result<Array2<f64>> {
    if k.nrows() != k.ncols() {
        return Err(QmklError::usage(format!("centering needs a square matrix, got {:?}", k.dim())));
    }
    let row_means = k.mean_axis(Axis(1)).unwrap_or_else(|| Array1::zeros(0));
    let col_means = k.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(0));
    let total = row_means.mean().unwrap_or(0.0);
    Ok(Array2::from_shape_fn(k.dim(), |(i, j)| {
        k[[i, j]] - row_means[i] - col_means[j] + total
    }))
}

pub fn centered_alignment(k1: ArrayView2<f64>, k2: ArrayView2<f64>) -> Result<f64> {
    check_same_square(k1, k2)?;
    alignment(center_kernel(k1)?.view(), center_kernel(k2)?.view())
}

/// `Σ w_i K_i`.
pub fn combine_views(kernels: &[ArrayView2<f64>], weights: &[f64]) -> Result<Array2<f64>> {
    let first = kernels
        .first()
        .ok_or_else(|| QmklError::usage("combine needs at least one kernel"))?;
    if kernels.len() != weights.len() {
        return Err(QmklError::usage(format!(
            "{} kernels but {} weights",
            kernels.len(),
            weights.len()
        )));
    }
    let mut out = Array2::<f64>::zeros(first.dim());
    for (k, &w) in kernels.iter().zip(weights) {
        if k.dim() != first.dim() {
            return Err(QmklError::usage(format!(
                "kernel shape {:?} differs from {:?}",
                k.dim(),
                first.dim()
            )));
        }
        if w != 0.0 {
            out.scaled_add(w, k);
        }
    }
    Ok(out)
}

pub fn combine(kernels: &[KernelMatrix], w: &WeightVector) -> Result<KernelMatrix> {
    let views: Vec<_> = kernels.iter().map(|k| k.view()).collect();
    let values = combine_views(&views, &w.weights)?;
    let shots = kernels.iter().map(|k| k.meta.shots).max().unwrap_or(0);
    let mut out = KernelMatrix::new(
        values,
        KernelKind::Combined,
        KernelMeta {
            n_qubits: kernels[0].meta.n_qubits,
            shots,
            ..KernelMeta::default()
        },
    );
    out.row_ids = kernels[0].row_ids.clone();
    out.col_ids = kernels[0].col_ids.clone();
    Ok(out)
}

pub fn weights_average(n_kernels: usize) -> Result<WeightVector> {
    if n_kernels == 0 {
        return Err(QmklError::usage("averaging needs at least one kernel"));
    }
    let w = vec![1.0 / n_kernels as f64; n_kernels];
    Ok(WeightVector {
        strategy: Strategy::Ave,
        weights: w.clone(),
        raw: w,
        selected: (0..n_kernels).collect(),
        objective: f64::NAN,
        iterations: 0,
        objective_trace: Vec::new(),
    })
}

/// Gram matrix of Frobenius products between kernels, computed in parallel.
pub fn frobenius_gram(kernels: &[ArrayView2<f64>]) -> Array2<f64> {
    let n = kernels.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| frobenius_inner(kernels[i], kernels[j]))
        .collect();
    let mut s = Array2::zeros((n, n));
    for (&(i, j), v) in pairs.iter().zip(vals) {
        s[[i, j]] = v;
        s[[j, i]] = v;
    }
    s
}

fn frobenius_vector(kernels: &[ArrayView2<f64>], target: ArrayView2<f64>) -> Array1<f64> {
    Array1::from(
        kernels
            .par_iter()
            .map(|k| frobenius_inner(*k, target))
            .collect::<Vec<_>>(),
    )
}

fn check_kernel_set(kernels: &[ArrayView2<f64>], target: ArrayView2<f64>) -> Result<()> {
    if kernels.is_empty() {
        return Err(QmklError::usage("at least one kernel is required"));
    }
    for k in kernels {
        check_same_square(*k, target)?;
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum NnqpMethod {
    ProjectedGradient,
    CoordinateDescent,
}

struct NnqpSolution {
    v: Array1<f64>,
    iterations: usize,
    /// `qᵀv / √(vᵀSv)` after every iteration.
    trace: Vec<f64>,
}

fn quad(s: &Array2<f64>, v: &Array1<f64>) -> f64 {
    v.dot(&s.dot(v))
}

fn ray_value(s: &Array2<f64>, q: &Array1<f64>, v: &Array1<f64>) -> f64 {
    let vsv = quad(s, v);
    if vsv > 0.0 {
        q.dot(v) / vsv.sqrt()
    } else {
        0.0
    }
}

fn kkt_residual(s: &Array2<f64>, q: &Array1<f64>, v: &Array1<f64>) -> f64 {
    let g = s.dot(v) - q;
    v.iter()
        .zip(g.iter())
        .map(|(&vi, &gi)| (vi - (vi - gi).max(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Solves the face problem `S_PP z = q_P` on the support of `v` and moves
/// toward `z` as far as nonnegativity and descent allow.
fn polish(s: &Array2<f64>, q: &Array1<f64>, v: &mut Array1<f64>) {
    let support: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
    if support.is_empty() {
        return;
    }
    let sub = Array2::from_shape_fn((support.len(), support.len()), |(a, b)| {
        s[[support[a], support[b]]]
    });
    let rhs = Array1::from_iter(support.iter().map(|&i| q[i]));
    let Some(z_sub) = cholesky_solve(sub.view(), rhs.view()) else {
        return;
    };
    let mut d = Array1::<f64>::zeros(v.len());
    for (a, &i) in support.iter().enumerate() {
        d[i] = z_sub[a] - v[i];
    }
    let dsd = quad(s, &d);
    if !(dsd > 0.0) {
        return;
    }
    let g = s.dot(&*v) - q;
    let mut tau = (-g.dot(&d) / dsd).min(1.0);
    for i in 0..v.len() {
        if d[i] < 0.0 {
            tau = tau.min(-v[i] / d[i]);
        }
    }
    if tau > 0.0 {
        v.scaled_add(tau, &d);
        v.mapv_inplace(|x| x.max(0.0));
    }
}

/// Primal active-set finish in the style of Lawson and Hanson: solve on the
/// free set, step back to feasibility when a free variable turns
/// nonpositive, free the bound variable with the most negative gradient.
fn active_set(s: &Array2<f64>, q: &Array1<f64>, start: Array1<f64>, tol: f64) -> Option<Array1<f64>> {
    let n = q.len();
    let mut v = start;
    let mut free: Vec<bool> = v.iter().map(|&x| x > 0.0).collect();
    let mut blocked = vec![false; n];
    let mut entered: Option<usize> = None;
    for _ in 0..10 * n + 10 {
        // Optimize on the current face.
        for _ in 0..=n {
            let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
            if idx.is_empty() {
                break;
            }
            let sub = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| s[[idx[a], idx[b]]]);
            let rhs = Array1::from_iter(idx.iter().map(|&i| q[i]));
            let z = cholesky_solve(sub.view(), rhs.view())?;
            if z.iter().all(|&x| x > 0.0) {
                for (a, &i) in idx.iter().enumerate() {
                    v[i] = z[a];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (a, &i) in idx.iter().enumerate() {
                if z[a] <= 0.0 {
                    alpha = alpha.min(v[i] / (v[i] - z[a]));
                }
            }
            for (a, &i) in idx.iter().enumerate() {
                v[i] += alpha * (z[a] - v[i]);
                if v[i] <= 1e-300 || (z[a] <= 0.0 && v[i] <= f64::EPSILON * z[a].abs()) {
                    v[i] = 0.0;
                    free[i] = false;
                }
            }
        }
        // A variable that leaves again at once cannot make progress.
        if let Some(j) = entered.take() {
            blocked[j] = !free[j];
        }
        let g = s.dot(&v) - q;
        let enter = (0..n)
            .filter(|&i| !free[i] && !blocked[i])
            .min_by(|&a, &b| g[a].total_cmp(&g[b]));
        match enter {
            Some(j) if g[j] < -tol => {
                free[j] = true;
                entered = Some(j);
            }
            _ => return Some(v),
        }
    }
    None
}

/// `min ½vᵀSv − qᵀv` subject to `v ≥ 0`.
fn solve_nnqp(
    s: &Array2<f64>,
    q: &Array1<f64>,
    start: Array1<f64>,
    method: NnqpMethod,
    tol: f64,
    max_iter: usize,
) -> Result<NnqpSolution> {
    let n = q.len();
    let lipschitz = symmetric_eigen(s.view())?.max_value();
    let mut v = start;
    let mut trace = vec![ray_value(s, q, &v)];
    let objective = |v: &Array1<f64>| 0.5 * quad(s, v) - q.dot(v);
    let mut stalled = 0;
    for it in 0..max_iter {
        if kkt_residual(s, q, &v) < tol {
            return Ok(NnqpSolution {
                v,
                iterations: it,
                trace,
            });
        }
        let before = objective(&v);
        let mut next = v.clone();
        match method {
            NnqpMethod::ProjectedGradient => {
                let g = s.dot(&next) - q;
                next.scaled_add(-1.0 / lipschitz, &g);
                next.mapv_inplace(|x| x.max(0.0));
                let (qv, vsv) = (q.dot(&next), quad(s, &next));
                if qv > 0.0 && vsv > 0.0 {
                    next *= qv / vsv;
                }
            }
            NnqpMethod::CoordinateDescent => {
                for i in 0..n {
                    if s[[i, i]] <= 0.0 {
                        next[i] = 0.0;
                        continue;
                    }
                    let grad_i = s.row(i).dot(&next) - q[i];
                    next[i] = (next[i] - grad_i / s[[i, i]]).max(0.0);
                }
            }
        }
        polish(s, q, &mut next);
        if objective(&next) < before {
            v = next;
            stalled = 0;
        } else {
            stalled += 1;
        }
        trace.push(ray_value(s, q, &v));
        if stalled >= 3 {
            break;
        }
    }
    let mut res = kkt_residual(s, q, &v);
    if res >= tol {
        for from in [v.clone(), Array1::zeros(n)] {
            if let Some(w) = active_set(s, q, from, tol) {
                let r = kkt_residual(s, q, &w);
                if r < res && objective(&w) <= objective(&v) + tol {
                    v = w;
                    res = r;
                    trace.push(ray_value(s, q, &v));
                }
            }
            if res < tol {
                break;
            }
        }
    }
    if res < tol {
        let iterations = trace.len() - 1;
        return Ok(NnqpSolution {
            v,
            iterations,
            trace,
        });
    }
    let total: f64 = v.sum();
    Err(QmklError::Solver {
        message: format!("nonnegative QP stopped with KKT residual {res:.3e}"),
        best: if total > 0.0 {
            (v / total).to_vec()
        } else {
            v.to_vec()
        },
    })
}

fn scale_problem(s: &Array2<f64>, q: &Array1<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let ds = s.diag().iter().fold(0.0f64, |m, &d| m.max(d));
    let dq = q.iter().fold(0.0f64, |m, &d| m.max(d.abs()));
    if ds <= 0.0 || dq <= 0.0 {
        return Err(QmklError::degenerate("all kernels or the target have zero norm"));
    }
    Ok((s / ds, q / dq))
}

fn normalized(v: &Array1<f64>) -> Vec<f64> {
    let total = v.sum();
    v.iter().map(|x| x / total).collect()
}

/// Alignment QCQP: `max wᵀq` s.t. `wᵀSw ≤ 1`, `w ≥ 0`, with
/// `q_i = ⟨K_i, K_y⟩` and `S_ij = ⟨K_i, K_j⟩`.
///
/// Solved through the equivalent `min_{v≥0} ½vᵀSv − qᵀv`, whose minimizer lies
/// on the same ray as the QCQP optimum. Iterates are rescaled along their
/// ray each step, so the QCQP objective `qᵀv/√(vᵀSv)` never decreases.
pub fn weights_qcqp(
    kernels: &[ArrayView2<f64>],
    target: ArrayView2<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<WeightVector> {
    check_kernel_set(kernels, target)?;
    let s_full = frobenius_gram(kernels);
    let q_full = frobenius_vector(kernels, target);
    let (s, q) = scale_problem(&s_full, &q_full)?;

    let best = (0..q.len())
        .filter(|&i| s[[i, i]] > 0.0 && q[i] > 0.0)
        .max_by(|&a, &b| (q[a] / s[[a, a]].sqrt()).total_cmp(&(q[b] / s[[b, b]].sqrt())))
        .ok_or_else(|| QmklError::degenerate("no kernel has positive alignment with the target"))?;
    let mut start = Array1::zeros(q.len());
    start[best] = q[best] / s[[best, best]];

    let sol = solve_nnqp(&s, &q, start, NnqpMethod::ProjectedGradient, tol, max_iter)?;
    let vsv = quad(&s_full, &sol.v);
    let raw: Vec<f64> = sol.v.iter().map(|x| x / vsv.sqrt()).collect();
    let selected = (0..raw.len()).filter(|&i| raw[i] > 0.0).collect();
    Ok(WeightVector {
        strategy: Strategy::Sdp,
        weights: normalized(&sol.v),
        objective: ray_value(&s_full, &q_full, &sol.v),
        raw,
        selected,
        iterations: sol.iterations,
        objective_trace: sol.trace,
    })
}

/// Centered alignment: `min_{v≥0} vᵀMv − 2aᵀv` with `a_i = ⟨K_i^c, K_y^c⟩`
/// and `M_ij = ⟨K_i^c, K_j^c⟩`, by cyclic coordinate descent.
pub fn weights_centered(
    kernels: &[ArrayView2<f64>],
    target: ArrayView2<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<WeightVector> {
    check_kernel_set(kernels, target)?;
    let target_c = center_kernel(target)?;
    let target_norm = frobenius_norm(target_c.view());
    if target_norm == 0.0 {
        return Err(QmklError::degenerate(
            "centered target kernel is zero (single-class labels)",
        ));
    }
    let centered: Vec<Array2<f64>> = kernels
        .par_iter()
        .map(|k| center_kernel(*k))
        .collect::<Result<_>>()?;
    let views: Vec<_> = centered.iter().map(|k| k.view()).collect();
    let m_full = frobenius_gram(&views);
    let a_full = frobenius_vector(&views, target_c.view());
    let (m, a) = scale_problem(&m_full, &a_full)?;

    let sol = solve_nnqp(
        &m,
        &a,
        Array1::zeros(a.len()),
        NnqpMethod::CoordinateDescent,
        tol,
        max_iter,
    )?;
    let norm = sol.v.dot(&sol.v).sqrt();
    if norm == 0.0 {
        return Err(QmklError::degenerate(
            "no kernel has positive centered alignment with the target",
        ));
    }
    let raw: Vec<f64> = sol.v.iter().map(|x| x / norm).collect();
    let selected = (0..raw.len()).filter(|&i| raw[i] > 0.0).collect();
    let trace = sol.trace.iter().map(|t| t / target_norm).collect();
    Ok(WeightVector {
        strategy: Strategy::Cent,
        weights: normalized(&sol.v),
        objective: ray_value(&m_full, &a_full, &sol.v) / target_norm,
        raw,
        selected,
        iterations: sol.iterations,
        objective_trace: trace,
    })
}

/// Greedy projection alignment. Repeatedly picks the unused kernel closest to
/// the current residual target, subtracts its Frobenius projection, and stops
/// when the residual stops shrinking, falls below `threshold`, or no kernels
/// remain. `raw[i]` is the clamped coefficient of the original `K_i` in the
/// approximation of `K_y`.
pub fn weights_projection(
    kernels: &[ArrayView2<f64>],
    target: ArrayView2<f64>,
    threshold: f64,
    normalize_distance: bool,
) -> Result<WeightVector> {
    check_kernel_set(kernels, target)?;
    if threshold.is_nan() || threshold < 0.0 {
        return Err(QmklError::usage(format!("norm threshold must be ≥ 0, got {threshold}")));
    }
    let norms: Vec<f64> = kernels.iter().map(|k| frobenius_norm(*k)).collect();
    let mut residual = target.to_owned();
    let mut residual_norm = frobenius_norm(residual.view());
    let mut used = vec![false; kernels.len()];
    let mut raw = vec![0.0; kernels.len()];
    let mut selected = Vec::new();
    let mut trace = vec![residual_norm];

    loop {
        let candidates = (0..kernels.len()).filter(|&i| !used[i] && norms[i] > 0.0);
        let distance = |i: usize| {
            let k = kernels[i];
            if normalize_distance {
                let rn = if residual_norm > 0.0 { residual_norm } else { 1.0 };
                let dot = frobenius_inner(k, residual.view()) / (norms[i] * rn);
                (2.0 - 2.0 * dot).max(0.0).sqrt()
            } else {
                let diff = &k - &residual;
                frobenius_norm(diff.view())
            }
        };
        let Some(pick) = candidates
            .map(|i| (i, distance(i)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
        else {
            if selected.is_empty() {
                return Err(QmklError::degenerate("every kernel has zero norm"));
            }
            break;
        };
        used[pick] = true;
        let k_hat = &kernels[pick] / norms[pick];
        let c = frobenius_inner(residual.view(), k_hat.view());
        let next = &residual - &(&k_hat * c);
        let next_norm = frobenius_norm(next.view());
        if next_norm >= residual_norm {
            if selected.is_empty() {
                return Err(QmklError::degenerate(
                    "no kernel reduces the target residual",
                ));
            }
            break;
        }
        raw[pick] = c.max(0.0) / norms[pick];
        selected.push(pick);
        residual = next;
        residual_norm = next_norm;
        trace.push(residual_norm);
        if residual_norm < threshold {
            break;
        }
    }

    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(QmklError::degenerate("all projection coefficients are nonpositive"));
    }
    Ok(WeightVector {
        strategy: Strategy::Proj,
        weights: raw.iter().map(|r| r / total).collect(),
        raw,
        iterations: selected.len(),
        selected,
        objective: residual_norm,
        objective_trace: trace,
    })
}

/// Dispatches to the requested strategy with the given options.
pub fn fit_weights(
    strategy: Strategy,
    kernels: &[ArrayView2<f64>],
    target: ArrayView2<f64>,
    opts: &MklOptions,
) -> Result<WeightVector> {
    match strategy {
        Strategy::Ave => {
            check_kernel_set(kernels, target)?;
            let mut w = weights_average(kernels.len())?;
            let k = combine_views(kernels, &w.weights)?;
            w.objective = alignment(k.view(), target).unwrap_or(f64::NAN);
            Ok(w)
        }
        Strategy::Sdp => weights_qcqp(kernels, target, opts.tol, opts.max_iter),
        Strategy::Cent => weights_centered(kernels, target, opts.tol, opts.max_iter),
        Strategy::Proj => {
            let threshold = opts
                .proj_threshold
                .unwrap_or_else(|| 0.05 * frobenius_norm(target));
            weights_projection(kernels, target, threshold, opts.proj_normalize_distance)
        }
    }
}
