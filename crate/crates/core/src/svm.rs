//! Soft-margin SVM on precomputed kernels and ROC-AUC scoring.
//!
//! The dual `max Σα − ½ΣΣ α_iα_j y_iy_j K_ij`, `0 ≤ α ≤ C`, `Σα_iy_i = 0` is
//! solved by SMO with the maximal-violating-pair working set.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{QmklError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    #[serde(skip)]
    pub record_objective: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            tol: 1e-6,
            max_iter: 100_000,
            record_objective: false,
        }
    }
}

impl SvmParams {
    pub fn with_c(c: f64) -> Self {
        SvmParams {
            c,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// `α_i y_i` for every training point (zero off the support).
    pub dual_coefficients: Vec<f64>,
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub support_indices: Vec<usize>,
    pub c: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl SvmModel {
    pub fn n_train(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_support(&self) -> usize {
        self.support_indices.len()
    }
}

pub(crate) fn check_labels(labels: &[f64]) -> Result<()> {
    if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(QmklError::usage(format!("labels must be ±1, found {bad}")));
    }
    let pos = labels.iter().filter(|&&y| y > 0.0).count();
    if pos == 0 || pos == labels.len() {
        return Err(QmklError::usage("both classes must be present"));
    }
    Ok(())
}

fn dual_objective(alpha: &[f64], grad: &[f64]) -> f64 {
    // With G = Qα − 1: Σα − ½αᵀQα = ½(Σα − αᵀG).
    0.5 * alpha
        .iter()
        .zip(grad)
        .map(|(a, g)| a - a * g)
        .sum::<f64>()
}

/// Trains on a square kernel with ±1 labels.
pub fn train(k: ArrayView2<f64>, labels: &[f64], params: &SvmParams) -> Result<SvmModel> {
    let m = labels.len();
    if k.dim() != (m, m) {
        return Err(QmklError::usage(format!(
            "kernel shape {:?} does not match {m} labels",
            k.dim()
        )));
    }
    check_labels(labels)?;
    if !(params.c > 0.0) {
        return Err(QmklError::usage(format!("C must be positive, got {}", params.c)));
    }
    let c = params.c;
    let y = labels;
    let q = |i: usize, j: usize| y[i] * y[j] * k[[i, j]];
    let mut alpha = vec![0.0; m];
    let mut grad = vec![-1.0; m];
    let mut trace = Vec::new();
    if params.record_objective {
        trace.push(0.0);
    }

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt < 0.0 && a < c) || (yt > 0.0 && a > 0.0);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        let mut i = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut g_min = f64::INFINITY;
        for t in 0..m {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > g_max {
                g_max = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < g_min {
                g_min = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < params.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if y[i] != y[j] {
            let quad = (q(i, i) + q(j, j) + 2.0 * qij).max(1e-12);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * qij).max(1e-12);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..m {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
        if params.record_objective {
            trace.push(dual_objective(&alpha, &grad));
        }
    }
    if !converged {
        return Err(QmklError::Solver {
            message: format!("SMO did not converge in {} pair updates", params.max_iter),
            best: alpha,
        });
    }

    // b = −ρ, with ρ averaged over free vectors or the KKT interval midpoint.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut n_free) = (0.0, 0usize);
    for t in 0..m {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            free_sum += yg;
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    let dual_coefficients: Vec<f64> = alpha.iter().zip(y).map(|(a, yt)| a * yt).collect();
    let support_indices = (0..m).filter(|&t| alpha[t] > 0.0).collect();
    Ok(SvmModel {
        dual_coefficients,
        alpha,
        bias: -rho,
        support_indices,
        c,
        iterations,
        objective_trace: trace,
    })
}

/// `f(x) = Σ α_i y_i K(x, x_i) + b` for each row of `k_cross` (columns are
/// training points).
pub fn decision_values(model: &SvmModel, k_cross: ArrayView2<f64>) -> Result<Vec<f64>> {
    if k_cross.ncols() != model.n_train() {
        return Err(QmklError::usage(format!(
            "cross kernel has {} columns, model was trained on {} points",
            k_cross.ncols(),
            model.n_train()
        )));
    }
    let coef = Array1::from(model.dual_coefficients.clone());
    Ok(k_cross.dot(&coef).iter().map(|v| v + model.bias).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
}

/// Mann–Whitney AUC with average ranks for ties, plus the ROC curve.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(QmklError::usage(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(QmklError::usage("scores contain NaN"));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let n_pos = labels.iter().filter(|&&y| y > 0.0).count() as f64;
    let n_neg = n as f64 - n_pos;
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based start+1..=end) share their mean.
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            if labels[idx] > 0.0 {
                rank_sum_pos += avg_rank;
            }
        }
        start = end;
    }
    let auc = (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut end = n;
    while end > 0 {
        let mut begin = end - 1;
        while begin > 0 && scores[order[begin - 1]] == scores[order[end - 1]] {
            begin -= 1;
        }
        for &idx in &order[begin..end] {
            if labels[idx] > 0.0 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        points.push((fp / n_neg, tp / n_pos));
        end = begin;
    }
    Ok(RocResult {
        auc: auc.clamp(0.0, 1.0),
        points,
    })
}
