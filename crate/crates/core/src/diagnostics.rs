//! Kernel concentration statistics and exact-vs-sampled regressions.
//!
//! Only strictly upper-triangular entries are used: diagonals are fixed at one
//! and would inflate both moments and r².

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{QmklError, Result};
use crate::feature_map::FeatureMapSpec;
use crate::kernels::{fidelity_matrix, projected_features, projected_matrix, KernelMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationStats {
    pub n_qubits: usize,
    pub offdiag_mean: f64,
    pub offdiag_variance: f64,
    /// Mean `|K − 2⁻ⁿ|`.
    pub fq_distance: f64,
    /// Mean `|K − 1|`.
    pub pq_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn upper_triangle(k: ArrayView2<f64>) -> Vec<f64> {
    let m = k.nrows();
    (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .map(|(i, j)| k[[i, j]])
        .collect()
}

pub fn concentration_stats(k: ArrayView2<f64>, n_qubits: usize) -> Result<ConcentrationStats> {
    if k.nrows() != k.ncols() || k.nrows() < 2 {
        return Err(QmklError::usage(format!(
            "concentration needs a square matrix with m ≥ 2, got {:?}",
            k.dim()
        )));
    }
    let v = upper_triangle(k);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let variance = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let mu = 0.5f64.powi(n_qubits as i32);
    Ok(ConcentrationStats {
        n_qubits,
        offdiag_mean: mean,
        offdiag_variance: variance,
        fq_distance: v.iter().map(|x| (x - mu).abs()).sum::<f64>() / n,
        pq_distance: v.iter().map(|x| (x - 1.0).abs()).sum::<f64>() / n,
    })
}

/// Ordinary least squares of `estimate` (response) on `reference`
/// (explanatory) over upper-triangle entries.
pub fn ols_compare(reference: ArrayView2<f64>, estimate: ArrayView2<f64>) -> Result<RegressionFit> {
    if reference.dim() != estimate.dim() || reference.nrows() != reference.ncols() {
        return Err(QmklError::usage(format!(
            "expected equal square matrices, got {:?} and {:?}",
            reference.dim(),
            estimate.dim()
        )));
    }
    let x = upper_triangle(reference);
    let y = upper_triangle(estimate);
    fit_line(&x, &y)
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(QmklError::usage("regression needs at least two paired points"));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= f64::EPSILON * f64::EPSILON * nf * mx.abs().max(1.0) {
        return Err(QmklError::degenerate("reference values are constant"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(RegressionFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        n_points: n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SweepKernel {
    Fidelity,
    Projected { gamma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotSweepRow {
    pub shots: u64,
    /// Seed-averaged slope, intercept and r².
    pub fit: RegressionFit,
    /// Seed-averaged statistics of the sampled kernel.
    pub stats: ConcentrationStats,
    pub per_seed: Vec<RegressionFit>,
}

fn exact_and_sampled(
    spec: &FeatureMapSpec,
    x: ArrayView2<f64>,
    kind: SweepKernel,
    shots: u64,
    seed: u64,
) -> Result<KernelMatrix> {
    match kind {
        SweepKernel::Fidelity => fidelity_matrix(spec, x, None, shots, seed),
        SweepKernel::Projected { gamma } => {
            let f = projected_features(spec, x, shots, seed)?;
            projected_matrix(&f, &f, gamma)
        }
    }
}

/// For every shot count, regresses the sampled kernel on the exact one for
/// each seed and averages the fits.
pub fn shot_sweep(
    spec: &FeatureMapSpec,
    x: ArrayView2<f64>,
    kind: SweepKernel,
    shots_list: &[u64],
    seeds: &[u64],
) -> Result<Vec<ShotSweepRow>> {
    if shots_list.is_empty() || seeds.is_empty() {
        return Err(QmklError::usage("shot sweep needs shots and seeds"));
    }
    if shots_list.contains(&0) {
        return Err(QmklError::usage("shot counts must be positive"));
    }
    let n_qubits = x.ncols();
    let exact = exact_and_sampled(spec, x, kind, 0, 0)?;
    let mut rows = Vec::with_capacity(shots_list.len());
    for &shots in shots_list {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut stats = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let sampled = exact_and_sampled(spec, x, kind, shots, seed)?;
            per_seed.push(ols_compare(exact.view(), sampled.view())?);
            stats.push(concentration_stats(sampled.view(), n_qubits)?);
        }
        let k = seeds.len() as f64;
        let avg = |f: &dyn Fn(&RegressionFit) -> f64| per_seed.iter().map(f).sum::<f64>() / k;
        let savg = |f: &dyn Fn(&ConcentrationStats) -> f64| stats.iter().map(f).sum::<f64>() / k;
        rows.push(ShotSweepRow {
            shots,
            fit: RegressionFit {
                slope: avg(&|r| r.slope),
                intercept: avg(&|r| r.intercept),
                r_squared: avg(&|r| r.r_squared),
                n_points: per_seed[0].n_points,
            },
            stats: ConcentrationStats {
                n_qubits,
                offdiag_mean: savg(&|s| s.offdiag_mean),
                offdiag_variance: savg(&|s| s.offdiag_variance),
                fq_distance: savg(&|s| s.fq_distance),
                pq_distance: savg(&|s| s.pq_distance),
            },
            per_seed,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::{array, Array2};
    use rand_distr::{Distribution, Normal, Uniform};

    #[test]
    fn stats_examples() {
        let mut k = Array2::from_elem((4, 4), 0.3);
        k.diag_mut().fill(1.0);
        let s = concentration_stats(k.view(), 2).unwrap();
        assert!((s.offdiag_mean - 0.3).abs() < 1e-15 && s.offdiag_variance.abs() < 1e-15);
        assert!((s.fq_distance - 0.05).abs() < 1e-15);

        let k = array![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0]];
        assert_eq!(upper_triangle(k.view()), vec![0.0, 1.0, 1.0]);
        let ones = Array2::<f64>::ones((5, 5));
        assert_eq!(concentration_stats(ones.view(), 3).unwrap().pq_distance, 0.0);
        assert!(concentration_stats(array![[1.0]].view(), 1).is_err());
    }

    #[test]
    fn two_point_moments() {
        // Off-diagonal values split evenly between 0 and 1.
        let k = array![[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 1.0, 0.0], [1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0]];
        let s = concentration_stats(k.view(), 2).unwrap();
        assert!((s.offdiag_mean - 0.5).abs() < 1e-15 && (s.offdiag_variance - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ols_examples() {
        let r = array![[1.0, 0.2, 0.5], [0.2, 1.0, 0.9], [0.5, 0.9, 1.0]];
        let f = ols_compare(r.view(), r.view()).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && (f.r_squared - 1.0).abs() < 1e-12);
        let doubled = &r * 2.0;
        let f = ols_compare(r.view(), doubled.view()).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.r_squared - 1.0).abs() < 1e-12);
        let flat = Array2::from_elem((3, 3), 0.4);
        assert!(matches!(ols_compare(flat.view(), r.view()), Err(QmklError::Degenerate(_))));
    }

    #[test]
    fn noisy_estimate_on_near_constant_reference_has_low_r2() {
        let mut rng = rng_from_seed(17);
        let m = 30;
        let jitter = Uniform::new(0.0, 1e-3).unwrap();
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut reference = Array2::from_elem((m, m), 0.5);
        let mut estimate = Array2::zeros((m, m));
        for i in 0..m {
            for j in i + 1..m {
                let r = 0.5 + jitter.sample(&mut rng);
                reference[[i, j]] = r;
                reference[[j, i]] = r;
                let e = r + noise.sample(&mut rng);
                estimate[[i, j]] = e;
                estimate[[j, i]] = e;
            }
        }
        let f = ols_compare(reference.view(), estimate.view()).unwrap();
        assert!(f.r_squared < 0.2, "r² = {}", f.r_squared);
    }

    #[test]
    fn r2_is_one_only_for_affine_maps() {
        let x = [0.1, 0.4, 0.35, 0.9, 0.7];
        let affine: Vec<f64> = x.iter().map(|v| 3.0 * v - 0.2).collect();
        assert!((fit_line(&x, &affine).unwrap().r_squared - 1.0).abs() < 1e-10);
        let bent: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!(fit_line(&x, &bent).unwrap().r_squared < 1.0 - 1e-10);
    }

    #[test]
    fn sweep_converges_with_many_shots() {
        let spec = FeatureMapSpec::simple("Z-ZZ", 1.0).unwrap();
        let mut rng = rng_from_seed(3);
        let u = Uniform::new(0.0, 2.0).unwrap();
        let x = Array2::from_shape_fn((12, 3), |_| u.sample(&mut rng));
        let rows = shot_sweep(&spec, x.view(), SweepKernel::Fidelity, &[1, 10_000, 1_000_000], &[1, 2])
            .unwrap();
        assert!((rows[2].fit.slope - 1.0).abs() < 0.02 && rows[2].fit.r_squared > 0.99);
        assert!(rows[0].fit.r_squared < rows[1].fit.r_squared);
        assert!(shot_sweep(&spec, x.view(), SweepKernel::Fidelity, &[], &[1]).is_err());
    }
}
