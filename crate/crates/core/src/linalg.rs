//! Small dense linear algebra: symmetric eigendecomposition by cyclic Jacobi
//! rotations, Cholesky solves, and Frobenius products.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{QmklError, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
/// Column `k` of `vectors` belongs to `values[k]`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl SymmetricEigen {
    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn reassemble(&self, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let scaled = &self.vectors * &self.values.mapv(f).insert_axis(Axis(0));
        scaled.dot(&self.vectors.t())
    }
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j]] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition. Sweeps until the off-diagonal
/// Frobenius norm drops below `1e-14·‖A‖_F` (or 1e-300 absolute).
pub fn symmetric_eigen(matrix: ArrayView2<f64>) -> Result<SymmetricEigen> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(QmklError::usage(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(QmklError::usage("matrix has non-finite entries"));
    }
    // Symmetrize to remove round-off asymmetry in callers' inputs.
    let mut a = (&matrix + &matrix.t()) * 0.5;
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = (1e-14 * scale).max(1e-300);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > target {
        return Err(QmklError::Solver {
            message: format!("Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"),
            best: a.diag().to_vec(),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok(SymmetricEigen { values, vectors })
}

/// `⟨A, B⟩_F = Σ_ij A_ij B_ij`.
pub fn frobenius_inner(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn frobenius_norm(a: ArrayView2<f64>) -> f64 {
    frobenius_inner(a, a).sqrt()
}

/// Solves `A x = b` for symmetric positive definite `A`. Returns `None` when
/// a pivot is not positive enough to trust (relative threshold 1e-12).
pub fn cholesky_solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    let max_diag = a.diag().iter().fold(0.0f64, |m, &d| m.max(d.abs()));
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 1e-12 * max_diag) {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn two_by_two() {
        let e = symmetric_eigen(array![[1.0, 1.2], [1.2, 1.0]].view()).unwrap();
        assert!((e.values[0] - 2.2).abs() < 1e-14);
        assert!((e.values[1] + 0.2).abs() < 1e-14);
    }

    #[test]
    fn diagonal_input_is_sorted() {
        let e = symmetric_eigen(array![[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 2.0]].view())
            .unwrap();
        assert_eq!(e.values.to_vec(), vec![3.0, 2.0, 1.0]);
        assert_eq!(e.vectors.column(0).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_non_square() {
        assert!(symmetric_eigen(Array2::<f64>::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn cholesky_small_system() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let x = cholesky_solve(a.view(), array![2.0, 1.0].view()).unwrap();
        let r = a.dot(&x) - array![2.0, 1.0];
        assert!(r.iter().all(|v| v.abs() < 1e-14));
        assert!(cholesky_solve(array![[1.0, 1.0], [1.0, 1.0]].view(), array![1.0, 1.0].view())
            .is_none());
    }

    proptest! {
        #[test]
        fn decomposition_reconstructs(entries in proptest::collection::vec(-5.0f64..5.0, 36)) {
            let b = Array2::from_shape_vec((6, 6), entries).unwrap();
            let a = &b + &b.t();
            let e = symmetric_eigen(a.view()).unwrap();
            let rebuilt = e.reassemble(|x| x);
            for (x, y) in rebuilt.iter().zip(a.iter()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            let gram = e.vectors.t().dot(&e.vectors);
            for ((i, j), v) in gram.indexed_iter() {
                let expected = if i == j { 1.0 } else { 0.0 };
                prop_assert!((v - expected).abs() < 1e-10);
            }
            for w in e.values.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }
    }
}
