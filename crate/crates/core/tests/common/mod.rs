//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;
use qmkl::FeatureMapSpec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub type C = Complex64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `QMKL_DATA_DIR`, else `<workspace>/data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("QMKL_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn pauli(axis: char) -> Array2<C> {
    let (o, z, i) = (C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 1.0));
    match axis {
        'I' => ndarray::array![[o, z], [z, o]],
        'X' => ndarray::array![[z, o], [o, z]],
        'Y' => ndarray::array![[z, -i], [i, z]],
        'Z' => ndarray::array![[o, z], [z, -o]],
        _ => panic!("unknown axis {axis}"),
    }
}

pub fn kron(a: &Array2<C>, b: &Array2<C>) -> Array2<C> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(r, c)| a[[r / br, c / bc]] * b[[r % br, c % bc]])
}

/// Dense operator with `axes[q]` acting on qubit `q`; qubit 0 is the least
/// significant bit, so it is the rightmost Kronecker factor.
pub fn pauli_string(n: usize, axes: &[(usize, char)]) -> Array2<C> {
    let mut m = Array2::from_elem((1, 1), C::new(1.0, 0.0));
    for q in (0..n).rev() {
        let a = axes.iter().find(|(t, _)| *t == q).map_or('I', |(_, a)| *a);
        m = kron(&m, &pauli(a));
    }
    m
}

fn matmul(a: &Array2<C>, b: &Array2<C>) -> Array2<C> {
    a.dot(b)
}

fn one_norm(a: &Array2<C>) -> f64 {
    (0..a.ncols())
        .map(|c| a.column(c).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &Array2<C>) -> Array2<C> {
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let scaled = a.mapv(|v| v / 2f64.powi(s));
    let mut result = Array2::<C>::eye(n);
    let mut term = Array2::<C>::eye(n);
    for k in 1..=30 {
        term = matmul(&term, &scaled).mapv(|v| v / k as f64);
        result = result + &term;
    }
    for _ in 0..s {
        result = matmul(&result, &result);
    }
    result
}

fn hadamard_all(n: usize) -> Array2<C> {
    let h = 1.0 / 2f64.sqrt();
    let one = ndarray::array![[C::new(h, 0.0), C::new(h, 0.0)], [C::new(h, 0.0), C::new(-h, 0.0)]];
    let mut m = Array2::from_elem((1, 1), C::new(1.0, 0.0));
    for _ in 0..n {
        m = kron(&m, &one);
    }
    m
}

/// Dense reference state for a linear-entanglement, product-data-map spec:
/// `[Π_terms exp(i·α·φ·P) · H^{⊗n}]^reps |0⟩`.
pub fn dense_state(spec: &FeatureMapSpec, x: &[f64]) -> Array1<C> {
    let n = x.len();
    let mut psi = Array1::<C>::zeros(1 << n);
    psi[0] = C::new(1.0, 0.0);
    let h = hadamard_all(n);
    let alpha = spec.alpha();
    for _ in 0..spec.reps() {
        psi = h.dot(&psi);
        for layer in spec.paulis().split('-') {
            let axes: Vec<char> = layer.chars().collect();
            let subsets: Vec<Vec<usize>> = if axes.len() == 1 {
                (0..n).map(|q| vec![q]).collect()
            } else {
                (0..n.saturating_sub(1)).map(|q| vec![q, q + 1]).collect()
            };
            for sub in subsets {
                let phi: f64 = sub.iter().map(|&q| x[q]).product();
                let p = pauli_string(n, &sub.iter().copied().zip(axes.iter().copied()).collect::<Vec<_>>());
                let u = expm(&p.mapv(|v| v * C::new(0.0, alpha * phi)));
                psi = u.dot(&psi);
            }
        }
    }
    psi
}

pub fn frob(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn center(k: ArrayView2<f64>) -> Array2<f64> {
    let m = k.nrows();
    let h = Array2::<f64>::eye(m) - Array2::<f64>::from_elem((m, m), 1.0 / m as f64);
    h.dot(&k).dot(&h)
}

pub fn combine(ks: &[Array2<f64>], w: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros(ks[0].dim());
    for (k, &wi) in ks.iter().zip(w) {
        out.scaled_add(wi, k);
    }
    out
}

pub fn alignment_of(k: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    frob(k, y) / (frob(k, k).sqrt() * frob(y, y).sqrt())
}

/// Maximizes `f` over the probability simplex in up to three dimensions by a
/// coarse grid followed by three rounds of local refinement.
pub fn simplex_max(dim: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    assert!((1..=3).contains(&dim));
    if dim == 1 {
        return f(&[1.0]);
    }
    let eval = |a: f64, b: f64| -> Option<f64> {
        if a < 0.0 || b < 0.0 || a + b > 1.0 + 1e-12 {
            return None;
        }
        let w = if dim == 2 { vec![a, 1.0 - a] } else { vec![a, b, (1.0 - a - b).max(0.0)] };
        Some(f(&w))
    };
    let mut step = 1.0 / 200.0;
    let (mut ba, mut bb, mut best) = (0.0, 0.0, f64::NEG_INFINITY);
    let steps = 200;
    for i in 0..=steps {
        let jmax = if dim == 2 { 0 } else { steps - i };
        for j in 0..=jmax {
            let (a, b) = (i as f64 * step, j as f64 * step);
            if let Some(v) = eval(a, b) {
                if v > best {
                    (ba, bb, best) = (a, b, v);
                }
            }
        }
    }
    for _ in 0..3 {
        let (ca, cb) = (ba, bb);
        let fine = step / 20.0;
        for i in -20..=20 {
            for j in if dim == 2 { 0..=0 } else { -20..=20 } {
                let (a, b) = (ca + i as f64 * fine, cb + j as f64 * fine);
                if let Some(v) = eval(a, b) {
                    if v > best {
                        (ba, bb, best) = (a, b, v);
                    }
                }
            }
        }
        step = fine;
    }
    best
}

/// Random PSD Gram matrix `F Fᵀ` whose features include a label-correlated
/// column so that alignment with the labels is positive.
pub fn random_psd(rng: &mut ChaCha8Rng, labels: &[f64], rank: usize) -> Array2<f64> {
    let m = labels.len();
    let lift: f64 = rng.random_range(0.2..2.0);
    let f = Array2::from_shape_fn((m, rank + 1), |(i, j)| {
        if j == rank {
            lift * labels[i]
        } else {
            rng.random_range(-1.0..1.0)
        }
    });
    f.dot(&f.t())
}

/// Dense SVM dual by accelerated projected gradient:
/// `min ½αᵀQα − Σα` on `0 ≤ α ≤ C`, `yᵀα = 0`, `Q = (yyᵀ)∘K`.
/// The projection finds the multiplier of the equality by bisection.
pub fn svm_dual_oracle(k: ArrayView2<f64>, y: &[f64], c: f64) -> Vec<f64> {
    let m = y.len();
    let q = Array2::from_shape_fn((m, m), |(i, j)| y[i] * y[j] * k[[i, j]]);
    let lip = {
        // Power iteration for the largest eigenvalue.
        let mut v = Array1::from_elem(m, 1.0);
        let mut lam = 0.0;
        for _ in 0..500 {
            let w = q.dot(&v);
            lam = w.dot(&w).sqrt();
            v = w / lam;
        }
        lam
    };
    let project = |z: &Array1<f64>| -> Array1<f64> {
        let at = |mu: f64| -> (Array1<f64>, f64) {
            let a = Array1::from_iter((0..m).map(|i| (z[i] - mu * y[i]).clamp(0.0, c)));
            let s = (0..m).map(|i| y[i] * a[i]).sum();
            (a, s)
        };
        let (mut lo, mut hi) = (-1e6, 1e6);
        for _ in 0..90 {
            let mid = 0.5 * (lo + hi);
            if at(mid).1 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi)).0
    };
    let mut a = Array1::<f64>::zeros(m);
    let mut prev = a.clone();
    let mut t = 1.0f64;
    for _ in 0..40_000 {
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let yk = &a + &((&a - &prev) * ((t - 1.0) / t_next));
        let grad = q.dot(&yk) - 1.0;
        prev = a;
        a = project(&(&yk - &(grad / lip)));
        t = t_next;
    }
    a.to_vec()
}
