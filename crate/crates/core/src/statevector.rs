//! Dense pure-state simulation restricted to the gates feature maps need.
//!
//! Basis index bit `k` holds qubit `k` (qubit 0 is the least significant bit).
//! Rotations use the positive-exponent convention `exp(+i·angle·P)` for a
//! Pauli product `P`, so `Z` on `|0⟩` picks up `e^{+i·angle}`.

use num_complex::Complex64;
use rand::distr::Distribution;
use rand_distr::Binomial;
use serde::{Deserialize, Serialize};

use crate::error::{QmklError, Result};
use crate::rng::rng_from_seed;

pub const MAX_QUBITS: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'X' => Some(PauliAxis::X),
            'Y' => Some(PauliAxis::Y),
            'Z' => Some(PauliAxis::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            PauliAxis::X => 'X',
            PauliAxis::Y => 'Y',
            PauliAxis::Z => 'Z',
        }
    }
}

/// A single rotation `exp(+i·angle·Π_k P_k)` over distinct target qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliTerm {
    targets: Vec<usize>,
    axes: Vec<PauliAxis>,
    angle: f64,
}

impl PauliTerm {
    pub fn new(targets: Vec<usize>, axes: Vec<PauliAxis>, angle: f64) -> Result<Self> {
        if targets.is_empty() {
            return Err(QmklError::usage("Pauli term needs at least one target"));
        }
        if targets.len() != axes.len() {
            return Err(QmklError::usage(format!(
                "Pauli term has {} targets but {} axes",
                targets.len(),
                axes.len()
            )));
        }
        for (i, t) in targets.iter().enumerate() {
            if targets[..i].contains(t) {
                return Err(QmklError::usage(format!("duplicate target qubit {t}")));
            }
        }
        if !angle.is_finite() {
            return Err(QmklError::usage("rotation angle must be finite"));
        }
        Ok(PauliTerm {
            targets,
            axes,
            angle,
        })
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn axes(&self) -> &[PauliAxis] {
        &self.axes
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn is_diagonal(&self) -> bool {
        self.axes.iter().all(|&a| a == PauliAxis::Z)
    }
}

/// 2×2 single-qubit reduced density matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rdm(pub [[Complex64; 2]; 2]);

impl Rdm {
    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    /// Bloch components `r_a = Tr[ρ σ_a]` so that `ρ = ½(I + r·σ)`.
    pub fn bloch_vector(&self) -> [f64; 3] {
        let off = self.0[0][1];
        [
            2.0 * off.re,
            -2.0 * off.im,
            (self.0[0][0] - self.0[1][1]).re,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero_state(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(QmklError::config(format!(
                "qubit count {n_qubits} outside 1..={MAX_QUBITS}"
            )));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector {
            n_qubits,
            amplitudes,
        })
    }

    /// Wraps explicit amplitudes; the vector must have power-of-two length
    /// and unit norm within 1e-10.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(QmklError::usage(format!(
                "amplitude count {len} is not a power of two ≥ 2"
            )));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(QmklError::config(format!("{n_qubits} qubits exceeds {MAX_QUBITS}")));
        }
        let state = StateVector {
            n_qubits,
            amplitudes,
        };
        if (state.norm() - 1.0).abs() > 1e-10 {
            return Err(QmklError::usage(format!(
                "amplitudes have norm {}, expected 1",
                state.norm()
            )));
        }
        Ok(state)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Applies `H` to every qubit.
    pub fn apply_hadamard_all(&mut self) {
        let len = self.amplitudes.len();
        for q in 0..self.n_qubits {
            let stride = 1usize << q;
            for block in (0..len).step_by(stride << 1) {
                for i in block..block + stride {
                    let a = self.amplitudes[i];
                    let b = self.amplitudes[i + stride];
                    self.amplitudes[i] = a + b;
                    self.amplitudes[i + stride] = a - b;
                }
            }
        }
        let scale = (0.5f64).powf(self.n_qubits as f64 / 2.0);
        for a in &mut self.amplitudes {
            *a *= scale;
        }
    }

    /// Applies `exp(+i·angle·P)` where `P` is the term's Pauli product.
    pub fn apply_pauli_rotation(&mut self, term: &PauliTerm) -> Result<()> {
        if let Some(&t) = term.targets.iter().find(|&&t| t >= self.n_qubits) {
            return Err(QmklError::usage(format!(
                "target qubit {t} out of range for {} qubits",
                self.n_qubits
            )));
        }
        let mut flip_mask = 0usize;
        let mut sign_mask = 0usize;
        let mut y_count = 0u32;
        for (&t, &axis) in term.targets.iter().zip(&term.axes) {
            let bit = 1usize << t;
            match axis {
                PauliAxis::X => flip_mask |= bit,
                PauliAxis::Y => {
                    flip_mask |= bit;
                    sign_mask |= bit;
                    y_count += 1;
                }
                PauliAxis::Z => sign_mask |= bit,
            }
        }
        let (sin, cos) = term.angle.sin_cos();

        if flip_mask == 0 {
            // Diagonal: each basis state is an eigenvector with eigenvalue ±1.
            let plus = Complex64::new(cos, sin);
            let minus = plus.conj();
            for (b, a) in self.amplitudes.iter_mut().enumerate() {
                *a *= if (b & sign_mask).count_ones() % 2 == 0 {
                    plus
                } else {
                    minus
                };
            }
            return Ok(());
        }

        // P|b⟩ = f(b)|b ⊕ flip⟩ with f(b) = i^{#Y}·(−1)^{popcount(b & sign)}.
        let y_phase = match y_count % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        };
        let i_sin = Complex64::new(0.0, sin);
        let phase = |b: usize| {
            if (b & sign_mask).count_ones() % 2 == 0 {
                y_phase
            } else {
                -y_phase
            }
        };
        let pivot = 1usize << flip_mask.trailing_zeros();
        for c in 0..self.amplitudes.len() {
            if c & pivot != 0 {
                continue;
            }
            let d = c ^ flip_mask;
            let (ac, ad) = (self.amplitudes[c], self.amplitudes[d]);
            self.amplitudes[c] = ac * cos + i_sin * phase(d) * ad;
            self.amplitudes[d] = ad * cos + i_sin * phase(c) * ac;
        }
        Ok(())
    }

    /// `⟨self|other⟩`.
    pub fn overlap(&self, other: &StateVector) -> Result<Complex64> {
        if self.n_qubits != other.n_qubits {
            return Err(QmklError::usage(format!(
                "overlap of {}-qubit and {}-qubit states",
                self.n_qubits, other.n_qubits
            )));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Reduced density matrix of `qubit`, tracing out all other qubits.
    pub fn reduced_density_matrix(&self, qubit: usize) -> Result<Rdm> {
        if qubit >= self.n_qubits {
            return Err(QmklError::usage(format!(
                "qubit {qubit} out of range for {} qubits",
                self.n_qubits
            )));
        }
        let bit = 1usize << qubit;
        let zero = Complex64::new(0.0, 0.0);
        let (mut p0, mut p1, mut off) = (0.0, 0.0, zero);
        for (b, &a0) in self.amplitudes.iter().enumerate() {
            if b & bit != 0 {
                continue;
            }
            let a1 = self.amplitudes[b | bit];
            p0 += a0.norm_sqr();
            p1 += a1.norm_sqr();
            off += a0 * a1.conj();
        }
        Ok(Rdm([
            [Complex64::new(p0, 0.0), off],
            [off.conj(), Complex64::new(p1, 0.0)],
        ]))
    }

    /// Probability of the all-zeros outcome.
    pub fn zero_probability(&self) -> f64 {
        self.amplitudes[0].norm_sqr().clamp(0.0, 1.0)
    }

    /// Estimates the all-zeros probability from `shots` seeded measurements.
    pub fn sample_zero_probability(&self, shots: u64, seed: u64) -> Result<f64> {
        sample_frequency(self.zero_probability(), shots, seed)
    }
}

/// Draws `k ~ Binomial(shots, p)` from a generator seeded with `seed` and
/// returns `k / shots`.
pub fn sample_frequency(p: f64, shots: u64, seed: u64) -> Result<f64> {
    if shots == 0 {
        return Err(QmklError::usage("shot count must be at least 1"));
    }
    let p = p.clamp(0.0, 1.0);
    let dist = Binomial::new(shots, p)
        .map_err(|e| QmklError::usage(format!("invalid binomial parameters: {e}")))?;
    let k = dist.sample(&mut rng_from_seed(seed));
    Ok(k as f64 / shots as f64)
}
