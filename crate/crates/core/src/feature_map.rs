//! Pauli-string feature maps.
//!
//! A map is written as dash-separated layers such as `"Z-ZZ"` or `"Y-XZ"`.
//! One-character layers rotate every qubit individually; two-character layers
//! rotate qubit pairs chosen by the entanglement pattern, the first axis on
//! the lower qubit index. One repetition is a Hadamard layer followed by every
//! rotation term in [`FeatureMapSpec::build_terms`] order, and `reps` repeats
//! that whole block:
//!
//! ```text
//! |ψ(x)⟩ = [U(x) H^{⊗n}]^reps |0…0⟩
//! ```
//!
//! Angles are `alpha·φ_S(x)` with `φ_i = x_i` for singles and either
//! `x_i·x_j` or `(π − x_i)(π − x_j)` for pairs. Only a single shared `alpha`
//! is supported; per-subset bandwidths are not.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{QmklError, Result};
use crate::statevector::{PauliAxis, PauliTerm, StateVector, MAX_QUBITS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entanglement {
    #[default]
    Linear,
    /// Even pairs (0,1),(2,3),… followed by odd pairs (1,2),(3,4),….
    Pairwise,
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMap {
    #[default]
    Product,
    PiMinusProduct,
}

impl fmt::Display for Entanglement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Entanglement::Linear => "linear",
            Entanglement::Pairwise => "pairwise",
            Entanglement::Full => "full",
        })
    }
}

impl fmt::Display for DataMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataMap::Product => "product",
            DataMap::PiMinusProduct => "pi_minus_product",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliLayer(Vec<PauliAxis>);

impl PauliLayer {
    pub fn axes(&self) -> &[PauliAxis] {
        &self.0
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for PauliLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            write!(f, "{}", a.as_char())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapSpec {
    layers: Vec<PauliLayer>,
    alpha: f64,
    reps: usize,
    entanglement: Entanglement,
    data_map: DataMap,
}

impl FeatureMapSpec {
    pub fn parse(
        text: &str,
        alpha: f64,
        reps: usize,
        entanglement: Entanglement,
        data_map: DataMap,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for token in text.trim().split('-') {
            if token.is_empty() {
                return Err(QmklError::Parse(format!("empty layer in {text:?}")));
            }
            if token.chars().count() > 2 {
                return Err(QmklError::Parse(format!(
                    "layer {token:?} in {text:?} is longer than two axes"
                )));
            }
            let axes = token
                .chars()
                .map(|c| {
                    PauliAxis::from_char(c).ok_or_else(|| {
                        QmklError::Parse(format!("invalid Pauli axis {c:?} in {text:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(PauliLayer(axes));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(QmklError::Parse(format!("alpha must be positive, got {alpha}")));
        }
        if reps == 0 {
            return Err(QmklError::Parse("reps must be at least 1".into()));
        }
        Ok(FeatureMapSpec {
            layers,
            alpha,
            reps,
            entanglement,
            data_map,
        })
    }

    /// Shorthand for a linear, product-map spec with one repetition.
    pub fn simple(text: &str, alpha: f64) -> Result<Self> {
        Self::parse(text, alpha, 1, Entanglement::Linear, DataMap::Product)
    }

    pub fn layers(&self) -> &[PauliLayer] {
        &self.layers
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn reps(&self) -> usize {
        self.reps
    }

    pub fn entanglement(&self) -> Entanglement {
        self.entanglement
    }

    pub fn data_map(&self) -> DataMap {
        self.data_map
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::parse(
            &self.paulis(),
            alpha,
            self.reps,
            self.entanglement,
            self.data_map,
        )
    }

    /// The Pauli string in dash notation, e.g. `"Z-ZZ"`.
    pub fn paulis(&self) -> String {
        self.layers
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Canonical text identifying every parameter; used for artifact hashing.
    pub fn canonical(&self) -> String {
        format!(
            "{}|alpha={:?}|reps={}|ent={}|map={}",
            self.paulis(),
            self.alpha,
            self.reps,
            self.entanglement,
            self.data_map
        )
    }

    /// Qubit pairs visited by two-qubit layers.
    pub fn pairs(&self, n_qubits: usize) -> Vec<(usize, usize)> {
        match self.entanglement {
            Entanglement::Linear => (0..n_qubits.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
            Entanglement::Pairwise => {
                let even = (0..n_qubits.saturating_sub(1)).step_by(2);
                let odd = (1..n_qubits.saturating_sub(1)).step_by(2);
                even.chain(odd).map(|i| (i, i + 1)).collect()
            }
            Entanglement::Full => (0..n_qubits)
                .flat_map(|i| (i + 1..n_qubits).map(move |j| (i, j)))
                .collect(),
        }
    }

    /// Number of rotation terms per repetition.
    pub fn term_count(&self, n_qubits: usize) -> usize {
        let pairs = self.pairs(n_qubits).len();
        self.layers
            .iter()
            .map(|l| if l.arity() == 1 { n_qubits } else { pairs })
            .sum()
    }

    /// `alpha·φ_S(x)` for one subset.
    pub fn angle_for(&self, layer: &PauliLayer, subset: &[usize], x: &[f64]) -> Result<f64> {
        if subset.len() != layer.arity() {
            return Err(QmklError::usage(format!(
                "layer {layer} needs {} qubits, got {}",
                layer.arity(),
                subset.len()
            )));
        }
        if let Some(&q) = subset.iter().find(|&&q| q >= x.len()) {
            return Err(QmklError::usage(format!(
                "qubit {q} has no feature in a {}-vector",
                x.len()
            )));
        }
        let phi = match (subset, self.data_map) {
            ([i], _) => x[*i],
            ([i, j], DataMap::Product) => x[*i] * x[*j],
            ([i, j], DataMap::PiMinusProduct) => (PI - x[*i]) * (PI - x[*j]),
            _ => unreachable!("layers have arity 1 or 2"),
        };
        Ok(self.alpha * phi)
    }

    /// Rotation terms for one repetition, layer by layer: singles in
    /// ascending qubit order, pairs in entanglement-pattern order.
    pub fn build_terms(&self, x: &[f64]) -> Result<Vec<PauliTerm>> {
        let n = x.len();
        let pairs = self.pairs(n);
        let mut terms = Vec::with_capacity(self.term_count(n));
        for layer in &self.layers {
            match layer.axes() {
                [axis] => {
                    for q in 0..n {
                        let angle = self.angle_for(layer, &[q], x)?;
                        terms.push(PauliTerm::new(vec![q], vec![*axis], angle)?);
                    }
                }
                [lo, hi] => {
                    if n < 2 {
                        return Err(QmklError::config(format!(
                            "two-qubit layer {layer} needs at least 2 qubits, got {n}"
                        )));
                    }
                    for &(i, j) in &pairs {
                        let angle = self.angle_for(layer, &[i, j], x)?;
                        terms.push(PauliTerm::new(vec![i, j], vec![*lo, *hi], angle)?);
                    }
                }
                _ => unreachable!("layers have arity 1 or 2"),
            }
        }
        Ok(terms)
    }

    /// Encodes `x` (one feature per qubit) into a state.
    pub fn encode(&self, x: &[f64]) -> Result<StateVector> {
        if x.is_empty() || x.len() > MAX_QUBITS {
            return Err(QmklError::config(format!(
                "feature vector length {} outside 1..={MAX_QUBITS}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(QmklError::usage("feature vector has non-finite entries"));
        }
        let terms = self.build_terms(x)?;
        let mut state = StateVector::zero_state(x.len())?;
        for _ in 0..self.reps {
            state.apply_hadamard_all();
            for term in &terms {
                state.apply_pauli_rotation(term)?;
            }
        }
        Ok(state)
    }
}

impl fmt::Display for FeatureMapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(a={}", self.paulis(), self.alpha)?;
        if self.reps != 1 {
            write!(f, ",r={}", self.reps)?;
        }
        if self.entanglement != Entanglement::Linear {
            write!(f, ",{}", self.entanglement)?;
        }
        if self.data_map != DataMap::Product {
            write!(f, ",{}", self.data_map)?;
        }
        f.write_str(")")
    }
}

/// Serialized form used in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapConfig {
    pub paulis: String,
    pub alpha: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub entanglement: Entanglement,
    #[serde(default)]
    pub data_map: DataMap,
}

fn default_reps() -> usize {
    1
}

impl FeatureMapConfig {
    pub fn to_spec(&self) -> Result<FeatureMapSpec> {
        FeatureMapSpec::parse(
            &self.paulis,
            self.alpha,
            self.reps,
            self.entanglement,
            self.data_map,
        )
    }
}

impl From<&FeatureMapSpec> for FeatureMapConfig {
    fn from(spec: &FeatureMapSpec) -> Self {
        FeatureMapConfig {
            paulis: spec.paulis(),
            alpha: spec.alpha,
            reps: spec.reps,
            entanglement: spec.entanglement,
            data_map: spec.data_map,
        }
    }
}

/// The default quantum kernel set: every (Pauli string, alpha) pair of the
/// reference parameter table, linear entanglement, product data map.
/// `Y-YX` lists 1.6 twice; both entries are kept.
pub fn default_kernel_set() -> Vec<FeatureMapSpec> {
    const TABLE: &[(&str, &[f64], usize)] = &[
        ("Z", &[1.4, 2.0, 14.0, 20.0], 1),
        ("XZ", &[0.4, 4.0], 2),
        ("X-ZY", &[0.6, 6.0], 2),
        ("Y-XX", &[0.6, 6.0], 2),
        ("Y-XY", &[1.4, 10.0], 1),
        ("Y-XZ", &[0.8, 8.0], 2),
        ("Y-YX", &[0.2, 2.0, 1.6, 1.6], 1),
        ("Y-YZ", &[1.2, 12.0], 1),
        ("Y-ZX", &[2.0, 20.0], 1),
        ("Z-XX", &[1.0, 10.0], 1),
        ("Z-ZZ", &[2.0, 20.0], 1),
    ];
    TABLE
        .iter()
        .flat_map(|&(paulis, alphas, reps)| {
            alphas.iter().map(move |&alpha| {
                FeatureMapSpec::parse(paulis, alpha, reps, Entanglement::Linear, DataMap::Product)
                    .expect("table entries are valid")
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn parse_examples() {
        let s = FeatureMapSpec::parse("Z-ZZ", 2.0, 1, Entanglement::Linear, DataMap::Product)
            .unwrap();
        assert_eq!(s.layers().len(), 2);
        assert_eq!(s.layers()[0].axes(), &[PauliAxis::Z]);
        assert_eq!(s.layers()[1].axes(), &[PauliAxis::Z, PauliAxis::Z]);

        let s = FeatureMapSpec::simple("Y-YX", 1.6).unwrap();
        assert_eq!(s.paulis(), "Y-YX");
        assert_eq!(s.layers()[1].axes(), &[PauliAxis::Y, PauliAxis::X]);

        for bad in ["Z-QQ", "", "Z-", "ZZZ", "-Z", "z"] {
            assert!(
                matches!(FeatureMapSpec::simple(bad, 1.0), Err(QmklError::Parse(_))),
                "{bad:?}"
            );
        }
        assert!(FeatureMapSpec::simple("Z", 0.0).is_err());
        assert!(FeatureMapSpec::parse("Z", 1.0, 0, Entanglement::Linear, DataMap::Product).is_err());
    }

    #[test]
    fn angle_examples() {
        let product = FeatureMapSpec::simple("ZZ", 2.0).unwrap();
        let pair = &product.layers()[0];
        let a = product.angle_for(pair, &[0, 1], &[0.5, 0.4]).unwrap();
        assert!((a - 0.4).abs() < 1e-15);

        let pi = FeatureMapSpec::parse("ZZ", 2.0, 1, Entanglement::Linear, DataMap::PiMinusProduct)
            .unwrap();
        assert_eq!(pi.angle_for(&pi.layers()[0], &[0, 1], &[PI, 1.0]).unwrap(), 0.0);

        let single = FeatureMapSpec::simple("Z", 14.0).unwrap();
        assert_eq!(single.angle_for(&single.layers()[0], &[0], &[0.0]).unwrap(), 0.0);
        assert!(single.angle_for(&single.layers()[0], &[0, 1], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn term_examples() {
        let s = FeatureMapSpec::simple("Z-ZZ", 1.0).unwrap();
        let terms = s.build_terms(&[0.1, 0.2, 0.3]).unwrap();
        let targets: Vec<_> = terms.iter().map(|t| t.targets().to_vec()).collect();
        assert_eq!(targets, vec![vec![0], vec![1], vec![2], vec![0, 1], vec![1, 2]]);

        let s = FeatureMapSpec::simple("Z", 1.0).unwrap();
        assert_eq!(s.build_terms(&[0.1, 0.2]).unwrap().len(), 2);

        let s = FeatureMapSpec::parse("ZZ", 1.0, 1, Entanglement::Full, DataMap::Product).unwrap();
        assert_eq!(s.build_terms(&[0.1; 4]).unwrap().len(), 6);

        let s = FeatureMapSpec::simple("ZZ", 1.0).unwrap();
        assert!(matches!(s.build_terms(&[0.1]), Err(QmklError::Config(_))));
    }

    #[test]
    fn pairwise_is_even_then_odd() {
        let s = FeatureMapSpec::parse("XZ", 1.0, 1, Entanglement::Pairwise, DataMap::Product)
            .unwrap();
        assert_eq!(s.pairs(5), vec![(0, 1), (2, 3), (1, 2), (3, 4)]);
        let terms = s.build_terms(&[0.1; 5]).unwrap();
        assert_eq!(terms[0].axes(), &[PauliAxis::X, PauliAxis::Z]);
    }

    #[test]
    fn term_count_matches_generated_terms() {
        for ent in [Entanglement::Linear, Entanglement::Pairwise, Entanglement::Full] {
            for n in 2..8 {
                let s = FeatureMapSpec::parse("Y-XZ", 1.0, 2, ent, DataMap::Product).unwrap();
                let pairs = match ent {
                    Entanglement::Full => n * (n - 1) / 2,
                    _ => n - 1,
                };
                assert_eq!(s.term_count(n), n + pairs);
                assert_eq!(s.build_terms(&vec![0.3; n]).unwrap().len(), n + pairs);
            }
        }
    }

    #[test]
    fn encode_single_z() {
        let alpha = 1.3;
        let t = 0.7;
        let s = FeatureMapSpec::simple("Z", alpha).unwrap().encode(&[t]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [
            Complex64::from_polar(r, alpha * t),
            Complex64::from_polar(r, -alpha * t),
        ];
        for (a, b) in s.amplitudes().iter().zip(expected) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn encode_zero_angles_is_uniform() {
        let s = FeatureMapSpec::simple("Z-ZZ", 1.0).unwrap().encode(&[0.0, 0.0]).unwrap();
        for a in s.amplitudes() {
            assert!((a - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn encode_two_reps_matches_matrix_product() {
        // Oracle: explicit 2×2 products of D(θ)·H applied twice to |0⟩.
        let (alpha, t) = (0.9, 1.1);
        let theta = alpha * t;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let hm = [[h, h], [h, -h]];
        let d = [Complex64::from_polar(1.0, theta), Complex64::from_polar(1.0, -theta)];
        let mut v = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        for _ in 0..2 {
            let hv = [
                v[0] * hm[0][0] + v[1] * hm[0][1],
                v[0] * hm[1][0] + v[1] * hm[1][1],
            ];
            v = [d[0] * hv[0], d[1] * hv[1]];
        }
        let spec = FeatureMapSpec::parse("Z", alpha, 2, Entanglement::Linear, DataMap::Product)
            .unwrap();
        let s = spec.encode(&[t]).unwrap();
        for (a, b) in s.amplitudes().iter().zip(v) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn default_set_has_every_table_pair() {
        let set = default_kernel_set();
        assert_eq!(set.len(), 26);
        assert!(set.iter().all(|s| s.entanglement() == Entanglement::Linear));
        assert_eq!(set.iter().filter(|s| s.paulis() == "Y-YX").count(), 4);
        let zzz: Vec<_> = set.iter().filter(|s| s.paulis() == "Z-ZZ").map(|s| s.alpha()).collect();
        assert_eq!(zzz, vec![2.0, 20.0]);
    }

    #[test]
    fn encode_is_deterministic() {
        let spec = FeatureMapSpec::simple("Y-XZ", 0.8).unwrap();
        let x = [0.3, 1.2, 1.9, 0.05];
        let a = spec.encode(&x).unwrap();
        let b = spec.encode(&x).unwrap();
        assert!(a
            .amplitudes()
            .iter()
            .zip(b.amplitudes())
            .all(|(p, q)| p.re.to_bits() == q.re.to_bits() && p.im.to_bits() == q.im.to_bits()));
    }

    #[test]
    fn config_round_trip() {
        let json = r#"{"paulis": "X-ZY", "alpha": 0.6, "reps": 2}"#;
        let cfg: FeatureMapConfig = serde_json::from_str(json).unwrap();
        let spec = cfg.to_spec().unwrap();
        assert_eq!(spec.entanglement(), Entanglement::Linear);
        assert_eq!(FeatureMapConfig::from(&spec), cfg);
        let json = r#"{"paulis": "Z-ZZ", "alpha": 2, "data_map": "pi_minus_product", "entanglement": "full"}"#;
        let spec = serde_json::from_str::<FeatureMapConfig>(json).unwrap().to_spec().unwrap();
        assert_eq!(spec.data_map(), DataMap::PiMinusProduct);
        assert_eq!(spec.entanglement(), Entanglement::Full);
    }
}
