//! Quantum feature-map kernels, multiple kernel learning by kernel-target
//! alignment, and precomputed-kernel SVM evaluation.

pub mod config;
pub mod dataprep;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod feature_map;
pub mod kernels;
pub mod linalg;
pub mod mkl;
pub mod rng;
pub mod statevector;
pub mod svm;

pub use error::{QmklError, Result};
pub use feature_map::{DataMap, Entanglement, FeatureMapSpec};
pub use kernels::{KernelKind, KernelMatrix, KernelMeta};
pub use mkl::{Strategy, WeightVector};
pub use statevector::StateVector;
