//! Python bindings. Matrices cross the boundary as lists of row lists
//! (anything `numpy.asarray(...).tolist()` produces works).

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use qmkl_core::diagnostics;
use qmkl_core::feature_map::default_kernel_set;
use qmkl_core::kernels;
use qmkl_core::mkl;
use qmkl_core::svm;
use qmkl_core::{DataMap, Entanglement, FeatureMapSpec, QmklError, Strategy};

fn py_err(e: QmklError) -> PyErr {
    match e {
        QmklError::Solver { .. } => PyRuntimeError::new_err(e.to_string()),
        QmklError::Io { .. } | QmklError::Ingestion { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((m, n), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: ArrayView2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "FeatureMap", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFeatureMap {
    spec: FeatureMapSpec,
}

#[pymethods]
impl PyFeatureMap {
    #[new]
    #[pyo3(signature = (paulis, alpha, reps = 1, entanglement = "linear", data_map = "product"))]
    fn new(paulis: &str, alpha: f64, reps: usize, entanglement: &str, data_map: &str) -> PyResult<Self> {
        let ent = match entanglement {
            "linear" => Entanglement::Linear,
            "pairwise" => Entanglement::Pairwise,
            "full" => Entanglement::Full,
            other => return Err(PyValueError::new_err(format!("unknown entanglement {other:?}"))),
        };
        let map = match data_map {
            "product" => DataMap::Product,
            "pi_minus_product" => DataMap::PiMinusProduct,
            other => return Err(PyValueError::new_err(format!("unknown data map {other:?}"))),
        };
        let spec = FeatureMapSpec::parse(paulis, alpha, reps, ent, map).map_err(py_err)?;
        Ok(PyFeatureMap { spec })
    }

    #[getter]
    fn paulis(&self) -> String {
        self.spec.paulis()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.spec.alpha()
    }

    #[getter]
    fn reps(&self) -> usize {
        self.spec.reps()
    }

    fn canonical(&self) -> String {
        self.spec.canonical()
    }

    /// Statevector amplitudes; qubit 0 is the least significant index bit.
    fn encode(&self, x: Vec<f64>) -> PyResult<Vec<Complex64>> {
        Ok(self.spec.encode(&x).map_err(py_err)?.amplitudes().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("FeatureMap({})", self.spec)
    }
}

/// The default kernel set (one entry per map and bandwidth).
#[pyfunction]
fn default_feature_maps() -> Vec<PyFeatureMap> {
    default_kernel_set()
        .into_iter()
        .map(|spec| PyFeatureMap { spec })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (feature_map, x, y = None, shots = 0, seed = 0))]
fn fidelity_kernel(
    feature_map: &PyFeatureMap,
    x: Vec<Vec<f64>>,
    y: Option<Vec<Vec<f64>>>,
    shots: u64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let x = to_array(x)?;
    let y = y.map(to_array).transpose()?;
    let k = kernels::fidelity_matrix(&feature_map.spec, x.view(), y.as_ref().map(|a| a.view()), shots, seed)
        .map_err(py_err)?;
    Ok(to_rows(k.view()))
}

#[pyfunction]
#[pyo3(signature = (feature_map, x, y = None, gamma = 1.0, shots = 0, seed = 0))]
fn projected_kernel(
    feature_map: &PyFeatureMap,
    x: Vec<Vec<f64>>,
    y: Option<Vec<Vec<f64>>>,
    gamma: f64,
    shots: u64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let x = to_array(x)?;
    let fx = kernels::projected_features(&feature_map.spec, x.view(), shots, seed).map_err(py_err)?;
    let k = match y {
        None => kernels::projected_matrix(&fx, &fx, gamma),
        Some(y) => {
            let y = to_array(y)?;
            let fy = kernels::projected_features(&feature_map.spec, y.view(), shots, seed.wrapping_add(1))
                .map_err(py_err)?;
            kernels::projected_matrix(&fy, &fx, gamma)
        }
    }
    .map_err(py_err)?;
    Ok(to_rows(k.view()))
}

/// With `y`, rows are `y` and columns are `x`; `gamma=None` uses `1/(d·Var(x))`.
#[pyfunction]
#[pyo3(signature = (x, y = None, gamma = None))]
fn rbf_kernel(x: Vec<Vec<f64>>, y: Option<Vec<Vec<f64>>>, gamma: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let x = to_array(x)?;
    let gamma = gamma.unwrap_or_else(|| kernels::rbf_default_gamma(x.view()));
    let k = match y {
        None => kernels::rbf_matrix(x.view(), None, gamma),
        Some(y) => {
            let y = to_array(y)?;
            kernels::rbf_matrix(y.view(), Some(x.view()), gamma)
        }
    }
    .map_err(py_err)?;
    Ok(to_rows(k.view()))
}

#[pyfunction]
fn target_kernel(labels: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(mkl::target_kernel(&labels).map_err(py_err)?.values.view()))
}

#[pyfunction]
fn alignment(k1: Vec<Vec<f64>>, k2: Vec<Vec<f64>>) -> PyResult<f64> {
    mkl::alignment(to_array(k1)?.view(), to_array(k2)?.view()).map_err(py_err)
}

#[pyfunction]
fn centered_alignment(k1: Vec<Vec<f64>>, k2: Vec<Vec<f64>>) -> PyResult<f64> {
    mkl::centered_alignment(to_array(k1)?.view(), to_array(k2)?.view()).map_err(py_err)
}

#[pyclass(name = "Weights", frozen, get_all)]
struct PyWeights {
    strategy: String,
    weights: Vec<f64>,
    raw: Vec<f64>,
    selected: Vec<usize>,
    objective: f64,
    iterations: usize,
}

#[pymethods]
impl PyWeights {
    fn __repr__(&self) -> String {
        format!("Weights({}, {:?})", self.strategy, self.weights)
    }
}

/// `strategy` is one of AVE, SDP, CENT, PROJ.
#[pyfunction]
#[pyo3(signature = (kernels, labels, strategy, tol = 1e-9, max_iter = 100_000, proj_threshold = None))]
fn mkl_weights(
    kernels: Vec<Vec<Vec<f64>>>,
    labels: Vec<f64>,
    strategy: &str,
    tol: f64,
    max_iter: usize,
    proj_threshold: Option<f64>,
) -> PyResult<PyWeights> {
    let strategy: Strategy = strategy.parse().map_err(py_err)?;
    let ks = kernels.into_iter().map(to_array).collect::<PyResult<Vec<_>>>()?;
    let views: Vec<_> = ks.iter().map(|k| k.view()).collect();
    let target = mkl::target_kernel(&labels).map_err(py_err)?;
    let opts = mkl::MklOptions {
        tol,
        max_iter,
        proj_threshold,
        ..Default::default()
    };
    let w = mkl::fit_weights(strategy, &views, target.values.view(), &opts).map_err(py_err)?;
    Ok(PyWeights {
        strategy: w.strategy.to_string(),
        weights: w.weights,
        raw: w.raw,
        selected: w.selected,
        objective: w.objective,
        iterations: w.iterations,
    })
}

#[pyfunction]
fn combine(kernels: Vec<Vec<Vec<f64>>>, weights: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let ks = kernels.into_iter().map(to_array).collect::<PyResult<Vec<_>>>()?;
    let views: Vec<_> = ks.iter().map(|k| k.view()).collect();
    Ok(to_rows(mkl::combine_views(&views, &weights).map_err(py_err)?.view()))
}

#[pyclass(name = "SvmModel", frozen)]
struct PySvmModel {
    model: svm::SvmModel,
}

#[pymethods]
impl PySvmModel {
    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.model.alpha.clone()
    }

    #[getter]
    fn dual_coefficients(&self) -> Vec<f64> {
        self.model.dual_coefficients.clone()
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.model.bias
    }

    #[getter]
    fn support_indices(&self) -> Vec<usize> {
        self.model.support_indices.clone()
    }

    /// Rows of `k_cross` are new points, columns are training points.
    fn decision_function(&self, k_cross: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        svm::decision_values(&self.model, to_array(k_cross)?.view()).map_err(py_err)
    }
}

#[pyfunction]
#[pyo3(signature = (k, labels, c = 1.0, tol = 1e-6, max_iter = 100_000))]
fn svm_train(k: Vec<Vec<f64>>, labels: Vec<f64>, c: f64, tol: f64, max_iter: usize) -> PyResult<PySvmModel> {
    let params = svm::SvmParams {
        c,
        tol,
        max_iter,
        record_objective: false,
    };
    let model = svm::train(to_array(k)?.view(), &labels, &params).map_err(py_err)?;
    Ok(PySvmModel { model })
}

/// Returns `(auc, [(fpr, tpr), ...])`.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<f64>) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let r = svm::roc_auc(&scores, &labels).map_err(py_err)?;
    Ok((r.auc, r.points))
}

/// Returns `(offdiag_mean, offdiag_variance, fq_distance, pq_distance)`.
#[pyfunction]
fn concentration_stats(k: Vec<Vec<f64>>, n_qubits: usize) -> PyResult<(f64, f64, f64, f64)> {
    let s = diagnostics::concentration_stats(to_array(k)?.view(), n_qubits).map_err(py_err)?;
    Ok((s.offdiag_mean, s.offdiag_variance, s.fq_distance, s.pq_distance))
}

/// Returns `(slope, intercept, r_squared, n_points)`.
#[pyfunction]
fn ols_compare(reference: Vec<Vec<f64>>, estimate: Vec<Vec<f64>>) -> PyResult<(f64, f64, f64, usize)> {
    let f = diagnostics::ols_compare(to_array(reference)?.view(), to_array(estimate)?.view()).map_err(py_err)?;
    Ok((f.slope, f.intercept, f.r_squared, f.n_points))
}

#[pymodule]
fn qmkl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFeatureMap>()?;
    m.add_class::<PyWeights>()?;
    m.add_class::<PySvmModel>()?;
    m.add_function(wrap_pyfunction!(default_feature_maps, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(projected_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(rbf_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(target_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(alignment, m)?)?;
    m.add_function(wrap_pyfunction!(centered_alignment, m)?)?;
    m.add_function(wrap_pyfunction!(mkl_weights, m)?)?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(svm_train, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(concentration_stats, m)?)?;
    m.add_function(wrap_pyfunction!(ols_compare, m)?)?;
    Ok(())
}
