//! Python bindings for the simulator, circuit planner, and classifier.
//!
//! Builds to an importable `ringqcnn_py` module (see python/smoke_test.py
//! for the copy-the-cdylib route). Errors surface as ValueError with the
//! same class-prefixed messages the command line prints.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ringqcnn::error::Error;
use ringqcnn::preprocess::FeatureVector;
use ringqcnn::rng::stream;
use ringqcnn::{circuit, model, preprocess, statevec, train};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.class()))
}

fn feature_vector(values: Vec<f64>) -> PyResult<FeatureVector> {
    FeatureVector::new(values).map_err(py_err)
}

/// Dense state vector; qubit q is index bit q.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct StateVector {
    inner: statevec::StateVector,
}

#[pymethods]
impl StateVector {
    /// |0...0> on n qubits.
    #[new]
    fn new(n_qubits: usize) -> PyResult<Self> {
        Ok(Self {
            inner: statevec::StateVector::zero(n_qubits).map_err(py_err)?,
        })
    }

    fn apply_ry(&mut self, qubit: usize, angle: f64) -> PyResult<()> {
        self.inner.apply_ry(qubit, angle).map_err(py_err)
    }

    fn apply_rz(&mut self, qubit: usize, angle: f64) -> PyResult<()> {
        self.inner.apply_rz(qubit, angle).map_err(py_err)
    }

    fn apply_cnot(&mut self, control: usize, target: usize) -> PyResult<()> {
        self.inner.apply_cnot(control, target).map_err(py_err)
    }

    fn expectation_z(&self, qubit: usize) -> PyResult<f64> {
        self.inner.expectation_z(qubit).map_err(py_err)
    }

    /// Amplitudes as Python complex numbers, basis index ascending.
    fn amplitudes(&self) -> Vec<num_complex::Complex64> {
        self.inner.amplitudes().to_vec()
    }

    fn norm_sqr(&self) -> f64 {
        self.inner.norm_sqr()
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.inner.n_qubits()
    }

    fn __repr__(&self) -> String {
        format!("StateVector(n_qubits={})", self.inner.n_qubits())
    }
}

/// Frozen gate sequence for one feature width and pooling depth.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct CircuitPlan {
    inner: circuit::CircuitPlan,
}

#[pymethods]
impl CircuitPlan {
    /// Encoding, then per level ring convolution and pooling, for d features.
    #[staticmethod]
    fn build(d: usize, levels: usize) -> PyResult<Self> {
        Ok(Self {
            inner: circuit::CircuitPlan::build(d, levels).map_err(py_err)?,
        })
    }

    #[getter]
    fn gate_count(&self) -> usize {
        self.inner.gate_count()
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.inner.n_qubits()
    }

    #[getter]
    fn levels(&self) -> usize {
        self.inner.levels()
    }

    /// Qubits still active after the last pooling level.
    #[getter]
    fn final_active(&self) -> Vec<usize> {
        self.inner.final_active().to_vec()
    }

    /// The four lowest surviving qubits, measured by the dense head.
    #[getter]
    fn readout_qubits(&self) -> PyResult<[usize; 4]> {
        self.inner.readout_qubits().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "CircuitPlan(n_qubits={}, levels={}, gate_count={})",
            self.inner.n_qubits(),
            self.inner.levels(),
            self.inner.gate_count()
        )
    }
}

/// All trainable scalars of the classifier.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct ModelParams {
    inner: model::ModelParams,
}

#[pymethods]
impl ModelParams {
    #[staticmethod]
    fn zeros(d: usize, levels: usize) -> Self {
        Self {
            inner: model::ModelParams::zeros(d, levels),
        }
    }

    /// Seeded random initialization, deterministic per seed.
    #[staticmethod]
    fn init(d: usize, levels: usize, seed: u64) -> Self {
        Self {
            inner: model::ModelParams::init(d, levels, &mut stream(seed, &[])),
        }
    }

    /// Total scalar count, 9*levels + 2*d + 10.
    #[staticmethod]
    fn count(d: usize, levels: usize) -> usize {
        model::ModelParams::count(d, levels)
    }

    #[staticmethod]
    fn from_flat(d: usize, levels: usize, values: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: model::ModelParams::from_flat(d, levels, &values).map_err(py_err)?,
        })
    }

    /// Canonical flat order: conv angles, pool angles, w, v, dense weights
    /// row-major, biases.
    fn to_flat(&self) -> Vec<f64> {
        self.inner.to_flat()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn levels(&self) -> usize {
        self.inner.levels()
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelParams(d={}, levels={}, count={})",
            self.inner.d(),
            self.inner.levels(),
            model::ModelParams::count(self.inner.d(), self.inner.levels())
        )
    }
}

/// One forward pass: readout expectations, dense logits, softmax probs.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct ForwardResult {
    #[pyo3(get)]
    expectations: Vec<f64>,
    #[pyo3(get)]
    logits: Vec<f64>,
    #[pyo3(get)]
    probs: Vec<f64>,
}

#[pymethods]
impl ForwardResult {
    fn __repr__(&self) -> String {
        format!("ForwardResult(probs={:?})", self.probs)
    }
}

/// Saved parameters plus the clip and seed they were trained with.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Checkpoint {
    #[pyo3(get)]
    params: ModelParams,
    #[pyo3(get)]
    clip: f64,
    #[pyo3(get)]
    seed: u64,
}

/// Classify one feature vector of angles in [-pi, pi].
#[pyfunction]
fn forward(features: Vec<f64>, params: &ModelParams, plan: &CircuitPlan) -> PyResult<ForwardResult> {
    let out = model::forward(&feature_vector(features)?, &params.inner, &plan.inner, None)
        .map_err(py_err)?;
    Ok(ForwardResult {
        expectations: out.expectations.to_vec(),
        logits: out.logits.to_vec(),
        probs: out.probs.to_vec(),
    })
}

/// Cross-entropy of one sample under the current parameters.
#[pyfunction]
fn loss(
    features: Vec<f64>,
    label: usize,
    params: &ModelParams,
    plan: &CircuitPlan,
) -> PyResult<f64> {
    if label > 1 {
        return Err(PyValueError::new_err(format!(
            "config: label {label} outside {{0, 1}}"
        )));
    }
    let out = model::forward(&feature_vector(features)?, &params.inner, &plan.inner, None)
        .map_err(py_err)?;
    Ok(model::cross_entropy(&out.probs, label))
}

/// Loss gradient in canonical flat order. Methods: "parameter-shift",
/// "finite-diff", "adjoint".
#[pyfunction]
fn gradient(
    features: Vec<f64>,
    label: usize,
    params: &ModelParams,
    plan: &CircuitPlan,
    method: &str,
) -> PyResult<Vec<f64>> {
    let method = train::GradMethod::parse(method).map_err(py_err)?;
    let grad = train::gradient(
        &feature_vector(features)?,
        label,
        &params.inner,
        &plan.inner,
        method,
        None,
    )
    .map_err(py_err)?;
    Ok(grad.to_flat())
}

/// Clamp to [-clip, clip] and rescale to [-pi, pi].
#[pyfunction]
fn angle_scale(values: Vec<f64>, clip: f64) -> PyResult<Vec<f64>> {
    Ok(preprocess::angle_scale(&values, clip)
        .map_err(py_err)?
        .values()
        .to_vec())
}

/// Read a checkpoint file written by the `train` subcommand.
#[pyfunction]
fn load_checkpoint(path: &str) -> PyResult<Checkpoint> {
    let ck = model::Checkpoint::load(std::path::Path::new(path)).map_err(py_err)?;
    Ok(Checkpoint {
        params: ModelParams { inner: ck.params },
        clip: ck.clip,
        seed: ck.seed,
    })
}

#[pymodule]
fn ringqcnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<StateVector>()?;
    m.add_class::<CircuitPlan>()?;
    m.add_class::<ModelParams>()?;
    m.add_class::<ForwardResult>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(angle_scale, m)?)?;
    m.add_function(wrap_pyfunction!(load_checkpoint, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrappers_agree_with_core() {
        let plan = CircuitPlan::build(8, 1).unwrap();
        assert_eq!(plan.gate_count(), 104);
        let params = ModelParams::init(8, 1, 7);
        let x = vec![0.3; 8];
        let out = forward(x.clone(), &params, &plan).unwrap();
        assert!((out.probs[0] + out.probs[1] - 1.0).abs() < 1e-12);

        let shift = gradient(x.clone(), 1, &params, &plan, "parameter-shift").unwrap();
        let fd = gradient(x, 1, &params, &plan, "finite-diff").unwrap();
        assert_eq!(shift.len(), 35);
        for (a, b) in shift.iter().zip(&fd) {
            let diff = (a - b).abs();
            assert!(diff <= 1e-6 || diff <= 1e-4 * a.abs().max(b.abs()));
        }
    }

    #[test]
    fn invalid_inputs_error() {
        // Message text (the class prefix) is asserted from a live
        // interpreter in python/smoke_test.py.
        assert!(CircuitPlan::build(6, 1).is_err());
        let plan = CircuitPlan::build(8, 1).unwrap();
        assert!(gradient(vec![0.1; 8], 1, &ModelParams::zeros(8, 1), &plan, "newton").is_err());
        assert!(loss(vec![0.1; 8], 2, &ModelParams::zeros(8, 1), &plan).is_err());
        assert!(StateVector::new(0).is_err());
    }

    #[test]
    fn seeded_init_reproduces() {
        assert_eq!(
            ModelParams::init(8, 1, 3).to_flat(),
            ModelParams::init(8, 1, 3).to_flat()
        );
        assert_ne!(
            ModelParams::init(8, 1, 3).to_flat(),
            ModelParams::init(8, 1, 4).to_flat()
        );
    }
}
