//! Python bindings: tensors, PNM IO, synthetic data, metrics, the model and
//! the gradient suite.

use std::fs;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use renetseg_core::data::{encode_pnm, generate_synthetic as synth, read_pnm as parse_pnm};
use renetseg_core::gradcheck::gradient_suite as suite;
use renetseg_core::metrics::{
    confusion_counts as counts, format_report as table, metrics_from_counts, MetricsReport,
};
use renetseg_core::model::{
    build_model, forward, predict_mask, train, ModelConfig, ModelParams, Sample,
};
use renetseg_core::{load_checkpoint, rng_next as next, save_checkpoint, Error, RngState};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Dense f32 tensor in height × width × channel order.
#[pyclass(name = "Tensor", module = "renetseg", frozen, from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: renetseg_core::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        let inner = renetseg_core::Tensor::from_vec(&shape, data).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn full(shape: Vec<usize>, fill: f32) -> PyResult<Self> {
        let inner = renetseg_core::tensor_create(&shape, fill).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    /// Row-major values.
    #[getter]
    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

fn wrap(inner: renetseg_core::Tensor) -> PyTensor {
    PyTensor { inner }
}

/// Draws one value: returns `(value in [0, 1), next_state)`.
#[pyfunction]
fn rng_next(state: u64) -> PyResult<(f64, u64)> {
    let (v, s) = next(RngState::new(state).map_err(py_err)?).map_err(py_err)?;
    Ok((v, s.state()))
}

#[pyfunction]
fn read_pnm(data: &[u8]) -> PyResult<PyTensor> {
    parse_pnm(data).map(wrap).map_err(py_err)
}

#[pyfunction]
fn write_pnm<'py>(py: Python<'py>, tensor: &PyTensor) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = encode_pnm(&tensor.inner).map_err(py_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// List of `(id, image, mask)` triples.
#[pyfunction]
fn generate_synthetic(
    seed: u64,
    count: usize,
    size: usize,
) -> PyResult<Vec<(String, PyTensor, PyTensor)>> {
    let records = synth(seed, count, size).map_err(py_err)?;
    Ok(records
        .into_iter()
        .map(|r| {
            (
                r.id,
                wrap(r.image),
                wrap(r.mask.expect("synthetic records carry masks")),
            )
        })
        .collect())
}

#[pyfunction]
fn confusion_counts<'py>(
    py: Python<'py>,
    pred: &PyTensor,
    gt: &PyTensor,
) -> PyResult<Bound<'py, PyDict>> {
    let c = counts(&pred.inner, &gt.inner).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("tp", c.tp)?;
    d.set_item("tn", c.tn)?;
    d.set_item("fp", c.fp)?;
    d.set_item("fn", c.fn_)?;
    Ok(d)
}

/// `{"ac", "se", "sp", "di", "ja"}` for one prediction.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, pred: &PyTensor, gt: &PyTensor) -> PyResult<Bound<'py, PyDict>> {
    let c = counts(&pred.inner, &gt.inner).map_err(py_err)?;
    let r = metrics_from_counts(&c).map_err(py_err)?;
    let d = PyDict::new(py);
    for (name, v) in MetricsReport::NAMES.iter().zip(r.values()) {
        d.set_item(*name, v)?;
    }
    Ok(d)
}

/// Text table from `(label, [ac, se, sp, di, ja])` rows.
#[pyfunction]
fn format_report(rows: Vec<(String, [f64; 5])>) -> String {
    let rows: Vec<(&str, MetricsReport)> = rows
        .iter()
        .map(|(l, v)| (l.as_str(), MetricsReport::from_values(*v)))
        .collect();
    table(&rows)
}

/// `(layer, max relative error, tolerance)` for every layer.
#[pyfunction]
#[pyo3(signature = (seed = 1))]
fn gradient_suite(seed: u64) -> PyResult<Vec<(String, f64, f64)>> {
    Ok(suite(seed)
        .map_err(py_err)?
        .into_iter()
        .map(|e| (e.name, e.max_rel_error, e.tolerance))
        .collect())
}

/// Segmentation network with its parameters.
#[pyclass(name = "Model", module = "renetseg")]
struct PyModel {
    params: ModelParams,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (
        seed = 42, image_size = 64, rnn_units = 32, patch = 2, lr = 0.01,
        momentum = 0.9, batch_size = 4, epochs = 300, threshold = 0.5
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        seed: u64,
        image_size: usize,
        rnn_units: usize,
        patch: usize,
        lr: f64,
        momentum: f64,
        batch_size: usize,
        epochs: usize,
        threshold: f64,
    ) -> PyResult<Self> {
        let config = ModelConfig {
            seed,
            image_size,
            rnn_units,
            patch,
            learning_rate: lr,
            momentum,
            batch_size,
            epochs,
            threshold,
            ..ModelConfig::default()
        };
        let mut rng = RngState::new(seed).map_err(py_err)?;
        Ok(Self {
            params: build_model(&config, &mut rng).map_err(py_err)?,
        })
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.params.weights.parameter_count()
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.params.config.image_size
    }

    /// Re-initializes from the config seed and trains; returns
    /// `(epoch, loss, dice)` per epoch.
    fn train(
        &mut self,
        py: Python<'_>,
        images: Vec<PyTensor>,
        masks: Vec<PyTensor>,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        if images.len() != masks.len() {
            return Err(PyValueError::new_err("images and masks differ in length"));
        }
        let samples: Vec<Sample> = images
            .into_iter()
            .zip(masks)
            .map(|(i, m)| Sample {
                image: i.inner,
                mask: m.inner,
            })
            .collect();
        let config = self.params.config.clone();
        let (params, trace) = py
            .detach(|| {
                let mut rng = RngState::new(config.seed)?;
                train(&config, &samples, &mut rng)
            })
            .map_err(py_err)?;
        self.params = params;
        Ok(trace
            .epochs
            .iter()
            .map(|r| (r.epoch, r.loss, r.dice))
            .collect())
    }

    /// Per-pixel foreground probabilities.
    fn predict(&self, image: &PyTensor) -> PyResult<PyTensor> {
        forward(&self.params.config, &self.params.weights, &image.inner)
            .map(wrap)
            .map_err(py_err)
    }

    /// Binary mask at the model's threshold.
    fn predict_mask(&self, image: &PyTensor) -> PyResult<PyTensor> {
        let prob =
            forward(&self.params.config, &self.params.weights, &image.inner).map_err(py_err)?;
        Ok(wrap(predict_mask(&prob, self.params.config.threshold)))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let ckpt = self.params.to_checkpoint().map_err(py_err)?;
        let file =
            fs::File::create(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        save_checkpoint(&ckpt, std::io::BufWriter::new(file)).map_err(py_err)?;
        Ok(())
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = fs::File::open(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        let ckpt = load_checkpoint(std::io::BufReader::new(file)).map_err(py_err)?;
        Ok(Self {
            params: ModelParams::from_checkpoint(&ckpt).map_err(py_err)?,
        })
    }
}

#[pymodule]
fn renetseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(rng_next, m)?)?;
    m.add_function(wrap_pyfunction!(read_pnm, m)?)?;
    m.add_function(wrap_pyfunction!(write_pnm, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_counts, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(format_report, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_suite, m)?)?;
    Ok(())
}
