//! Python bindings: model construction and I/O, the forward pass, training
//! from a sample store, sequence filtering and the metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use stresnet::dataset::{degrade_frame, read_yuv420, write_yuv420, DegradeSpec, LumaPlane};
use stresnet::metrics::{self, RdPoint, TimingPair};
use stresnet::model::{self, StresNetWeights};
use stresnet::pipeline::{self, FilterMode};
use stresnet::trainer::{self, HyperParams, NoObserver};
use stresnet::{SampleStore, Tensor};

fn to_py(e: stresnet::Error) -> PyErr {
    match e {
        stresnet::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for stresnet::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// STResNet weights for one QP.
#[pyclass(name = "Model", module = "stresnet_py", skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: StresNetWeights,
}

#[pymethods]
impl Model {
    /// All weights and biases zero: the filter is the identity.
    #[staticmethod]
    fn zeros(qp: i16) -> Self {
        Model {
            inner: StresNetWeights::zeros(qp),
        }
    }

    /// Seeded Gaussian initialization.
    #[staticmethod]
    #[pyo3(signature = (qp, seed, std = model::INIT_STD))]
    fn init(qp: i16, seed: u64, std: f64) -> PyResult<Self> {
        if !(std >= 0.0 && std.is_finite()) {
            return Err(PyValueError::new_err("std must be finite and non-negative"));
        }
        Ok(Model {
            inner: model::init_weights_with_std(qp, seed, std),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: model::load_file(path).py_err()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_file(&self.inner, path).py_err()
    }

    #[getter]
    fn qp(&self) -> i16 {
        self.inner.qp()
    }

    #[getter]
    fn weight_count(&self) -> usize {
        self.inner.weight_count()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// `(out_channels, in_channels, kernel_height, kernel_width)` per layer.
    fn layer_shapes(&self) -> Vec<(usize, usize, usize, usize)> {
        self.inner
            .layers()
            .iter()
            .map(|l| {
                (
                    l.out_channels(),
                    l.in_channels(),
                    l.kernel_height(),
                    l.kernel_width(),
                )
            })
            .collect()
    }

    /// Every weight then bias, layer by layer.
    fn parameters(&self) -> Vec<f64> {
        self.inner.to_flat()
    }

    fn set_parameters(&mut self, values: Vec<f64>) -> PyResult<()> {
        self.inner.copy_from_flat(&values).py_err()
    }

    /// Restored block for normalized (0..1) raster-order inputs.
    fn forward(
        &self,
        py: Python<'_>,
        current: Vec<f64>,
        colocated: Vec<f64>,
        height: usize,
        width: usize,
    ) -> PyResult<Vec<f64>> {
        let current = Tensor::new(height, width, 1, current).py_err()?;
        let colocated = Tensor::new(height, width, 1, colocated).py_err()?;
        let out = py
            .detach(|| stresnet::forward(&self.inner, &current, &colocated))
            .py_err()?;
        Ok(out.into_data())
    }

    /// Filters a raw 4:2:0 file, writes the output video, flag sidecar and
    /// trace, and returns a summary dict.
    #[pyo3(signature = (degraded, original, width, height, frames, out, flags, trace, mode = "in_loop"))]
    #[allow(clippy::too_many_arguments)]
    fn filter_yuv<'py>(
        &self,
        py: Python<'py>,
        degraded: PathBuf,
        original: PathBuf,
        width: usize,
        height: usize,
        frames: usize,
        out: PathBuf,
        flags: PathBuf,
        trace: PathBuf,
        mode: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mode: FilterMode = mode.parse().py_err()?;
        let (enabled, ctus, gain) = py
            .detach(|| -> stresnet::Result<_> {
                let degraded = read_yuv420(&degraded, width, height, frames)?;
                let original = read_yuv420(&original, width, height, frames)?.luma;
                let outcome =
                    pipeline::filter_sequence(&self.inner, &degraded.luma, &original, mode)?;
                write_yuv420(&out, &outcome.filtered, Some(&degraded.chroma))?;
                outcome.flags.write_file(&flags)?;
                std::fs::write(&trace, outcome.trace.to_csv())?;
                let mut gain = 0.0;
                for i in 0..frames {
                    gain += metrics::psnr(original.frame(i), outcome.filtered.frame(i))?
                        - metrics::psnr(original.frame(i), degraded.luma.frame(i))?;
                }
                Ok((
                    outcome.flags.enabled_count(),
                    outcome.flags.grid.len() * frames,
                    gain / frames as f64,
                ))
            })
            .py_err()?;
        let d = PyDict::new(py);
        d.set_item("flags_enabled", enabled)?;
        d.set_item("ctus", ctus)?;
        d.set_item("mean_psnr_gain", gain)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(qp={}, params={})",
            self.inner.qp(),
            self.inner.param_count()
        )
    }

    fn __eq__(&self, other: &Model) -> bool {
        self.inner == other.inner
    }
}

fn plane(data: &[u8], width: usize, height: usize) -> PyResult<LumaPlane> {
    LumaPlane::new(width, height, data.to_vec()).py_err()
}

/// Mean squared error between two equal-length byte buffers.
#[pyfunction]
fn mse(a: &[u8], b: &[u8]) -> PyResult<f64> {
    metrics::mse_bytes(a, b).py_err()
}

/// PSNR in dB for 8-bit samples; `inf` for identical buffers.
#[pyfunction]
fn psnr(a: &[u8], b: &[u8]) -> PyResult<f64> {
    Ok(metrics::psnr_from_mse(metrics::mse_bytes(a, b).py_err()?))
}

/// Bjontegaard delta-rate in percent between `(rate, psnr)` curves.
#[pyfunction]
fn bd_rate(anchor: Vec<(f64, f64)>, test: Vec<(f64, f64)>) -> PyResult<f64> {
    let pts = |v: Vec<(f64, f64)>| {
        v.into_iter()
            .map(|(r, p)| RdPoint::new(r, p))
            .collect::<Vec<_>>()
    };
    metrics::bd_rate(&pts(anchor), &pts(test)).py_err()
}

/// `(T' - T) / T`.
#[pyfunction]
fn timing_ratio(baseline: f64, modified: f64) -> PyResult<f64> {
    metrics::timing_ratio(TimingPair::new(baseline, modified)).py_err()
}

#[pyfunction]
fn timing_report(baseline: f64, modified: f64) -> PyResult<String> {
    metrics::timing_report(TimingPair::new(baseline, modified)).py_err()
}

/// `(d1, d2, flag)` for one CTU's original, unfiltered and filtered bytes.
#[pyfunction]
fn decide_flag(original: &[u8], degraded: &[u8], filtered: &[u8]) -> PyResult<(f64, f64, bool)> {
    let d = pipeline::decide_flag(original, degraded, filtered).py_err()?;
    Ok((d.d1, d.d2, d.flag))
}

/// Blockwise DCT quantization of one luma plane.
#[pyfunction]
fn degrade<'py>(
    py: Python<'py>,
    data: &[u8],
    width: usize,
    height: usize,
    step: f64,
) -> PyResult<Bound<'py, PyBytes>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(PyValueError::new_err("step must be positive"));
    }
    let out = degrade_frame(&plane(data, width, height)?, DegradeSpec::with_step(step));
    Ok(PyBytes::new(py, out.data()))
}

fn hp_dict<'py>(py: Python<'py>, hp: &HyperParams) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("qp", hp.qp)?;
    d.set_item("learning_rate", hp.base_learning_rate)?;
    d.set_item("beta1", hp.momentum)?;
    d.set_item("beta2", hp.momentum2)?;
    d.set_item("epsilon", hp.adam_epsilon)?;
    d.set_item("iterations", hp.iterations)?;
    d.set_item("batch_size", hp.batch_size)?;
    d.set_item("seed", hp.seed)?;
    d.set_item("init_std", hp.init_std)?;
    Ok(d)
}

/// Default training settings for QP 22, 27, 32 or 37.
#[pyfunction]
fn hyper_params(py: Python<'_>, qp: i16) -> PyResult<Bound<'_, PyDict>> {
    hp_dict(py, &HyperParams::for_qp(qp).py_err()?)
}

/// Trains on a sample-store file; returns `(model, initial_loss, final_loss)`.
#[pyfunction]
#[pyo3(signature = (store, qp = None, iterations = None, learning_rate = None, batch_size = None, seed = None, init_std = None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    store: PathBuf,
    qp: Option<i16>,
    iterations: Option<u64>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    init_std: Option<f64>,
) -> PyResult<(Model, f64, f64)> {
    let store = SampleStore::load_file(store).py_err()?;
    let mut hp = HyperParams::for_qp(qp.unwrap_or(store.qp)).py_err()?;
    hp.iterations = iterations.unwrap_or(hp.iterations);
    hp.base_learning_rate = learning_rate.unwrap_or(hp.base_learning_rate);
    hp.batch_size = batch_size.unwrap_or(hp.batch_size);
    hp.seed = seed.unwrap_or(hp.seed);
    hp.init_std = init_std.unwrap_or(hp.init_std);
    let (weights, report) = py
        .detach(|| trainer::train(&store, &hp, &mut NoObserver))
        .py_err()?;
    Ok((
        Model { inner: weights },
        report.initial_loss,
        report.final_loss,
    ))
}

#[pymodule]
fn stresnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(bd_rate, m)?)?;
    m.add_function(wrap_pyfunction!(timing_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(timing_report, m)?)?;
    m.add_function(wrap_pyfunction!(decide_flag, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(hyper_params, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add("WEIGHT_COUNT", model::WEIGHT_COUNT)?;
    m.add("PARAM_COUNT", model::PARAM_COUNT)?;
    Ok(())
}
