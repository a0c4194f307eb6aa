//! Python bindings: configs, the closed-form model, simulations, histograms
//! and fits.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pairlab::analytic::{self, HomDipParams};
use pairlab::fitting::{self, DataPoint};
use pairlab::model::{self, ExperimentConfig, FacetParams, FransonConfig, HomConfig};
use pairlab::{mc, pipeline, tdc};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn sim_error(e: mc::SimError) -> PyErr {
    match e {
        mc::SimError::Capacity { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => value_error(e),
    }
}

fn pipeline_error(e: pipeline::PipelineError) -> PyErr {
    match e {
        pipeline::PipelineError::Sim(s) => sim_error(s),
        pipeline::PipelineError::Tdc(t) => value_error(t),
    }
}

/// Experiment configuration in the `section.key = value` format.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: ExperimentConfig,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        model::parse_config(text).map(|inner| Config { inner }).map_err(value_error)
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(value_error)?;
        Self::new(&text)
    }

    fn to_text(&self) -> String {
        model::serialize_config(&self.inner)
    }

    fn digest(&self) -> String {
        model::config_digest(&self.inner)
    }

    fn validate(&self) -> Vec<String> {
        model::validate(&self.inner)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.to_text()
            .lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim().to_owned())
            .ok_or_else(|| value_error(format!("unknown key {key}")))
    }

    /// Returns a copy with `key` set to `value`.
    fn set(&self, key: &str, value: &str) -> PyResult<Self> {
        Self::new(&format!("{}{key} = {value}\n", self.to_text()))
    }

    fn __repr__(&self) -> String {
        format!("Config(digest={:.12})", self.digest())
    }
}

#[pyfunction]
#[pyo3(signature = (reflectivity = 0.24, eta_te = 0.6925, eta_tm = 0.6925))]
fn visibility_bound(reflectivity: f64, eta_te: f64, eta_tm: f64) -> PyResult<f64> {
    let f = FacetParams {
        reflectivity,
        eta_te,
        eta_tm,
        ..FacetParams::default()
    };
    analytic::visibility_bound(&f).map_err(value_error)
}

#[pyfunction]
fn coherence_time(center_wavelength: f64, fwhm: f64) -> PyResult<f64> {
    analytic::coherence_time(center_wavelength, fwhm).map_err(value_error)
}

#[pyfunction]
fn hom_dip_rate(delta_t: f64, amplitude: f64, visibility: f64, center_wavelength: f64, fwhm: f64) -> f64 {
    analytic::hom_dip_rate(
        delta_t,
        &HomDipParams {
            amplitude,
            visibility,
            center_wavelength,
            fwhm,
        },
    )
}

/// (left, center, right, discarded) detection probabilities.
#[pyfunction]
fn franson_peak_weights(phase: f64, visibility: f64) -> (f64, f64, f64, f64) {
    let w = analytic::franson_peak_weights(phase, visibility);
    (w.left, w.center, w.right, w.discarded)
}

/// (S, σ_S, violation in σ or None).
#[pyfunction]
fn bell_from_visibility(visibility: f64, sigma_v: f64) -> (f64, f64, Option<f64>) {
    let b = analytic::bell_from_visibility(visibility, sigma_v);
    (b.s_value, b.sigma_s, b.violation_sigmas)
}

#[pyfunction]
fn predict_car(true_rate: f64, singles_a: f64, singles_b: f64, window: f64) -> PyResult<f64> {
    analytic::predict_car(true_rate, singles_a, singles_b, window).map_err(value_error)
}

#[pyfunction]
fn tuning_split(pump_detuning: f64, degeneracy_wavelength: f64) -> Option<(f64, f64)> {
    analytic::tuning_split(pump_detuning, degeneracy_wavelength)
}

/// Time-ordered detection events.
#[pyclass(name = "EventStream")]
struct PyEventStream {
    inner: mc::EventStream,
}

#[pymethods]
impl PyEventStream {
    #[getter]
    fn times(&self) -> Vec<u64> {
        self.inner.events.iter().map(|e| e.time).collect()
    }

    /// "A" or "B" per event.
    #[getter]
    fn channels(&self) -> Vec<String> {
        self.inner.events.iter().map(|e| e.channel.to_string()).collect()
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    fn count(&self, channel: &str) -> PyResult<usize> {
        match channel {
            "A" => Ok(self.inner.count(mc::Channel::A)),
            "B" => Ok(self.inner.count(mc::Channel::B)),
            _ => Err(value_error("channel must be \"A\" or \"B\"")),
        }
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(value_error)?;
        self.inner.write_csv(std::io::BufWriter::new(f)).map_err(value_error)
    }

    fn __len__(&self) -> usize {
        self.inner.events.len()
    }
}

#[pyfunction]
#[pyo3(signature = (config, seed = 1))]
fn simulate_pairs(config: &Config, seed: u64) -> PyResult<PyEventStream> {
    mc::simulate_pair_stream(&config.inner, seed)
        .map(|inner| PyEventStream { inner })
        .map_err(sim_error)
}

/// Coincidence histogram of t_B − t_A.
#[pyclass(name = "Histogram")]
struct PyHistogram {
    inner: tdc::Histogram,
}

#[pymethods]
impl PyHistogram {
    #[getter]
    fn bin_width(&self) -> f64 {
        self.inner.bin_width
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.inner.counts.clone()
    }

    #[getter]
    fn centers(&self) -> Vec<f64> {
        (0..self.inner.counts.len()).map(|i| self.inner.center(i)).collect()
    }

    /// (center, width) of the coincidence peak in ps.
    fn peak_window(&self) -> PyResult<(f64, f64)> {
        tdc::peak_window(&self.inner).map(|w| (w.center, w.width)).map_err(value_error)
    }

    /// (CAR, σ) for the window at `center` of `width` ps.
    fn car(&self, center: f64, width: f64) -> PyResult<(f64, f64)> {
        tdc::compute_car(&self.inner, &tdc::Window::new(center, width))
            .map(|c| (c.car, c.sigma))
            .map_err(value_error)
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(value_error)?;
        self.inner.write_csv(std::io::BufWriter::new(f)).map_err(value_error)
    }
}

#[pyfunction]
fn build_histogram(stream: &PyEventStream, bin_width: f64, range: f64) -> PyResult<PyHistogram> {
    tdc::build_histogram(&stream.inner, bin_width, range)
        .map(|inner| PyHistogram { inner })
        .map_err(value_error)
}

/// Fitted parameters with 1σ covariance errors.
#[pyclass(name = "FitResult")]
struct PyFitResult {
    inner: fitting::FitResult,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names.iter().map(|s| s.to_string()).collect()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    #[getter]
    fn sigmas(&self) -> Vec<f64> {
        self.inner.names.iter().map(|n| self.inner.sigma(n).unwrap()).collect()
    }

    #[getter]
    fn chi2(&self) -> f64 {
        self.inner.chi2
    }

    #[getter]
    fn dof(&self) -> usize {
        self.inner.dof
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    fn value(&self, name: &str) -> PyResult<f64> {
        self.inner.value(name).ok_or_else(|| value_error(format!("no parameter {name}")))
    }

    fn sigma(&self, name: &str) -> PyResult<f64> {
        self.inner.sigma(name).ok_or_else(|| value_error(format!("no parameter {name}")))
    }

    fn report(&self) -> String {
        self.inner.report_text()
    }

    fn report_csv(&self) -> String {
        self.inner.report_csv()
    }
}

fn points(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Vec<DataPoint>> {
    if xs.len() != ys.len() {
        return Err(value_error("x and y lengths differ"));
    }
    Ok(xs.into_iter().zip(ys).map(|(x, y)| DataPoint::new(x, y)).collect())
}

fn fit_error(e: fitting::FitError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Fits A(1 − V·sinc) to delays (ps) and counts.
#[pyfunction]
#[pyo3(signature = (delays, counts, center_wavelength = 1566.0))]
fn fit_hom(delays: Vec<f64>, counts: Vec<f64>, center_wavelength: f64) -> PyResult<PyFitResult> {
    fitting::fit_hom(&points(delays, counts)?, center_wavelength, None)
        .map(|inner| PyFitResult { inner })
        .map_err(fit_error)
}

/// Fits C(1 + V·cos(2φ + φ₀)) to phases (rad) and counts.
#[pyfunction]
fn fit_fringe(phases: Vec<f64>, counts: Vec<f64>) -> PyResult<PyFitResult> {
    fitting::fit_fringe(&points(phases, counts)?)
        .map(|inner| PyFitResult { inner })
        .map_err(fit_error)
}

/// Pair source run: stream size, CAR and its analytic prediction.
#[pyfunction]
#[pyo3(signature = (config, seed = 1))]
fn run_pairs<'py>(py: Python<'py>, config: &Config, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let run = pipeline::run_pairs(&config.inner, seed).map_err(pipeline_error)?;
    let d = PyDict::new(py);
    d.set_item("events", run.stream.events.len())?;
    d.set_item("car", run.car.map(|c| c.car))?;
    d.set_item("car_sigma", run.car.map(|c| c.sigma))?;
    d.set_item("car_oracle", run.car_oracle)?;
    d.set_item("window", run.window.map(|w| (w.center, w.width)))?;
    d.set_item("histogram", Py::new(py, PyHistogram { inner: run.histogram })?)?;
    Ok(d)
}

fn visibilities<'py>(py: Python<'py>, v: fitting::Visibilities) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("raw", v.raw_visibility())?;
    d.set_item("net", v.net_visibility())?;
    d.set_item("raw_fit", Py::new(py, PyFitResult { inner: v.raw })?)?;
    d.set_item("net_fit", Py::new(py, PyFitResult { inner: v.net })?)?;
    Ok(d)
}

/// HOM delay scan with raw and accidental-subtracted fits.
#[pyfunction]
#[pyo3(signature = (config, delays, pairs = 100_000, seed = 1, visibility = 1.0, window = 500.0))]
fn run_hom<'py>(
    py: Python<'py>,
    config: &Config,
    delays: Vec<f64>,
    pairs: u64,
    seed: u64,
    visibility: f64,
    window: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut hom = HomConfig::new(delays, visibility);
    hom.coincidence_window = window;
    let run = pipeline::run_hom(&config.inner, &hom, pairs, seed).map_err(pipeline_error)?;
    let fit = run.fit(&config.inner).map_err(fit_error)?;
    let d = visibilities(py, fit)?;
    let scan: Vec<(f64, u64)> = run.points.iter().map(|p| (p.control, p.coincidences)).collect();
    d.set_item("scan", scan)?;
    d.set_item("accidentals", run.accidentals)?;
    d.set_item("visibility_bound", run.visibility_bound)?;
    Ok(d)
}

/// Franson phase scan with fringe fits and the Bell parameter.
#[pyfunction]
#[pyo3(signature = (
    config, phases = 12, pairs = 5_000_000, seed = 1, visibility = 1.0, window = 800.0,
    path_imbalance = 2500.0, pump_coherence = 1e6
))]
#[allow(clippy::too_many_arguments)]
fn run_franson<'py>(
    py: Python<'py>,
    config: &Config,
    phases: usize,
    pairs: u64,
    seed: u64,
    visibility: f64,
    window: f64,
    path_imbalance: f64,
    pump_coherence: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let franson = FransonConfig {
        path_imbalance,
        intrinsic_visibility: visibility,
        pump_coherence,
        ..FransonConfig::default()
    };
    let run = pipeline::run_franson(&config.inner, &franson, &mc::fringe_phases(phases), pairs, seed, window)
        .map_err(pipeline_error)?;
    let fit = run.fit().map_err(fit_error)?;
    let rows: Vec<(f64, u64, u64, u64)> = run
        .rows
        .iter()
        .map(|r| (r.phase, r.peaks.left.counts, r.peaks.center.counts, r.peaks.right.counts))
        .collect();
    let d = visibilities(py, fit.visibilities)?;
    d.set_item("rows", rows)?;
    d.set_item("bell", (fit.bell.s_value, fit.bell.sigma_s, fit.bell.violation_sigmas))?;
    d.set_item("satellite_flatness_p", run.satellite_flatness.p_value)?;
    d.set_item("timescales_ok", run.timescales.passed)?;
    Ok(d)
}

#[pymodule]
fn pairlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<PyEventStream>()?;
    m.add_class::<PyHistogram>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(visibility_bound, m)?)?;
    m.add_function(wrap_pyfunction!(coherence_time, m)?)?;
    m.add_function(wrap_pyfunction!(hom_dip_rate, m)?)?;
    m.add_function(wrap_pyfunction!(franson_peak_weights, m)?)?;
    m.add_function(wrap_pyfunction!(bell_from_visibility, m)?)?;
    m.add_function(wrap_pyfunction!(predict_car, m)?)?;
    m.add_function(wrap_pyfunction!(tuning_split, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(build_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(fit_hom, m)?)?;
    m.add_function(wrap_pyfunction!(fit_fringe, m)?)?;
    m.add_function(wrap_pyfunction!(run_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(run_hom, m)?)?;
    m.add_function(wrap_pyfunction!(run_franson, m)?)?;
    Ok(())
}
