//! Python bindings. Heavy calls release the GIL.
//!
//! Turvey-game entry points take plain series (lists of kWh per half-hour,
//! all the same length). Clustering and reports need a calendar and take
//! `LoadTrace` objects instead.

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime};
use lrmc::analysis::{build_report, ReportConfig, RunMetadata};
use lrmc::approx::{build_cluster_model, clustering_runs, fold_runs, shapley_sampling, MonteCarloConfig, SamplingConfig};
use lrmc::game::{shapley_exact, AllocationResult, CharacteristicFunction, ExactOptions, Players, TabulatedGame};
use lrmc::loads::{self, LoadOptions, LoadTrace, MissingPolicy, PopulationSpec};
use lrmc::tariffs::{self, Period, TariffSchedule};
use lrmc::turvey::{GameConfig, TurveyGame};
use lrmc::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

create_exception!(lrmc, CapacityError, PyValueError, "Problem too large for the requested method.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Capacity(_) => CapacityError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for lrmc::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(name = "GameConfig", module = "lrmc", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGameConfig {
    inner: GameConfig,
}

#[pymethods]
impl PyGameConfig {
    #[new]
    #[pyo3(signature = (
        growth_rate = 0.01,
        shape_beta = 1.5,
        emergency_factor = 1.5,
        augmentation_cost = 1e6,
        negligibility_threshold = 0.001,
        line_limit = None,
    ))]
    fn new(
        growth_rate: f64,
        shape_beta: f64,
        emergency_factor: f64,
        augmentation_cost: f64,
        negligibility_threshold: f64,
        line_limit: Option<f64>,
    ) -> PyResult<Self> {
        let inner = GameConfig {
            growth_rate,
            shape_beta,
            emergency_factor,
            augmentation_cost,
            negligibility_threshold,
            line_limit_override: line_limit,
        };
        inner.validate().or_py()?;
        Ok(PyGameConfig { inner })
    }

    #[getter]
    fn growth_rate(&self) -> f64 {
        self.inner.growth_rate
    }

    #[getter]
    fn shape_beta(&self) -> f64 {
        self.inner.shape_beta
    }

    #[getter]
    fn emergency_factor(&self) -> f64 {
        self.inner.emergency_factor
    }

    #[getter]
    fn augmentation_cost(&self) -> f64 {
        self.inner.augmentation_cost
    }

    #[getter]
    fn negligibility_threshold(&self) -> f64 {
        self.inner.negligibility_threshold
    }

    #[getter]
    fn line_limit(&self) -> Option<f64> {
        self.inner.line_limit_override
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

fn game_config(config: Option<PyRef<'_, PyGameConfig>>) -> GameConfig {
    config.map(|c| c.inner).unwrap_or_default()
}

#[pyclass(name = "LoadTrace", module = "lrmc", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLoadTrace {
    inner: LoadTrace,
}

#[pymethods]
impl PyLoadTrace {
    /// `start_date` is `YYYY-MM-DD`; `values` are one year of half-hourly kWh.
    #[new]
    #[pyo3(signature = (customer_id, start_date, values, has_pv = false))]
    fn new(customer_id: String, start_date: &str, values: Vec<f64>, has_pv: bool) -> PyResult<Self> {
        let start = NaiveDate::parse_from_str(start_date, "%Y-%m-%d")
            .map_err(|e| PyValueError::new_err(format!("start_date {start_date:?}: {e}")))?;
        Ok(PyLoadTrace { inner: LoadTrace::new(customer_id, start, values, has_pv).or_py()? })
    }

    #[getter]
    fn customer_id(&self) -> &str {
        &self.inner.customer_id
    }

    #[getter]
    fn start_date(&self) -> String {
        self.inner.start_date.to_string()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    #[getter]
    fn has_pv(&self) -> bool {
        self.inner.has_pv
    }

    fn total_energy(&self) -> f64 {
        self.inner.total_energy()
    }

    fn mean_daily_profile(&self) -> Vec<f64> {
        self.inner.mean_daily_profile().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.values.len()
    }

    fn __repr__(&self) -> String {
        format!("LoadTrace({:?}, start {}, {:.1} kWh)", self.inner.customer_id, self.inner.start_date, self.inner.total_energy())
    }
}

fn unwrap_traces(traces: Vec<PyRef<'_, PyLoadTrace>>) -> Vec<LoadTrace> {
    traces.iter().map(|t| t.inner.clone()).collect()
}

fn wrap_traces(traces: Vec<LoadTrace>) -> Vec<PyLoadTrace> {
    traces.into_iter().map(|inner| PyLoadTrace { inner }).collect()
}

#[pyclass(name = "Allocation", module = "lrmc", frozen)]
struct PyAllocation {
    inner: AllocationResult,
}

#[pymethods]
impl PyAllocation {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    /// Per-player values; `None` where no run valued the player.
    #[getter]
    fn values(&self) -> Vec<Option<f64>> {
        (0..self.inner.values.len()).map(|i| self.inner.value(i)).collect()
    }

    #[getter]
    fn coverage(&self) -> Vec<u32> {
        self.inner.coverage.clone()
    }

    #[getter]
    fn seed(&self) -> Option<u64> {
        self.inner.seed
    }

    #[getter]
    fn diagnostics(&self) -> BTreeMap<String, f64> {
        self.inner.diagnostics.clone()
    }

    #[getter]
    fn wall_time_ms(&self) -> Option<f64> {
        self.inner.wall_time.map(|d| d.as_secs_f64() * 1e3)
    }

    fn total(&self) -> f64 {
        self.inner.total()
    }

    fn __len__(&self) -> usize {
        self.inner.values.len()
    }

    fn __repr__(&self) -> String {
        format!("Allocation({}, {} players, total {:.3})", self.inner.method, self.inner.values.len(), self.inner.total())
    }
}

fn wrap(inner: AllocationResult) -> PyAllocation {
    PyAllocation { inner }
}

#[pyfunction]
#[pyo3(signature = (path, zero_fill = false, with_pv = false))]
fn load_csv(path: &str, zero_fill: bool, with_pv: bool) -> PyResult<Vec<PyLoadTrace>> {
    let missing = if zero_fill { MissingPolicy::ZeroFill } else { MissingPolicy::Reject };
    Ok(wrap_traces(loads::load_csv(path, &LoadOptions { missing, with_pv }).or_py()?))
}

#[pyfunction]
fn write_csv(path: &str, traces: Vec<PyRef<'_, PyLoadTrace>>) -> PyResult<()> {
    loads::write_csv(path, &unwrap_traces(traces)).or_py()
}

/// `kind` is `residential` or `two-archetypes`.
#[pyfunction]
#[pyo3(signature = (kind, customers, seed, pv_amplitude = 0.0))]
fn synthetic(kind: &str, customers: usize, seed: u64, pv_amplitude: f64) -> PyResult<Vec<PyLoadTrace>> {
    let mut spec = match kind {
        "residential" => PopulationSpec::residential(customers),
        "two-archetypes" => PopulationSpec::two_archetypes(customers),
        _ => return Err(PyValueError::new_err(format!("unknown population kind {kind:?}"))),
    };
    spec.pv_amplitude = pv_amplitude;
    Ok(wrap_traces(loads::generate_synthetic(&spec, seed).or_py()?.traces))
}

fn with_game<T: Send>(
    py: Python<'_>,
    series: &[Vec<f64>],
    config: GameConfig,
    f: impl FnOnce(&TurveyGame<'_>) -> lrmc::Result<T> + Send,
) -> PyResult<T> {
    py.detach(|| {
        let slices = series.iter().map(Vec::as_slice).collect();
        f(&TurveyGame::new(slices, config)?)
    })
    .or_py()
}

/// Worth of every coalition, indexed by membership bitmask.
#[pyfunction]
#[pyo3(signature = (series, config = None))]
fn worth_table(py: Python<'_>, series: Vec<Vec<f64>>, config: Option<PyRef<'_, PyGameConfig>>) -> PyResult<Vec<f64>> {
    with_game(py, &series, game_config(config), |g| g.worth_table())
}

/// Exact Shapley values of a game given as a worth table of length 2**n.
#[pyfunction]
#[pyo3(signature = (worths, labels = None))]
fn shapley_exact_table(py: Python<'_>, worths: Vec<f64>, labels: Option<Vec<String>>) -> PyResult<PyAllocation> {
    let n = worths.len().trailing_zeros() as usize;
    if worths.len() != 1 << n {
        return Err(PyValueError::new_err("worth table length must be a power of two"));
    }
    let players = match labels {
        Some(l) => Players::new(l),
        None => Players::anonymous(n),
    }
    .or_py()?;
    let game = TabulatedGame::new(n, worths).or_py()?;
    py.detach(|| shapley_exact(&players, &game, &ExactOptions::default())).or_py().map(wrap)
}

#[pyfunction]
#[pyo3(signature = (series, config = None))]
fn turvey_exact(py: Python<'_>, series: Vec<Vec<f64>>, config: Option<PyRef<'_, PyGameConfig>>) -> PyResult<PyAllocation> {
    let players = Players::anonymous(series.len()).or_py()?;
    with_game(py, &series, game_config(config), |g| shapley_exact(&players, g, &ExactOptions::default())).map(wrap)
}

#[pyfunction]
#[pyo3(signature = (series, seed, config = None, margin = 0.2, pilot_size = 50, stratum_trigger = 10_000))]
fn turvey_sampling(
    py: Python<'_>,
    series: Vec<Vec<f64>>,
    seed: u64,
    config: Option<PyRef<'_, PyGameConfig>>,
    margin: f64,
    pilot_size: usize,
    stratum_trigger: u64,
) -> PyResult<PyAllocation> {
    let players = Players::anonymous(series.len()).or_py()?;
    let cfg = SamplingConfig { pilot_size, margin, stratum_trigger, seed, ..Default::default() };
    with_game(py, &series, game_config(config), |g| shapley_sampling(&players, g, &cfg)).map(wrap)
}

#[pyfunction]
#[pyo3(signature = (traces, seed, clusters = 5, runs = 100, subset_size = None, config = None))]
fn turvey_clustering(
    py: Python<'_>,
    traces: Vec<PyRef<'_, PyLoadTrace>>,
    seed: u64,
    clusters: usize,
    runs: usize,
    subset_size: Option<usize>,
    config: Option<PyRef<'_, PyGameConfig>>,
) -> PyResult<PyAllocation> {
    let traces = unwrap_traces(traces);
    let cfg = game_config(config);
    let mc = MonteCarloConfig { runs, subset_size, seed };
    py.detach(|| {
        let model = build_cluster_model(&traces, clusters, seed)?;
        let runs = clustering_runs(&traces, &model, &cfg, &mc)?;
        let mut result = fold_runs(traces.len(), &runs);
        result.seed = Some(seed);
        Ok(result)
    })
    .or_py()
    .map(wrap)
}

/// Cluster index of each trace under k-means on mean daily profiles.
#[pyfunction]
fn cluster_assignments(py: Python<'_>, traces: Vec<PyRef<'_, PyLoadTrace>>, clusters: usize, seed: u64) -> PyResult<Vec<usize>> {
    let traces = unwrap_traces(traces);
    py.detach(|| build_cluster_model(&traces, clusters, seed)).or_py().map(|m| m.assignment)
}

/// Tariff period of an ISO timestamp: `peak`, `shoulder` or `off-peak`.
#[pyfunction]
fn classify_period(timestamp: &str) -> PyResult<&'static str> {
    let t = NaiveDateTime::parse_from_str(timestamp, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(timestamp, "%Y-%m-%d %H:%M:%S"))
        .map_err(|e| PyValueError::new_err(format!("timestamp {timestamp:?}: {e}")))?;
    Ok(match tariffs::classify_period(t).or_py()? {
        Period::Peak => "peak",
        Period::Shoulder => "shoulder",
        Period::OffPeak => "off-peak",
    })
}

fn schedule(name: &str) -> PyResult<TariffSchedule> {
    match name {
        "flat" => Ok(TariffSchedule::flat()),
        "time-of-use" | "tou" => Ok(TariffSchedule::time_of_use()),
        _ => Err(PyValueError::new_err(format!("unknown tariff {name:?}; expected flat or time-of-use"))),
    }
}

/// Yearly network revenue in dollars, fixed charges included.
#[pyfunction]
#[pyo3(signature = (trace, tariff = "flat"))]
fn revenue(trace: PyRef<'_, PyLoadTrace>, tariff: &str) -> PyResult<f64> {
    Ok(tariffs::revenue(&trace.inner, &schedule(tariff)?))
}

/// Method comparison around a Shapley allocation, as a JSON string.
#[pyfunction]
fn compare(py: Python<'_>, traces: Vec<PyRef<'_, PyLoadTrace>>, allocation: PyRef<'_, PyAllocation>) -> PyResult<String> {
    let traces = unwrap_traces(traces);
    let sv = allocation.inner.clone();
    py.detach(|| {
        build_report(&traces, vec![sv], None, &ReportConfig::default(), RunMetadata::default())?.to_json()
    })
    .or_py()
}

#[pymodule]
#[pyo3(name = "lrmc")]
fn lrmc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGameConfig>()?;
    m.add_class::<PyLoadTrace>()?;
    m.add_class::<PyAllocation>()?;
    m.add("CapacityError", m.py().get_type::<CapacityError>())?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(write_csv, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(worth_table, m)?)?;
    m.add_function(wrap_pyfunction!(shapley_exact_table, m)?)?;
    m.add_function(wrap_pyfunction!(turvey_exact, m)?)?;
    m.add_function(wrap_pyfunction!(turvey_sampling, m)?)?;
    m.add_function(wrap_pyfunction!(turvey_clustering, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_assignments, m)?)?;
    m.add_function(wrap_pyfunction!(classify_period, m)?)?;
    m.add_function(wrap_pyfunction!(revenue, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
