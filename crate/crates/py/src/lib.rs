//! Python bindings for `coagfrag`.
//!
//! Structured results (reports, statistics, scenario documents) cross the
//! boundary as plain Python dicts and lists.

use coagfrag::cli::{audit_scenario, sweep as run_sweep};
use coagfrag::diagnostics::{bound_elem1, bound_elem2, elem1_scan, elem2_scan, weighted_moment_integral};
use coagfrag::duality::{estimate_kmq, heat_mr_ratio, Forcing, MRProbe};
use coagfrag::kernels::{
    frag_moment_deficit, superadditivity_constant, FragmentationRates, PowerLawCoagulation,
    PowerLawDaughterDistribution,
};
use coagfrag::oracle::{constant_kernel_exact, ode_reference, HomogeneousState};
use coagfrag::scenario::ScenarioConfig;
use coagfrag::solver::{run as run_scenario, RunResult};
use coagfrag::{Error, Grid, KernelSet, TruncationMode};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(
    coagfrag_py,
    StiffnessError,
    PyRuntimeError,
    "Adaptive step fell below the step-size floor."
);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Stiffness { .. } => StiffnessError::new_err(e.to_string()),
        Error::Domain(_) | Error::Config(_) | Error::NonFinite(_) | Error::Json(_) | Error::MissingMoment(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_mode(mode: &str) -> PyResult<TruncationMode> {
    match mode {
        "conservative" => Ok(TruncationMode::Conservative),
        "full_loss" => Ok(TruncationMode::FullLoss),
        other => Err(PyValueError::new_err(format!(
            "mode must be 'conservative' or 'full_loss', got {other:?}"
        ))),
    }
}

/// Cell-centred grid on an interval or a rectangle.
#[pyclass(name = "Grid", module = "coagfrag_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: Grid,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(lengths: Vec<f64>, cells: Vec<usize>) -> PyResult<Self> {
        Grid::new(&lengths, &cells).map(|inner| Self { inner }).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn lengths(&self) -> Vec<f64> {
        self.inner.lengths().to_vec()
    }

    #[getter]
    fn cells(&self) -> Vec<usize> {
        self.inner.cells().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn spacing(&self, axis: usize) -> PyResult<f64> {
        if axis >= self.inner.dim() {
            return Err(PyValueError::new_err(format!("axis {axis} out of range")));
        }
        Ok(self.inner.spacing(axis))
    }

    fn cell_volume(&self) -> f64 {
        self.inner.cell_volume()
    }

    fn measure(&self) -> f64 {
        self.inner.measure()
    }

    fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len())
            .map(|k| self.inner.center(k)[..self.inner.dim()].to_vec())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(lengths={:?}, cells={:?})",
            self.inner.lengths(),
            self.inner.cells()
        )
    }
}

/// Coagulation kernel, fragmentation rates and daughter distribution.
#[pyclass(name = "Kernels", module = "coagfrag_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyKernels {
    inner: KernelSet,
}

#[pymethods]
impl PyKernels {
    /// `a_ij = C_Q (i^α j^β + i^β j^α)`, `B_i = C_F i^γ` and `β_ij ∝ j^ν`.
    #[staticmethod]
    #[pyo3(signature = (c_q, alpha, beta, c_f=0.0, gamma=0.0, nu=0.0))]
    fn power_law(c_q: f64, alpha: f64, beta: f64, c_f: f64, gamma: f64, nu: f64) -> PyResult<Self> {
        let coag = PowerLawCoagulation::new(c_q, alpha, beta).map_err(py_err)?;
        let dist = PowerLawDaughterDistribution::new(nu).map_err(py_err)?;
        if !(c_f >= 0.0 && c_f.is_finite() && gamma.is_finite()) {
            return Err(PyValueError::new_err("C_F must be finite and >= 0, gamma finite"));
        }
        Ok(Self {
            inner: KernelSet::power_law(coag, FragmentationRates { c_f, gamma }, dist),
        })
    }

    /// Parses the `kernels` section of a scenario document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(|inner| Self { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("kernel sets serialize")
    }

    /// Structural checks at truncation size `n`, as a list of dicts.
    fn validate<'py>(&self, py: Python<'py>, n: usize) -> PyResult<Bound<'py, PyAny>> {
        let report = coagfrag::kernels::validate(&self.inner, n).map_err(py_err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Kernels({})", self.to_json())
    }
}

/// A validated scenario document.
#[pyclass(name = "Scenario", module = "coagfrag_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = ScenarioConfig::from_json(text).map_err(py_err)?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        coagfrag::cli::load_scenario(std::path::Path::new(path))
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn t_final(&self) -> f64 {
        self.inner.t_final()
    }

    #[getter]
    fn kernels(&self) -> PyKernels {
        PyKernels {
            inner: self.inner.kernels.clone(),
        }
    }

    fn grid(&self) -> PyResult<PyGrid> {
        self.inner.grid().map(|inner| PyGrid { inner }).map_err(py_err)
    }

    /// Copy with a different truncation size.
    fn with_n(&self, n: usize) -> PyResult<Self> {
        let inner = self.inner.with_n(n);
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn sample_times(&self) -> Vec<f64> {
        self.inner.sample_times()
    }

    fn __repr__(&self) -> String {
        format!("Scenario(n={}, T={})", self.inner.n(), self.inner.t_final())
    }
}

/// Output of a completed run.
#[pyclass(name = "RunResult", module = "coagfrag_py", frozen, skip_from_py_object)]
struct PyRunResult {
    inner: RunResult,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn imex(&self) -> bool {
        self.inner.imex
    }

    fn times(&self) -> Vec<f64> {
        self.inner.series.times()
    }

    fn masses(&self) -> Vec<f64> {
        self.inner.series.masses()
    }

    fn gel_fractions(&self) -> Vec<f64> {
        self.inner.series.gel_fractions()
    }

    fn moment_orders(&self) -> Vec<f64> {
        self.inner.series.orders.clone()
    }

    /// `∫_Ω ρ_k` at every sample time.
    fn integrals(&self, k: f64) -> PyResult<Vec<f64>> {
        self.inner.series.integrals(k).map_err(py_err)
    }

    fn moments_csv(&self) -> String {
        self.inner.series.to_csv()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.stats)
    }

    /// `∫_0^T t^m/m! ∫_Ω ρ_{k+m(γ-1)}`.
    fn weighted_moment_integral(&self, k: f64, gamma: f64, m: u32) -> PyResult<f64> {
        weighted_moment_integral(&self.inner, k, gamma, m).map_err(py_err)
    }

    /// Final concentrations as `[species][cell]`.
    fn final_state(&self) -> Vec<Vec<f64>> {
        let s = &self.inner.final_state;
        (1..=s.n()).map(|i| s.species(i).to_vec()).collect()
    }

    fn snapshot_times(&self) -> Vec<f64> {
        self.inner.snapshots.iter().map(|s| s.time).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(n={}, samples={}, accepted={})",
            self.inner.n(),
            self.inner.series.samples.len(),
            self.inner.stats.accepted
        )
    }
}

/// Integrates a scenario. Releases the GIL while running.
#[pyfunction]
fn run(py: Python<'_>, scenario: &PyScenario) -> PyResult<PyRunResult> {
    let cfg = scenario.inner.clone();
    py.detach(move || run_scenario(&cfg))
        .map(|inner| PyRunResult { inner })
        .map_err(py_err)
}

/// Runs a scenario at several truncation sizes; returns the gel report and
/// refinement diagnostics as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, levels=Vec::new(), delta=0.05, p=2.0))]
fn sweep<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    levels: Vec<usize>,
    delta: f64,
    p: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = scenario.inner.clone();
    let out = py.detach(move || run_sweep(&cfg, &levels, delta, p)).map_err(py_err)?;
    to_py(py, &serde_json::json!({"gel_report": out.gel, "reports": out.reports}))
}

/// Every audit applicable to the scenario, as a list of check dicts.
#[pyfunction]
#[pyo3(signature = (scenario, samples=10_000, seed=0))]
fn audit<'py>(py: Python<'py>, scenario: &PyScenario, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = scenario.inner.clone();
    let report = py.detach(move || audit_scenario(&cfg, samples, seed)).map_err(py_err)?;
    to_py(py, &report)
}

/// Homogeneous reference trajectory from the dense-table ODE integrator.
#[pyfunction]
#[pyo3(signature = (kernels, initial, times, mode="conservative", tol=1e-10))]
fn reference_trajectory(
    py: Python<'_>,
    kernels: &PyKernels,
    initial: Vec<f64>,
    times: Vec<f64>,
    mode: &str,
    tol: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let mode = parse_mode(mode)?;
    let state = HomogeneousState::new(initial).map_err(py_err)?;
    let ks = kernels.inner.clone();
    py.detach(move || ode_reference(&ks, mode, &state, &times, tol))
        .map(|t| t.states)
        .map_err(py_err)
}

/// Largest of `trials` random maximal-regularity probes on a unit grid.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (m=1.0, q=2.0, trials=100, seed=0, cells=256, dim=1, t_final=1.0))]
fn estimate_mr_constant<'py>(
    py: Python<'py>,
    m: f64,
    q: f64,
    trials: usize,
    seed: u64,
    cells: usize,
    dim: usize,
    t_final: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let grid = match dim {
        1 => Grid::interval(1.0, cells),
        2 => Grid::rectangle(1.0, 1.0, cells, cells),
        d => return Err(PyValueError::new_err(format!("dim must be 1 or 2, got {d}"))),
    }
    .map_err(py_err)?;
    let est = py
        .detach(move || estimate_kmq(m, q, trials, seed, &grid, t_final))
        .map_err(py_err)?;
    to_py(py, &est)
}

/// Maximal-regularity ratio of the constant forcing `f ≡ value`.
#[pyfunction]
#[pyo3(signature = (grid, m=1.0, q=2.0, t_final=1.0, value=1.0))]
fn constant_forcing_ratio(grid: &PyGrid, m: f64, q: f64, t_final: f64, value: f64) -> PyResult<f64> {
    heat_mr_ratio(&MRProbe::new(m, q, grid.inner, t_final, Forcing::constant(value))).map_err(py_err)
}

#[pyfunction(name = "superadditivity_constant")]
#[pyo3(signature = (l, i_max=2000))]
fn py_superadditivity_constant(l: f64, i_max: usize) -> PyResult<f64> {
    superadditivity_constant(l, i_max).map_err(py_err)
}

#[pyfunction(name = "frag_moment_deficit")]
fn py_frag_moment_deficit(nu: f64, i: usize, l: f64) -> PyResult<f64> {
    let dist = PowerLawDaughterDistribution::new(nu).map_err(py_err)?;
    frag_moment_deficit(&dist, i, l).map_err(py_err)
}

#[pyfunction(name = "constant_kernel_exact")]
fn py_constant_kernel_exact(i: usize, t: f64) -> PyResult<f64> {
    constant_kernel_exact(i, t).map_err(py_err)
}

#[pyfunction(name = "bound_elem1")]
fn py_bound_elem1(c: f64, theta: f64) -> PyResult<f64> {
    bound_elem1(c, theta).map_err(py_err)
}

#[pyfunction(name = "bound_elem2")]
fn py_bound_elem2(c1: f64, c2: f64, theta: f64, m: u32, t_final: f64) -> PyResult<f64> {
    bound_elem2(c1, c2, theta, m, t_final).map_err(py_err)
}

/// Randomized counterexample searches for both elementary bounds.
#[pyfunction]
#[pyo3(signature = (samples=10_000, seed=0))]
fn elementary_scans<'py>(py: Python<'py>, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let (e1, e2) = py.detach(move || (elem1_scan(samples, seed), elem2_scan((samples / 10).max(1), seed + 1)));
    to_py(py, &serde_json::json!({"elem1": e1, "elem2": e2}))
}

#[pymodule]
fn coagfrag_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("StiffnessError", m.py().get_type::<StiffnessError>())?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyKernels>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(reference_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mr_constant, m)?)?;
    m.add_function(wrap_pyfunction!(constant_forcing_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(py_superadditivity_constant, m)?)?;
    m.add_function(wrap_pyfunction!(py_frag_moment_deficit, m)?)?;
    m.add_function(wrap_pyfunction!(py_constant_kernel_exact, m)?)?;
    m.add_function(wrap_pyfunction!(py_bound_elem1, m)?)?;
    m.add_function(wrap_pyfunction!(py_bound_elem2, m)?)?;
    m.add_function(wrap_pyfunction!(elementary_scans, m)?)?;
    Ok(())
}
