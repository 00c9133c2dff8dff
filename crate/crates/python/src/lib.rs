use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;

use facts_core::config::RunConfig;
use facts_core::market::Formulation;
use facts_core::matpower::{import_matpower as import_text, ImportOptions};
use facts_core::network::{btheta_flows, compute_ptdf, parse_case, NetworkCase, WindFarm};
use facts_core::pipeline::{self, ErrorClass, Method, PipelineError, PlanRun};
use facts_core::screening::ScreeningReport;

create_exception!(facts_planner, SolverError, PyException);
create_exception!(facts_planner, GapNotClosed, PyException);

fn to_py(e: PipelineError) -> PyErr {
    match e.class {
        ErrorClass::Config => PyValueError::new_err(e.to_string()),
        ErrorClass::Solver => SolverError::new_err(e.to_string()),
        ErrorClass::Io => PyIOError::new_err(e.to_string()),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A validated network case.
#[pyclass(name = "Case", frozen)]
struct PyCase {
    inner: NetworkCase,
}

#[pymethods]
impl PyCase {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        parse_case(&path).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        NetworkCase::from_toml_str(text, "<string>").map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn n_buses(&self) -> usize {
        self.inner.n_buses()
    }

    #[getter]
    fn n_branches(&self) -> usize {
        self.inner.n_branches()
    }

    #[getter]
    fn branch_ids(&self) -> Vec<usize> {
        self.inner.branches.iter().map(|b| b.id).collect()
    }

    #[getter]
    fn bus_ids(&self) -> Vec<usize> {
        self.inner.buses.iter().map(|b| b.id).collect()
    }

    /// Shift factors, one row per monitored branch (all branches by default),
    /// one column per bus.
    #[pyo3(signature = (monitored=None))]
    fn ptdf(&self, monitored: Option<Vec<usize>>) -> PyResult<Vec<Vec<f64>>> {
        let idx = match monitored {
            Some(ids) => Some(
                ids.iter()
                    .map(|&id| self.inner.branch_idx(id).ok_or_else(|| value_err(format!("unknown branch {id}"))))
                    .collect::<PyResult<Vec<usize>>>()?,
            ),
            None => None,
        };
        compute_ptdf(&self.inner, idx.as_deref()).map(|h| h.values).map_err(value_err)
    }

    /// Branch flows (MW) for balanced bus injections (MW), by angles.
    fn flows(&self, injections: Vec<f64>) -> PyResult<Vec<f64>> {
        btheta_flows(&self.inner, &injections).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Case({} buses, {} branches)", self.inner.n_buses(), self.inner.n_branches())
    }
}

/// A run configuration with paths resolved.
#[pyclass(name = "Config", frozen)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    #[pyo3(signature = (path, overrides=Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        pipeline::load_config(&path, &overrides).map(|inner| Self { inner }).map_err(to_py)
    }

    #[getter]
    fn budget(&self) -> (usize, usize) {
        (self.inner.budget.vsr, self.inner.budget.pst)
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.paths.output_dir.clone()
    }

    fn load_case(&self) -> PyResult<PyCase> {
        pipeline::load_instance(&self.inner).map(|i| PyCase { inner: i.case }).map_err(to_py)
    }
}

#[pyclass(name = "DcopfResult", frozen, get_all)]
struct PyDcopf {
    scenario: usize,
    objective: f64,
    dispatch: Vec<f64>,
    wind_used: Vec<f64>,
    spill: Vec<f64>,
    shed: Vec<f64>,
    /// (branch id, flow) pairs.
    flows: Vec<(usize, f64)>,
}

#[pyclass(name = "Screening", frozen)]
struct PyScreening {
    inner: ScreeningReport,
}

#[pymethods]
impl PyScreening {
    #[getter]
    fn vsr_candidates(&self) -> Vec<usize> {
        self.inner.vsr_candidates.clone()
    }

    #[getter]
    fn pst_candidates(&self) -> Vec<usize> {
        self.inner.pst_candidates.clone()
    }

    #[getter]
    fn ranking(&self) -> Vec<(usize, f64)> {
        self.inner.weighted.clone()
    }

    #[getter]
    fn monitored(&self) -> Vec<usize> {
        self.inner.monitored.iter().map(|m| m.branch_id).collect()
    }

    #[getter]
    fn directions(&self) -> Vec<(usize, String)> {
        self.inner.directions.iter().map(|(id, d)| (*id, d.label().to_string())).collect()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }
}

/// A solved placement run.
#[pyclass(name = "Plan", frozen)]
struct PyPlan {
    cfg: RunConfig,
    run: PlanRun,
}

#[pymethods]
impl PyPlan {
    #[getter]
    fn objective(&self) -> f64 {
        self.run.report.objective
    }

    #[getter]
    fn x(&self) -> Vec<u8> {
        self.run.report.x.clone()
    }

    /// (kind, branch id, annualized cost) per installed device.
    #[getter]
    fn placements(&self) -> Vec<(String, usize, f64)> {
        self.run.report.placements.iter().map(|p| (p.kind.to_string(), p.branch_id, p.annual_cost)).collect()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.run.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.run.report.meta.iterations
    }

    #[getter]
    fn bounds(&self) -> (f64, f64, f64) {
        let m = &self.run.report.meta;
        (m.lb, m.ub, m.gap)
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.run.report.meta.warnings.clone()
    }

    fn report_text(&self) -> String {
        self.run.report.to_text()
    }

    fn report_json(&self) -> String {
        self.run.report.to_json()
    }

    /// Write the report files; returns their paths.
    #[pyo3(signature = (dir, dump_lp=false))]
    fn write(&self, dir: PathBuf, dump_lp: bool) -> PyResult<Vec<PathBuf>> {
        pipeline::write_plan_outputs(&self.cfg, &self.run, &dir, dump_lp).map_err(to_py)
    }
}

#[pyfunction]
#[pyo3(signature = (config, brute_force=false, check_gap=true))]
fn plan(py: Python<'_>, config: &PyConfig, brute_force: bool, check_gap: bool) -> PyResult<PyPlan> {
    let method = if brute_force { Method::BruteForce } else { Method::Ccg };
    let cfg = config.inner.clone();
    let run = py.detach(|| pipeline::run_plan(&cfg, method)).map_err(to_py)?;
    if check_gap && !run.converged {
        return Err(GapNotClosed::new_err(format!("gap {:.3e} after {} iterations", run.report.meta.gap, run.report.meta.iterations)));
    }
    Ok(PyPlan { cfg, run })
}

#[pyfunction]
fn screen(py: Python<'_>, config: &PyConfig) -> PyResult<PyScreening> {
    let cfg = &config.inner;
    py.detach(|| pipeline::run_screen(cfg)).map(|(_, inner)| PyScreening { inner }).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (config, scenario, formulation=None))]
fn dcopf(py: Python<'_>, config: &PyConfig, scenario: usize, formulation: Option<&str>) -> PyResult<PyDcopf> {
    let cfg = &config.inner;
    let f: Formulation = match formulation {
        Some(s) => s.parse().map_err(value_err)?,
        None => cfg.algorithm.formulation,
    };
    let (_, _, o) = py.detach(|| pipeline::run_dcopf(cfg, scenario, f)).map_err(to_py)?;
    Ok(PyDcopf {
        scenario: o.scenario_id,
        objective: o.objective,
        dispatch: o.dispatch,
        wind_used: o.wind_used,
        spill: o.spill,
        shed: o.shed,
        flows: o.flows.iter().map(|&(id, _, eff)| (id, eff)).collect(),
    })
}

/// Convert MATPOWER text; `wind` holds (bus, capacity, intensity scale).
#[pyfunction]
#[pyo3(signature = (text, wind=Vec::new(), peak_scale=1.0, limit_scale=1.0, default_rating=9900.0, default_cost=0.0))]
fn import_matpower(
    text: &str,
    wind: Vec<(usize, f64, f64)>,
    peak_scale: f64,
    limit_scale: f64,
    default_rating: f64,
    default_cost: f64,
) -> PyResult<PyCase> {
    let wind_farms = wind
        .into_iter()
        .enumerate()
        .map(|(i, (bus, capacity, intensity_scale))| WindFarm { id: i + 1, bus, capacity, intensity_scale })
        .collect();
    let opts = ImportOptions { peak_scale, limit_scale, default_rating, default_cost, wind_farms };
    import_text(text, &opts).map(|inner| PyCase { inner }).map_err(value_err)
}

#[pymodule]
fn facts_planner(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCase>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDcopf>()?;
    m.add_class::<PyScreening>()?;
    m.add_class::<PyPlan>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(screen, m)?)?;
    m.add_function(wrap_pyfunction!(dcopf, m)?)?;
    m.add_function(wrap_pyfunction!(import_matpower, m)?)?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add("GapNotClosed", m.py().get_type::<GapNotClosed>())?;
    Ok(())
}
