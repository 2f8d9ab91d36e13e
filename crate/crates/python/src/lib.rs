//! Python bindings: scenarios, simulation, trajectory logs and the
//! stability analysis.

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mesoplatoon::config::{self, RunConfig};
use mesoplatoon::sim;
use mesoplatoon::stability::{self, AnalysisOptions, DerivativeSource, LyapunovConstants};
use mesoplatoon::{Error, Policy};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn policy(name: &str) -> PyResult<Policy> {
    name.parse::<Policy>()
        .map_err(|_| PyValueError::new_err(format!("unknown policy `{name}`; use `constant` or `variable`")))
}

fn constants_dict<'py>(py: Python<'py>, c: &LyapunovConstants) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("policy", c.policy.to_string())?;
    d.set_item("alpha_lower", c.alpha_lower)?;
    d.set_item("alpha_upper", c.alpha_upper)?;
    d.set_item("alpha", c.alpha)?;
    d.set_item("d", c.d)?;
    d.set_item("upsilon", c.upsilon)?;
    d.set_item("gamma_tilde", c.gamma_tilde)?;
    d.set_item("valid", c.certificate_valid())?;
    Ok(d)
}

/// A complete run description.
#[pyclass(name = "Scenario", module = "mesoplatoon")]
struct PyScenario {
    inner: RunConfig,
}

#[pymethods]
impl PyScenario {
    /// Four-phase reference experiment for `policy` (`constant` or `variable`).
    #[staticmethod]
    fn paper(policy_name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::reference(policy(policy_name)?),
        })
    }

    /// Reference experiment without leader speed steps or disturbances.
    #[staticmethod]
    fn disturbance_free(policy_name: &str) -> PyResult<Self> {
        let mut inner = RunConfig::reference(policy(policy_name)?);
        inner.scenario = sim::Scenario::disturbance_free(inner.scenario.controller.policy);
        Ok(Self { inner })
    }

    /// Parse configuration text.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        config::parse(text).map(|inner| Self { inner }).map_err(py_err)
    }

    /// Canonical configuration text.
    fn to_config(&self) -> String {
        config::serialize(&self.inner)
    }

    /// Set a numeric parameter by its configuration key, e.g.
    /// `controller.a` or `scenario.n_vehicles`.
    fn set(&mut self, key: &str, value: f64) -> PyResult<()> {
        let mut sc = self.inner.scenario.clone();
        config::set_scalar(&mut sc, key, value, None).map_err(py_err)?;
        sc.validate().map_err(py_err)?;
        self.inner.scenario = sc;
        Ok(())
    }

    /// Start every pair at the equilibrium.
    fn at_equilibrium(&mut self) {
        self.inner.scenario.ic = sim::InitialConditionSpec::at_equilibrium();
    }

    #[getter]
    fn policy(&self) -> String {
        self.inner.scenario.controller.policy.to_string()
    }

    #[getter]
    fn n_vehicles(&self) -> usize {
        self.inner.scenario.n_vehicles
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.scenario.dt
    }

    #[getter]
    fn t_end(&self) -> f64 {
        self.inner.scenario.t_end
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.scenario.ic.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.scenario.ic.seed = seed;
    }

    /// Certificate constants of the scenario's controller.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = stability::constants(&self.inner.scenario.controller).map_err(py_err)?;
        constants_dict(py, &c)
    }

    /// Integrate the scenario.
    fn simulate(&self) -> PyResult<PyTrajectory> {
        sim::simulate(&self.inner.scenario)
            .map(|log| PyTrajectory {
                log,
                analysis: self.inner.analysis.clone(),
            })
            .map_err(py_err)
    }

    /// Step-halving study; returns `t_start`, `steps`, `diffs`, `ratio`.
    #[pyo3(signature = (smooth_only = true, margin = 1.0))]
    fn step_halving<'py>(&self, py: Python<'py>, smooth_only: bool, margin: f64) -> PyResult<Bound<'py, PyDict>> {
        let r = sim::step_halving(&self.inner.scenario, smooth_only, margin).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("t_start", r.t_start)?;
        d.set_item("steps", r.steps.to_vec())?;
        d.set_item("diffs", r.diffs.to_vec())?;
        d.set_item("ratio", r.ratio())?;
        d.set_item("saturated", r.saturated)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let sc = &self.inner.scenario;
        format!(
            "Scenario(policy={}, n_vehicles={}, dt={}, t_end={}, seed={})",
            sc.controller.policy, sc.n_vehicles, sc.dt, sc.t_end, sc.ic.seed
        )
    }
}

/// Sampled closed-loop trajectory.
#[pyclass(name = "Trajectory", module = "mesoplatoon")]
struct PyTrajectory {
    log: sim::TrajectoryLog,
    analysis: AnalysisOptions,
}

impl PyTrajectory {
    fn series(&self, i: usize) -> PyResult<&sim::VehicleSeries> {
        self.log
            .vehicles
            .get(i)
            .ok_or_else(|| PyIndexError::new_err(format!("vehicle {i} out of range")))
    }
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn time(&self) -> Vec<f64> {
        self.log.time.clone()
    }

    #[getter]
    fn v_ref(&self) -> Vec<f64> {
        self.log.v_ref.clone()
    }

    #[getter]
    fn n_vehicles(&self) -> usize {
        self.log.n_vehicles()
    }

    fn __len__(&self) -> usize {
        self.log.len()
    }

    fn dp(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.series(i)?.dp.clone())
    }

    fn dv(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.series(i)?.dv.clone())
    }

    /// Controller states of vehicle `i`, one list per component.
    fn rho(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.series(i)?.rho.clone())
    }

    fn u_cmd(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.series(i)?.u_cmd.clone())
    }

    fn u_app(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.series(i)?.u_app.clone())
    }

    /// `|χ̃_i|` at every sample.
    fn error_norm(&self, i: usize) -> PyResult<Vec<f64>> {
        self.series(i)?;
        Ok((0..self.log.len()).map(|k| self.log.error_state(i, k).norm()).collect())
    }

    fn max_error_norm(&self) -> f64 {
        self.log.max_error_norm()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.log.write_csv(&mut buf).map_err(py_err)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Run the stability analysis; returns the report as a flat dict of
    /// strings, plus the text summary under `"text"`.
    #[pyo3(signature = (iss_source = None))]
    fn analyze<'py>(&self, py: Python<'py>, iss_source: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
        let mut opts = self.analysis.clone();
        if let Some(s) = iss_source {
            opts.iss_source = s.parse::<DerivativeSource>().map_err(py_err)?;
        }
        let r = stability::analyze(&self.log, &opts).map_err(py_err)?;
        let d = PyDict::new(py);
        for line in r.to_kv().lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                d.set_item(k, v)?;
            }
        }
        d.set_item("text", r.to_text())?;
        Ok(d)
    }
}

/// Certificate constants for the reference gains of `policy`.
#[pyfunction]
fn constants<'py>(py: Python<'py>, policy_name: &str) -> PyResult<Bound<'py, PyDict>> {
    let p = mesoplatoon::ControllerParams::paper(policy(policy_name)?);
    let c = stability::constants(&p).map_err(py_err)?;
    constants_dict(py, &c)
}

/// Certificate matrices for the reference gains of `policy`: diagonals,
/// entries where the printed form disagrees with the derived one, and the
/// spectral bounds.
#[pyfunction]
fn certificate<'py>(py: Python<'py>, policy_name: &str) -> PyResult<Bound<'py, PyDict>> {
    let p = mesoplatoon::ControllerParams::paper(policy(policy_name)?);
    let m = stability::certificate_matrices(&p).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("p_diagonal", m.p_diagonal())?;
    d.set_item("q_diagonal", m.q_diagonal())?;
    d.set_item("alpha_is_min_q_diagonal", m.alpha_is_min_q_diagonal)?;
    let disc: Vec<(String, usize, usize, f64, f64)> = m
        .discrepancies
        .iter()
        .map(|x| (x.matrix.to_string(), x.row, x.col, x.printed, x.derived))
        .collect();
    d.set_item("discrepancies", disc)?;
    d.set_item("spectral_alpha_lower", m.spectral.alpha_lower)?;
    d.set_item("spectral_alpha_upper", m.spectral.alpha_upper)?;
    d.set_item("spectral_alpha", m.spectral.alpha)?;
    Ok(d)
}

/// Simulate a scenario; shorthand for `scenario.simulate()`.
#[pyfunction]
fn simulate(scenario: &PyScenario) -> PyResult<PyTrajectory> {
    scenario.simulate()
}

#[pymodule]
#[pyo3(name = "mesoplatoon")]
fn mesoplatoon_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(certificate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
