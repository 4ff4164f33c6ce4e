//! Python bindings: configuration, stepping simulations, diagnostics and the
//! property suites.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spray_core::config::SimConfig;
use spray_core::diagnostics::{blowup_time_bound, moment_lemma_check, DiagnosticsRecord, RadialDensity};
use spray_core::scenario::{run_scenario, sweep_r2, Simulation};
use spray_core::suites::{gronwall_suite, lemma_suite, projection_suite};
use spray_core::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Parameter(_) | Error::Config(_) | Error::InvalidGrid(_) | Error::InvalidField(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Converts any serializable value into plain Python objects via JSON.
fn to_python<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn record_dict<'py>(py: Python<'py>, r: &DiagnosticsRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in DiagnosticsRecord::COLUMNS.iter().zip(r.values()) {
        d.set_item(*k, v)?;
    }
    Ok(d)
}

/// Run configuration; keys match the command-line flags.
#[pyclass(name = "SimConfig", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: SimConfig,
}

#[pymethods]
impl PyConfig {
    /// `SimConfig(text=None, **overrides)`: defaults, then `key = value` text,
    /// then keyword overrides (values are converted with `str`).
    #[new]
    #[pyo3(signature = (text = None, **overrides))]
    fn new(text: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = SimConfig::default();
        if let Some(t) = text {
            inner.apply_text(t).map_err(to_py_err)?;
        }
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                let value = v.str()?.to_string();
                inner.set(&key, &value).map_err(to_py_err)?;
            }
        }
        inner.validate().map_err(to_py_err)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        Ok(PyConfig { inner: SimConfig::from_file(std::path::Path::new(path)).map_err(to_py_err)? })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(to_py_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn __repr__(&self) -> String {
        format!("SimConfig({})", self.inner.to_text().trim().replace('\n', ", "))
    }
}

/// A coupled fluid/spray state that can be advanced step by step.
#[pyclass(name = "Simulation", unsendable)]
struct PySimulation {
    inner: Simulation,
}

#[pymethods]
impl PySimulation {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        Ok(PySimulation { inner: Simulation::new(config.inner.clone()).map_err(to_py_err)? })
    }

    /// Advances `count` steps, recording diagnostics after each.
    #[pyo3(signature = (count = 1))]
    fn step(&mut self, count: usize) -> PyResult<()> {
        for _ in 0..count {
            self.inner.step().map_err(to_py_err)?;
            let rec = self.inner.record().map_err(to_py_err)?;
            self.inner.records.push(rec);
        }
        Ok(())
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.fluid.t
    }

    #[getter]
    fn particle_count(&self) -> usize {
        self.inner.cloud.len()
    }

    /// Diagnostics of the current state as a dict.
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        record_dict(py, &self.inner.record().map_err(to_py_err)?)
    }

    /// All recorded diagnostics, one dict per step.
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.records.iter().map(|r| record_dict(py, r)).collect()
    }

    /// Velocity components, each a flat row-major list.
    fn velocity(&self) -> Vec<Vec<f64>> {
        self.inner.fluid.u.components.clone()
    }

    /// Added density `ρ`, flat row-major.
    fn density(&self) -> Vec<f64> {
        self.inner.density.rho.values.clone()
    }

    /// Particle weights.
    fn weights(&self) -> Vec<f64> {
        self.inner.cloud.w.clone()
    }
}

/// Runs a full scenario and returns its summary.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let out = run_scenario(config.inner.clone()).map_err(to_py_err)?;
    to_python(py, &out.summary)
}

/// Bidisperse runs over `r2_list` compared with the limit system.
#[pyfunction]
fn sweep<'py>(py: Python<'py>, config: &PyConfig, r2_list: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_python(py, &sweep_r2(&config.inner, &r2_list).map_err(to_py_err)?)
}

#[pyfunction]
#[pyo3(signature = (dim = 3, n = 32, fields = 100, seed = 1))]
fn project_test<'py>(py: Python<'py>, dim: usize, n: usize, fields: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    to_python(py, &projection_suite(dim, n, fields, seed).map_err(to_py_err)?)
}

#[pyfunction]
#[pyo3(signature = (dim = 3, cases = 1000, seed = 1))]
fn lemma_test<'py>(py: Python<'py>, dim: usize, cases: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    to_python(py, &lemma_suite(dim, cases, seed).map_err(to_py_err)?)
}

#[pyfunction]
#[pyo3(signature = (cases = 50, seed = 1))]
fn gronwall_test<'py>(py: Python<'py>, cases: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    to_python(py, &gronwall_suite(cases, seed).map_err(to_py_err)?)
}

/// `(T_bound, T_numeric)` for `z' = A z^(γ+1)`, `z(0) = A`.
#[pyfunction]
fn blowup_time(a: f64, gamma: f64) -> PyResult<(f64, f64)> {
    let r = blowup_time_bound(a, gamma).map_err(to_py_err)?;
    Ok((r.t_bound, r.t_numeric))
}

/// `(lhs, rhs)` of the velocity-moment inequality for a piecewise-constant
/// radial density with outer shell radii `radii`.
#[pyfunction]
fn moment_inequality(dim: usize, radii: Vec<f64>, values: Vec<f64>, alpha: f64, gamma: f64) -> PyResult<(f64, f64)> {
    let h = RadialDensity::new(dim, radii, values).map_err(to_py_err)?;
    let c = moment_lemma_check(&h, alpha, gamma).map_err(to_py_err)?;
    Ok((c.lhs, c.rhs))
}

#[pymodule]
fn spray_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(project_test, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_test, m)?)?;
    m.add_function(wrap_pyfunction!(gronwall_test, m)?)?;
    m.add_function(wrap_pyfunction!(blowup_time, m)?)?;
    m.add_function(wrap_pyfunction!(moment_inequality, m)?)?;
    Ok(())
}
