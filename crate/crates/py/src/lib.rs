//! Python bindings: parameter classes, the equilibrium object, Monte Carlo
//! estimates and the parameter sweeps. Reports come back as plain dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use repstop::analysis;
use repstop::error::Error;
use repstop::model;
use repstop::principal;
use repstop::sim::{self, Noise, SimConfig};

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(o) => {
            let dict = PyDict::new(py);
            for (k, x) in o {
                dict.set_item(k, to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn report<'py, T: Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(x).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Primitives of the game.
#[pyclass(name = "GameParams", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyGameParams {
    r1: f64,
    r2: f64,
    lambda: f64,
    psi: f64,
    u: f64,
    c: f64,
    w_ni: f64,
    w_i: f64,
}

impl From<model::GameParams> for PyGameParams {
    fn from(g: model::GameParams) -> Self {
        let model::GameParams { r1, r2, lambda, psi, u, c, w_ni, w_i } = g;
        PyGameParams { r1, r2, lambda, psi, u, c, w_ni, w_i }
    }
}

impl PyGameParams {
    fn core(&self) -> model::GameParams {
        let PyGameParams { r1, r2, lambda, psi, u, c, w_ni, w_i } = *self;
        model::GameParams { r1, r2, lambda, psi, u, c, w_ni, w_i }
    }
}

#[pymethods]
impl PyGameParams {
    #[new]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (r1, r2, lambda_, psi, u, c, w_ni, w_i))]
    fn new(r1: f64, r2: f64, lambda_: f64, psi: f64, u: f64, c: f64, w_ni: f64, w_i: f64) -> PyResult<Self> {
        let g = model::GameParams { r1, r2, lambda: lambda_, psi, u, c, w_ni, w_i };
        g.validate().map_err(py_err)?;
        Ok(g.into())
    }

    /// Reference parameter set.
    #[staticmethod]
    fn figure() -> Self {
        model::GameParams::figure().into()
    }

    fn validate(&self) -> PyResult<()> {
        self.core().validate().map_err(py_err)
    }

    /// `(p**, p_H)`
    fn myopic_cutoffs(&self) -> (f64, f64) {
        model::myopic_cutoffs(&self.core())
    }

    fn termination_payoff(&self, p: f64) -> PyResult<f64> {
        model::termination_payoff(p, &self.core()).map_err(py_err)
    }

    /// `(W_under, W_over)` at belief `p`.
    fn benchmark_values(&self, p: f64) -> PyResult<(f64, f64)> {
        model::benchmark_values(p, &self.core()).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "GameParams(r1={}, r2={}, lambda_={}, psi={}, u={}, c={}, w_ni={}, w_i={})",
            self.r1, self.r2, self.lambda, self.psi, self.u, self.c, self.w_ni, self.w_i
        )
    }
}

/// Solver settings.
#[pyclass(name = "Numerics", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyNumerics {
    p_min: f64,
    root_tol: f64,
    max_bisect: usize,
    grid_n: usize,
    max_policy_rounds: usize,
    fixed_point_tol: f64,
    seed: u64,
}

impl From<model::Numerics> for PyNumerics {
    fn from(n: model::Numerics) -> Self {
        let model::Numerics { p_min, root_tol, max_bisect, grid_n, max_policy_rounds, fixed_point_tol, seed } = n;
        PyNumerics { p_min, root_tol, max_bisect, grid_n, max_policy_rounds, fixed_point_tol, seed }
    }
}

impl PyNumerics {
    fn core(&self) -> model::Numerics {
        let PyNumerics { p_min, root_tol, max_bisect, grid_n, max_policy_rounds, fixed_point_tol, seed } = *self;
        model::Numerics { p_min, root_tol, max_bisect, grid_n, max_policy_rounds, fixed_point_tol, seed }
    }
}

#[pymethods]
impl PyNumerics {
    #[new]
    #[pyo3(signature = (grid_n=None, seed=None))]
    fn new(grid_n: Option<usize>, seed: Option<u64>) -> PyResult<Self> {
        let d = model::Numerics::default();
        let n = model::Numerics {
            grid_n: grid_n.unwrap_or(d.grid_n),
            seed: seed.unwrap_or(d.seed),
            ..d
        };
        n.validate().map_err(py_err)?;
        Ok(n.into())
    }
}

fn numerics_or_default(n: Option<&PyNumerics>) -> model::Numerics {
    n.map(PyNumerics::core).unwrap_or_default()
}

/// Solved equilibrium: cutoff, agent policy and both value functions.
#[pyclass(name = "Equilibrium", frozen)]
struct PyEquilibrium {
    inner: principal::Equilibrium,
}

#[pymethods]
impl PyEquilibrium {
    #[getter]
    fn p_star(&self) -> f64 {
        self.inner.p_star
    }

    #[getter]
    fn p_l(&self) -> Option<f64> {
        self.inner.p_l
    }

    #[getter]
    fn p_r(&self) -> Option<f64> {
        self.inner.p_r
    }

    #[getter]
    fn regime(&self) -> String {
        match serde_json::to_value(self.inner.regime()) {
            Ok(Value::String(s)) => s,
            _ => format!("{:?}", self.inner.regime()),
        }
    }

    #[getter]
    fn params(&self) -> PyGameParams {
        self.inner.params.into()
    }

    /// Mimicking intensity `a(p)`.
    fn policy(&self, p: f64) -> f64 {
        self.inner.policy(p)
    }

    fn agent_value(&self, p: f64) -> f64 {
        self.inner.agent_value(p)
    }

    fn principal_value(&self, p: f64) -> f64 {
        self.inner.principal_value(p)
    }

    fn expected_performance(&self, p: f64) -> PyResult<f64> {
        analysis::expected_performance(&self.inner, p).map_err(py_err)
    }

    /// Principal value on the solver grid as `(beliefs, values)`.
    fn principal_curve(&self) -> (Vec<f64>, Vec<f64>) {
        (self.inner.w.states.clone(), self.inner.w.values.clone())
    }

    fn ep_shape<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        report(py, &analysis::classify_ep_shape(&self.inner))
    }

    /// Monte Carlo estimates of both values at `p0`, with the martingale check.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (p0, n_paths=10_000, dt=2e-3, horizon=40.0, seed=20240917, noise="independent", t_probe=1.0, eps=0.1))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        p0: f64,
        n_paths: usize,
        dt: f64,
        horizon: f64,
        seed: u64,
        noise: &str,
        t_probe: f64,
        eps: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let noise = match noise {
            "independent" => Noise::Independent,
            "coupled" => Noise::Coupled,
            other => return Err(PyValueError::new_err(format!("unknown noise {other:?}"))),
        };
        let cfg = SimConfig {
            dt,
            horizon,
            n_paths,
            seed,
            p0,
            noise,
            ..SimConfig::default()
        };
        let rep = py
            .detach(|| sim::estimate_values(&self.inner, &cfg, t_probe, eps))
            .map_err(py_err)?;
        report(py, &rep)
    }

    fn __repr__(&self) -> String {
        format!("Equilibrium(p_star={}, regime={})", self.inner.p_star, self.regime())
    }
}

#[pyfunction]
#[pyo3(signature = (params, numerics=None))]
fn solve_equilibrium(py: Python<'_>, params: &PyGameParams, numerics: Option<&PyNumerics>) -> PyResult<PyEquilibrium> {
    let (g, n) = (params.core(), numerics_or_default(numerics));
    let inner = py.detach(|| principal::solve_equilibrium(&g, &n)).map_err(py_err)?;
    Ok(PyEquilibrium { inner })
}

/// One row per signal-to-noise value.
#[pyfunction]
#[pyo3(signature = (params, psi_list, probe_p=0.3, numerics=None))]
fn sweep_psi<'py>(
    py: Python<'py>,
    params: &PyGameParams,
    psi_list: Vec<f64>,
    probe_p: f64,
    numerics: Option<&PyNumerics>,
) -> PyResult<Bound<'py, PyAny>> {
    let (g, n) = (params.core(), numerics_or_default(numerics));
    let rows = py
        .detach(|| analysis::sweep_psi(&g, &n, &psi_list, probe_p))
        .map_err(py_err)?;
    report(py, &rows)
}

/// One row per patience scale; scales must be strictly decreasing.
#[pyfunction]
#[pyo3(signature = (params, scale_list, chi=1.0, probes=(0.3, 0.7), numerics=None))]
fn sweep_patience<'py>(
    py: Python<'py>,
    params: &PyGameParams,
    scale_list: Vec<f64>,
    chi: f64,
    probes: (f64, f64),
    numerics: Option<&PyNumerics>,
) -> PyResult<Bound<'py, PyAny>> {
    let (g, n) = (params.core(), numerics_or_default(numerics));
    let rows = py
        .detach(|| analysis::sweep_patience(&g, &n, &scale_list, chi, probes))
        .map_err(py_err)?;
    report(py, &rows)
}

#[pymodule]
fn pyrepstop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGameParams>()?;
    m.add_class::<PyNumerics>()?;
    m.add_class::<PyEquilibrium>()?;
    m.add_function(wrap_pyfunction!(solve_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_psi, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_patience, m)?)?;
    Ok(())
}
