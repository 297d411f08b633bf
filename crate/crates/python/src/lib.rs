//! Python bindings. Arrays cross the boundary as lists of floats.

use std::path::PathBuf;

use lfe_design::baselines;
use lfe_design::designers;
use lfe_design::harness::{self, ExperimentConfig};
use lfe_design::ode::{exp_design_matrix, ModelName, OdeModel};
use lfe_design::rng::rng_from;
use lfe_design::stochastic::sample_prior;
use lfe_design::{risk, Error};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn model(name: &str) -> PyResult<OdeModel> {
    let n: ModelName = name.parse().map_err(py_err)?;
    Ok(OdeModel::by_name(n))
}

/// Canonical time grid of a model.
#[pyfunction]
fn grid(name: &str) -> PyResult<Vec<f64>> {
    Ok(model(name)?.grid.points().to_vec())
}

/// Noise-free observations of `q` on the canonical grid.
#[pyfunction]
fn solve(name: &str, q: Vec<f64>) -> PyResult<Vec<f64>> {
    model(name)?.solve(&q).map_err(py_err)
}

/// `n` prior draws, one list per draw.
#[pyfunction]
fn prior_samples(name: &str, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let m = model(name)?;
    let s = sample_prior(&m.prior, n, &mut rng_from(seed));
    Ok(s.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Best A-optimal design of the exponential model: `(indices, loss)`.
#[pyfunction]
#[pyo3(signature = (sparsity, sigma = 0.1))]
fn aopt_best(sparsity: usize, sigma: f64) -> PyResult<(Vec<usize>, f64)> {
    let a = exp_design_matrix(&OdeModel::exponential().grid);
    let (w, loss) = baselines::aopt_best(a.view(), sparsity, sigma).map_err(py_err)?;
    Ok((w.active_indices(), loss))
}

#[pyfunction]
fn soft_shrink(t: f64, rho: f64) -> f64 {
    designers::soft_shrink(t, rho)
}

/// One proximal design update `soft_shrink(w - mu*dw, rho)`.
#[pyfunction]
fn update_w_continuous(w: Vec<f64>, dw: Vec<f64>, mu: f64, rho: f64) -> PyResult<Vec<f64>> {
    if w.len() != dw.len() {
        return Err(PyValueError::new_err("w and dw differ in length"));
    }
    Ok(designers::update_w_continuous(&w, &dw, mu, rho))
}

/// Standard error of the mean with ddof 1.
#[pyfunction]
fn sem(values: Vec<f64>) -> f64 {
    risk::sem(&values)
}

/// Runs a TOML experiment config; returns the written file paths.
#[pyfunction]
#[pyo3(signature = (config_path, out = None, seed = None, desk_scale = false))]
fn run_experiment(
    py: Python<'_>,
    config_path: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    desk_scale: bool,
) -> PyResult<Vec<String>> {
    let mut cfg = ExperimentConfig::load(&config_path, desk_scale).map_err(py_err)?;
    if let Some(o) = out {
        cfg.out = o;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let art = py.detach(|| harness::run_experiment(&cfg)).map_err(py_err)?;
    Ok(art.files.iter().map(|p| p.display().to_string()).collect())
}

#[pymodule]
fn lfe_design_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(grid, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(prior_samples, m)?)?;
    m.add_function(wrap_pyfunction!(aopt_best, m)?)?;
    m.add_function(wrap_pyfunction!(soft_shrink, m)?)?;
    m.add_function(wrap_pyfunction!(update_w_continuous, m)?)?;
    m.add_function(wrap_pyfunction!(sem, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
