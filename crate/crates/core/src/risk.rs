//! Normalised risks and the multi-set evaluation protocol.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::net::NetworkParams;
use crate::ode::{OdeModel, TimeGrid};
use crate::rng::{derive, rng_from};
use crate::stochastic::{generate_batch, TrainingBatch};

pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_N_SETS: usize = 50;
pub const DEFAULT_SET_SIZE: usize = 3500;

/// `||q_hat - q||^2 / ||q||^2` for one sample.
pub fn nmse_params(q_hat: &[f64], q: &[f64]) -> Result<f64> {
    check_len("estimate", q.len(), q_hat.len())?;
    let den: f64 = q.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::Domain("parameter-risk reference has zero norm".into()));
    }
    let num: f64 = q_hat.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num / den)
}

/// Batch mean of [`nmse_params`] over rows.
pub fn nmse_params_batch(q_hat: ArrayView2<'_, f64>, q: ArrayView2<'_, f64>) -> Result<f64> {
    check_len("estimate rows", q.nrows(), q_hat.nrows())?;
    let mut acc = 0.0;
    for (a, b) in q_hat.rows().into_iter().zip(q.rows()) {
        acc += nmse_params(&a.to_vec(), &b.to_vec())?;
    }
    Ok(acc / q.nrows().max(1) as f64)
}

/// Composite trapezoid rule on a possibly non-uniform grid.
pub fn trapz_variable(f: &[f64], grid: &TimeGrid) -> Result<f64> {
    check_len("integrand", grid.len(), f.len())?;
    Ok(grid
        .points()
        .windows(2)
        .zip(f.windows(2))
        .map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
        .sum())
}

/// Data risk with precomputed trapezoid weights.
pub fn nmse_data_weighted(d_hat: &[f64], d: &[f64], weights: &[f64]) -> Result<f64> {
    check_len("estimated data", d.len(), d_hat.len())?;
    check_len("quadrature weights", d.len(), weights.len())?;
    let den: f64 = d.iter().zip(weights).map(|(v, w)| w * v * v).sum();
    if !(den > 0.0) {
        return Err(Error::Domain("data-risk reference integrates to zero".into()));
    }
    let num: f64 = d_hat
        .iter()
        .zip(d)
        .zip(weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum();
    Ok(num / den)
}

/// `int |d_hat - d|^2 dt / int |d|^2 dt` with the trapezoid rule on `grid`.
pub fn nmse_data(d_hat: &[f64], d: &[f64], grid: &TimeGrid) -> Result<f64> {
    nmse_data_weighted(d_hat, d, &grid.trapezoid_weights())
}

pub fn total_risk(l_q: f64, l_d: f64, gamma: f64) -> f64 {
    l_q + gamma * l_d
}

/// Standard error of the mean: sample standard deviation (n - 1 in the
/// denominator) over `sqrt(n)`. Zero for fewer than two values.
pub fn sem(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub l_q: f64,
    pub sem_l_q: f64,
    pub l_d: f64,
    pub l_t: f64,
    pub sem_l_t: f64,
    pub gamma: f64,
    pub n_sets: usize,
    pub set_size: usize,
    /// Always true: the data risk compares the whole simulated curve.
    pub full_grid_data_risk: bool,
}

impl RiskReport {
    /// Aggregates per-set mean risks.
    pub fn from_sets(set_l_q: &[f64], set_l_d: &[f64], gamma: f64, set_size: usize) -> Self {
        let set_l_t: Vec<f64> = set_l_q
            .iter()
            .zip(set_l_d)
            .map(|(&q, &d)| total_risk(q, d, gamma))
            .collect();
        Self {
            l_q: mean(set_l_q),
            sem_l_q: sem(set_l_q),
            l_d: mean(set_l_d),
            l_t: mean(&set_l_t),
            sem_l_t: sem(&set_l_t),
            gamma,
            n_sets: set_l_q.len(),
            set_size,
            full_grid_data_risk: true,
        }
    }

    pub fn total_samples(&self) -> usize {
        self.n_sets * self.set_size
    }
}

/// Anything that maps a batch of noisy observations to parameter estimates.
pub trait Estimator {
    fn estimate(&self, batch: &TrainingBatch) -> Result<Array2<f64>>;
}

/// A trained network with fixed design weights.
pub struct NetworkEstimator<'a> {
    pub net: &'a NetworkParams,
    pub w: &'a [f64],
}

impl Estimator for NetworkEstimator<'_> {
    fn estimate(&self, batch: &TrainingBatch) -> Result<Array2<f64>> {
        self.net.forward_batch(self.w, batch.d_noisy.view(), &batch.sigma)
    }
}

/// Returns the true parameters.
pub struct Oracle;

impl Estimator for Oracle {
    fn estimate(&self, batch: &TrainingBatch) -> Result<Array2<f64>> {
        Ok(batch.q.clone())
    }
}

/// Always returns a fixed vector, e.g. the prior mean.
pub struct ConstantEstimator(pub Vec<f64>);

impl Estimator for ConstantEstimator {
    fn estimate(&self, batch: &TrainingBatch) -> Result<Array2<f64>> {
        let p = self.0.len();
        Ok(Array2::from_shape_fn((batch.len(), p), |(_, j)| self.0[j]))
    }
}

/// Mean parameter and data risk of `q_hat` on one batch. The simulated data
/// uses the estimate projected onto the admissible domain.
pub fn batch_risks(model: &OdeModel, batch: &TrainingBatch, q_hat: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    check_len("estimate rows", batch.len(), q_hat.nrows())?;
    let weights = model.grid.trapezoid_weights();
    let l_q = nmse_params_batch(q_hat, batch.q.view())?;
    let mut l_d = 0.0;
    for (qh, d) in q_hat.rows().into_iter().zip(batch.d_noisy.rows()) {
        let qp = model.project(&qh.to_vec());
        let d_hat = model.solve(&qp)?;
        l_d += nmse_data_weighted(&d_hat, &d.to_vec(), &weights)?;
    }
    Ok((l_q, l_d / batch.len().max(1) as f64))
}

/// Draws `n_sets` independent batches of `set_size` samples and aggregates
/// the per-set mean risks. Set `k` uses a stream derived from `(seed, k)`.
pub fn evaluate(
    estimator: &impl Estimator,
    model: &OdeModel,
    gamma: f64,
    n_sets: usize,
    set_size: usize,
    seed: u64,
) -> Result<RiskReport> {
    let mut set_l_q = Vec::with_capacity(n_sets);
    let mut set_l_d = Vec::with_capacity(n_sets);
    for k in 0..n_sets {
        let mut rng = rng_from(derive(seed, k as u64));
        let batch = generate_batch(model, set_size, &mut rng)?;
        let q_hat = estimator.estimate(&batch)?;
        let (l_q, l_d) = batch_risks(model, &batch, q_hat.view())?;
        if !(l_q.is_finite() && l_d.is_finite()) {
            return Err(Error::NonFinite(format!("risk on evaluation set {k}")));
        }
        set_l_q.push(l_q);
        set_l_d.push(l_d);
    }
    Ok(RiskReport::from_sets(&set_l_q, &set_l_d, gamma, set_size))
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub method: String,
    pub sparsity: usize,
    pub gamma: f64,
    pub l_q: f64,
    pub sem_l_q: f64,
    pub l_d: f64,
    #[serde(rename = "l_T")]
    pub l_t: f64,
    #[serde(rename = "sem_l_T")]
    pub sem_l_t: f64,
    pub n_sets: usize,
    pub set_size: usize,
    pub seed: u64,
}

impl ReportRow {
    pub fn new(model: &str, method: &str, sparsity: usize, seed: u64, r: &RiskReport) -> Self {
        Self {
            model: model.to_string(),
            method: method.to_string(),
            sparsity,
            gamma: r.gamma,
            l_q: r.l_q,
            sem_l_q: r.sem_l_q,
            l_d: r.l_d,
            l_t: r.l_t,
            sem_l_t: r.sem_l_t,
            n_sets: r.n_sets,
            set_size: r.set_size,
            seed,
        }
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for r in rd.deserialize() {
        out.push(r?);
    }
    Ok(out)
}
