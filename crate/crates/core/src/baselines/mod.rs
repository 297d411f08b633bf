//! Conventional baselines: the A-optimality criterion for the linearised
//! exponential model, and greedy search over a quasi-Newton MAP estimator,
//! with forward/backward pass accounting.

mod greedy;
pub mod lbfgs;

use std::path::Path;
use std::time::Duration;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use greedy::{greedy_refine, greedy_search, GreedyConfig, GreedyResult, InnerEstimator, QuasiNewtonEstimator};
pub use lbfgs::{LbfgsConfig, LbfgsResult};

use crate::designers::DesignWeights;
use crate::error::{check_len, Error, Result};
use crate::ode::{ModelName, OdeModel};
use crate::stochastic::{NoiseKind, ParamPrior};

/// Inverse of a small dense matrix by Gauss-Jordan elimination with partial
/// pivoting. Pivots below `1e-12` times the largest diagonal entry are
/// treated as singular.
fn invert(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let p = m.len();
    let scale = (0..p).map(|i| m[i][i].abs()).fold(0.0, f64::max);
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| (i == j) as u8 as f64).collect()).collect();
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        if !(a[piv][col].abs() > 1e-12 * scale) {
            return Err(Error::Singular(format!("pivot {col} vanishes")));
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..p {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..p {
            if i != col {
                let f = a[i][col];
                if f != 0.0 {
                    for j in 0..p {
                        a[i][j] -= f * a[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Ok(inv)
}

fn weighted_normal_matrix(a: ArrayView2<'_, f64>, w: &[f64]) -> Vec<Vec<f64>> {
    let p = a.ncols();
    let mut m = vec![vec![0.0; p]; p];
    for (row, &wi) in a.rows().into_iter().zip(w) {
        let w2 = wi * wi;
        if w2 == 0.0 {
            continue;
        }
        for i in 0..p {
            for j in 0..p {
                m[i][j] += w2 * row[i] * row[j];
            }
        }
    }
    m
}

/// `sigma^2 * trace((A^T W^2 A)^{-1})` with `W = diag(w)`.
pub fn aopt_loss(a: ArrayView2<'_, f64>, w: &[f64], sigma: f64) -> Result<f64> {
    check_len("design weights", a.nrows(), w.len())?;
    let inv = invert(&weighted_normal_matrix(a, w))?;
    let trace: f64 = (0..inv.len()).map(|i| inv[i][i]).sum();
    Ok(sigma * sigma * trace)
}

fn trace_inverse(m: &[Vec<f64>]) -> Option<f64> {
    if m.len() == 2 {
        let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
        let det = a * d - b * b;
        if !(det > 1e-12 * a.max(d) * a.max(d)) {
            return None;
        }
        return Some((a + d) / det);
    }
    invert(m).ok().map(|inv| (0..inv.len()).map(|i| inv[i][i]).sum())
}

/// Exhaustive minimisation of [`aopt_loss`] over binary designs with exactly
/// `sparsity` active rows. Ties keep the lexicographically first design.
pub fn aopt_best(a: ArrayView2<'_, f64>, sparsity: usize, sigma: f64) -> Result<(DesignWeights, f64)> {
    let n = a.nrows();
    let p = a.ncols();
    if sparsity < p || sparsity > n {
        return Err(Error::Domain(format!(
            "sparsity must lie in [{p}, {n}] for a {n} x {p} design matrix, got {sparsity}"
        )));
    }
    let outer: Vec<Vec<Vec<f64>>> = a
        .rows()
        .into_iter()
        .map(|r| (0..p).map(|i| (0..p).map(|j| r[i] * r[j]).collect()).collect())
        .collect();
    let mut best = (f64::INFINITY, Vec::new());
    let mut chosen = Vec::with_capacity(sparsity);
    let zero = vec![vec![0.0; p]; p];
    enumerate(&outer, 0, sparsity, &zero, &mut chosen, &mut best);
    if !best.0.is_finite() {
        return Err(Error::Singular("every design of this size is rank deficient".into()));
    }
    let w = DesignWeights::binary_from_indices(n, &best.1)?;
    Ok((w, sigma * sigma * best.0))
}

fn enumerate(
    outer: &[Vec<Vec<f64>>],
    start: usize,
    left: usize,
    acc: &[Vec<f64>],
    chosen: &mut Vec<usize>,
    best: &mut (f64, Vec<usize>),
) {
    if left == 0 {
        if let Some(t) = trace_inverse(acc) {
            if t < best.0 {
                *best = (t, chosen.clone());
            }
        }
        return;
    }
    for i in start..=outer.len() - left {
        let next: Vec<Vec<f64>> = acc
            .iter()
            .zip(&outer[i])
            .map(|(ra, ro)| ra.iter().zip(ro).map(|(x, y)| x + y).collect())
            .collect();
        chosen.push(i);
        enumerate(outer, i + 1, left - 1, &next, chosen, best);
        chosen.pop();
    }
}

/// Cumulative forward and backward pass counts plus wall-clock samples per
/// (forward + backward) pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PassCounter {
    pub forward_passes: u64,
    pub backward_passes: u64,
    seconds_per_pass: Vec<f64>,
}

impl PassCounter {
    pub fn add(&mut self, forward: u64, backward: u64) {
        self.forward_passes += forward;
        self.backward_passes += backward;
    }

    /// Records the time spent on `pairs` forward+backward pairs.
    pub fn record_time(&mut self, elapsed: Duration, pairs: u64) {
        if pairs > 0 {
            self.seconds_per_pass.push(elapsed.as_secs_f64() / pairs as f64);
        }
    }

    pub fn merge(&mut self, other: &PassCounter) {
        self.add(other.forward_passes, other.backward_passes);
        self.seconds_per_pass.extend_from_slice(&other.seconds_per_pass);
    }

    /// Mean and sample standard deviation of the per-pass timings.
    pub fn timing(&self) -> (f64, f64) {
        let n = self.seconds_per_pass.len();
        if n == 0 {
            return (f64::NAN, f64::NAN);
        }
        let mean = self.seconds_per_pass.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (self.seconds_per_pass.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        (mean, std)
    }
}

/// Quasi-Newton MAP estimate for one noisy observation.
#[derive(Clone, Debug)]
pub struct MapEstimate {
    pub q: Vec<f64>,
    pub loss: f64,
    pub evaluations: usize,
    pub outer_values: Vec<f64>,
}

/// Smallest noise level used to scale the misfit, so noise-free data still
/// gives a well-conditioned objective.
pub const MIN_MISFIT_SIGMA: f64 = 0.01;

/// Weighted misfit plus `rho_reg` times the negative log prior, with its
/// gradient with respect to `q`.
///
/// Multiplicative noise: `0.5 * sum w_i^2 (F_i - d_i)^2 / (s^2 m)` where
/// `m` is the weighted mean of `d^2`. Additive noise on `log d`:
/// `0.5 * sum w_i^2 (log F_i - log d_i)^2 / s^2`. In both, `s` is the noise
/// level floored at [`MIN_MISFIT_SIGMA`].
pub fn map_objective(
    model: &OdeModel,
    w: &[f64],
    d: &[f64],
    sigma: f64,
    rho_reg: f64,
    q: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let p = model.param_dim();
    let (f, jac) = model.solve_with_jacobian(q)?;
    let s2 = sigma.max(MIN_MISFIT_SIGMA).powi(2);
    let mut value = 0.0;
    let mut grad = vec![0.0; p];
    match model.noise.kind {
        NoiseKind::MultiplicativeRelative => {
            let sw: f64 = w.iter().map(|v| v * v).sum();
            let sd: f64 = w.iter().zip(d).map(|(wi, di)| wi * wi * di * di).sum();
            if sw > 0.0 && sd > 0.0 {
                let scale = s2 * sd / sw;
                for (k, ((fk, dk), wk)) in f.iter().zip(d).zip(w).enumerate() {
                    let w2 = wk * wk;
                    if w2 == 0.0 {
                        continue;
                    }
                    let r = fk - dk;
                    value += 0.5 * w2 * r * r / scale;
                    for j in 0..p {
                        grad[j] += w2 * r * jac[k * p + j] / scale;
                    }
                }
            }
        }
        NoiseKind::AdditiveOnLog => {
            for (k, ((fk, dk), wk)) in f.iter().zip(d).zip(w).enumerate() {
                let w2 = wk * wk;
                if w2 == 0.0 {
                    continue;
                }
                if !(*fk > 0.0 && *dk > 0.0) {
                    return Err(Error::NonFinite("log misfit of a nonpositive value".into()));
                }
                let r = fk.ln() - dk.ln();
                value += 0.5 * w2 * r * r / s2;
                for j in 0..p {
                    grad[j] += w2 * r * jac[k * p + j] / fk / s2;
                }
            }
        }
    }
    if rho_reg != 0.0 {
        let (rv, rg) = model.prior.neg_log_density(q);
        value += rho_reg * rv;
        for (g, r) in grad.iter_mut().zip(rg) {
            *g += rho_reg * r;
        }
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("MAP objective".into()));
    }
    Ok((value, grad))
}

/// Minimises [`map_objective`] with L-BFGS, starting from `start` or the
/// prior mean. Lognormal components are optimised in log space.
pub fn quasi_newton_estimate(
    model: &OdeModel,
    w: &[f64],
    d: &[f64],
    sigma: f64,
    rho_reg: f64,
    cfg: &LbfgsConfig,
    start: Option<&[f64]>,
) -> Result<MapEstimate> {
    let n = model.n();
    check_len("design weights", n, w.len())?;
    check_len("data vector", n, d.len())?;
    let logs: Vec<bool> = model
        .prior
        .params
        .iter()
        .map(|p| matches!(p, ParamPrior::LogNormal { .. }))
        .collect();
    let q0 = start.map(<[f64]>::to_vec).unwrap_or_else(|| model.prior.means());
    check_len("starting point", model.param_dim(), q0.len())?;
    let to_q = |z: &[f64]| -> Vec<f64> {
        z.iter().zip(&logs).map(|(&v, &l)| if l { v.exp() } else { v }).collect()
    };
    let z0: Vec<f64> = q0
        .iter()
        .zip(&logs)
        .map(|(&v, &l)| if l { v.max(f64::MIN_POSITIVE).ln() } else { v })
        .collect();
    let r = lbfgs::minimize(&z0, cfg, |z| {
        let q = to_q(z);
        let (v, gq) = map_objective(model, w, d, sigma, rho_reg, &q)?;
        let gz = gq
            .iter()
            .zip(&q)
            .zip(&logs)
            .map(|((g, qi), &l)| if l { g * qi } else { *g })
            .collect();
        Ok((v, gz))
    })
    .map_err(crate::error::diverged_at(0))?;
    Ok(MapEstimate {
        q: to_q(&r.x),
        loss: r.value,
        evaluations: r.evaluations,
        outer_values: r.outer_values,
    })
}

/// Default prior-regularisation weight of the MAP estimator.
pub fn default_rho_reg(model: ModelName) -> f64 {
    match model {
        ModelName::ThreeTissue => 0.1,
        ModelName::PredatorPrey => 1.0,
        ModelName::Exponential => 0.0,
    }
}

/// One line of the baseline results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub method: String,
    pub model: String,
    pub sparsity: usize,
    pub l_q: f64,
    pub l_d: f64,
    pub forward_passes: u64,
    pub backward_passes: u64,
    pub seconds_per_pass_mean: f64,
    pub seconds_per_pass_std: f64,
}

pub fn write_baseline_rows(path: &Path, rows: &[BaselineRow]) -> Result<()> {
    crate::risk::write_rows(path, rows)
}
