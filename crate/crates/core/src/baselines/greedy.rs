use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{invert, quasi_newton_estimate, LbfgsConfig, PassCounter, MIN_MISFIT_SIGMA};
use crate::designers::DesignWeights;
use crate::error::{Error, Result};
use crate::ode::OdeModel;
use crate::optim::{Adam, AdamConfig};
use crate::risk::nmse_params_batch;
use crate::rng::{derive, derive_named, rng_from};
use crate::stochastic::{generate_batch, NoiseKind, ParamPrior, TrainingBatch};

/// Estimator used inside each greedy step.
pub trait InnerEstimator {
    /// Parameter estimates (one row per sample) from the data selected by `w`.
    fn estimate_batch(&self, model: &OdeModel, w: &[f64], batch: &TrainingBatch) -> Result<Array2<f64>>;

    /// Forward and backward passes charged for one batched estimate.
    fn passes(&self) -> (u64, u64);
}

/// The MAP estimator run per sample. A batched estimate is charged the full
/// L-BFGS evaluation budget, one forward and one backward pass each.
#[derive(Clone, Debug)]
pub struct QuasiNewtonEstimator {
    pub rho_reg: f64,
    pub lbfgs: LbfgsConfig,
}

impl InnerEstimator for QuasiNewtonEstimator {
    fn estimate_batch(&self, model: &OdeModel, w: &[f64], batch: &TrainingBatch) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((batch.len(), model.param_dim()));
        for i in 0..batch.len() {
            let d = batch.d_noisy.row(i).to_vec();
            let est = quasi_newton_estimate(model, w, &d, batch.sigma[i], self.rho_reg, &self.lbfgs, None)?;
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&est.q));
        }
        Ok(out)
    }

    fn passes(&self) -> (u64, u64) {
        let b = self.lbfgs.budget() as u64;
        (b, b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyConfig {
    pub batch_size: usize,
    pub rho_reg: Option<f64>,
    pub lbfgs: LbfgsConfig,
    /// Adam iterations refining the binary result as continuous weights.
    pub refine_iters: usize,
    pub refine_lr: f64,
    pub seed: u64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            batch_size: 3500,
            rho_reg: None,
            lbfgs: LbfgsConfig::default(),
            refine_iters: 0,
            refine_lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GreedyResult {
    pub w: DesignWeights,
    /// Indices in the order they were activated.
    pub order: Vec<usize>,
    /// Winning parameter risk of each step.
    pub step_losses: Vec<f64>,
    pub counter: PassCounter,
}

/// Builds a binary design one point at a time. At each step every inactive
/// point is tried on a shared freshly sampled batch; the one with the lowest
/// parameter risk is activated, ties going to the earliest time.
pub fn greedy_search(
    model: &OdeModel,
    sparsity: usize,
    cfg: &GreedyConfig,
    inner: &impl InnerEstimator,
) -> Result<GreedyResult> {
    let n = model.n();
    if sparsity > n {
        return Err(Error::config(format!("sparsity {sparsity} exceeds the grid size {n}")));
    }
    let base = derive_named(cfg.seed, "greedy");
    let mut active = vec![false; n];
    let mut order = Vec::with_capacity(sparsity);
    let mut step_losses = Vec::with_capacity(sparsity);
    let mut counter = PassCounter::default();
    let (fwd, bwd) = inner.passes();

    for step in 0..sparsity {
        let mut rng = rng_from(derive(base, step as u64));
        let batch = generate_batch(model, cfg.batch_size, &mut rng)?;
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|&i| !active[i]) {
            let mut w: Vec<f64> = active.iter().map(|&a| a as u8 as f64).collect();
            w[i] = 1.0;
            let start = Instant::now();
            let q_hat = inner.estimate_batch(model, &w, &batch)?;
            counter.add(fwd, bwd);
            counter.record_time(start.elapsed(), fwd.max(1));
            let loss = nmse_params_batch(q_hat.view(), batch.q.view())?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("greedy candidate {i} at step {step}")));
            }
            if best.is_none_or(|(b, _)| loss < b) {
                best = Some((loss, i));
            }
        }
        let Some((loss, i)) = best else { break };
        active[i] = true;
        order.push(i);
        step_losses.push(loss);
    }
    let mut idx = order.clone();
    idx.sort_unstable();
    Ok(GreedyResult {
        w: DesignWeights::binary_from_indices(n, &idx)?,
        order,
        step_losses,
        counter,
    })
}

/// Continuous refinement of a design under the MAP estimator. The gradient
/// of the parameter risk with respect to `w` uses the implicit-function
/// theorem at each estimate with a Gauss-Newton Hessian; zero weights stay
/// zero.
pub fn greedy_refine(
    model: &OdeModel,
    w: &DesignWeights,
    qn: &QuasiNewtonEstimator,
    cfg: &GreedyConfig,
    counter: &mut PassCounter,
) -> Result<DesignWeights> {
    let n = model.n();
    let p = model.param_dim();
    let mut wc = w.values.clone();
    let mut adam = Adam::new(n, AdamConfig { lr: cfg.refine_lr, ..Default::default() });
    let base = derive_named(cfg.seed, "greedy-refine");
    let (fwd, bwd) = qn.passes();
    for it in 0..cfg.refine_iters {
        let mut rng = rng_from(derive(base, it as u64));
        let batch = generate_batch(model, cfg.batch_size, &mut rng)?;
        let q_hat = qn.estimate_batch(model, &wc, &batch)?;
        counter.add(fwd, bwd);
        let m = batch.len() as f64;
        let mut grad = vec![0.0; n];
        for s in 0..batch.len() {
            let qh = q_hat.row(s).to_vec();
            let q = batch.q.row(s);
            let den: f64 = q.iter().map(|v| v * v).sum();
            let g_q: Vec<f64> = qh.iter().zip(q.iter()).map(|(a, b)| 2.0 * (a - b) / den / m).collect();
            let d = batch.d_noisy.row(s).to_vec();
            let (f, jac) = model.solve_with_jacobian(&qh)?;
            let s2 = batch.sigma[s].max(MIN_MISFIT_SIGMA).powi(2);
            // residuals and their Jacobian rows in the misfit's own scale
            let (res, scale): (Vec<(f64, Vec<f64>)>, f64) = match model.noise.kind {
                NoiseKind::MultiplicativeRelative => {
                    let sw: f64 = wc.iter().map(|v| v * v).sum();
                    let sd: f64 = wc.iter().zip(&d).map(|(a, b)| a * a * b * b).sum();
                    let r = (0..n).map(|k| (f[k] - d[k], jac[k * p..(k + 1) * p].to_vec())).collect();
                    (r, s2 * sd / sw)
                }
                NoiseKind::AdditiveOnLog => {
                    let r = (0..n)
                        .map(|k| {
                            let row = jac[k * p..(k + 1) * p].iter().map(|v| v / f[k]).collect();
                            (f[k].ln() - d[k].ln(), row)
                        })
                        .collect();
                    (r, s2)
                }
            };
            let mut h = vec![vec![0.0; p]; p];
            for (k, (_, row)) in res.iter().enumerate() {
                let w2 = wc[k] * wc[k];
                if w2 == 0.0 {
                    continue;
                }
                for a in 0..p {
                    for b in 0..p {
                        h[a][b] += w2 * row[a] * row[b] / scale;
                    }
                }
            }
            for (j, prior) in model.prior.params.iter().enumerate() {
                if let ParamPrior::LogNormal { mean, std } = *prior {
                    let (_, sl) = crate::stochastic::lognormal_params(mean, std)?;
                    if sl > 0.0 {
                        h[j][j] += qn.rho_reg / (sl * sl * qh[j] * qh[j]);
                    }
                }
            }
            let Ok(hinv) = invert(&h) else { continue };
            let v: Vec<f64> = (0..p).map(|a| (0..p).map(|b| hinv[a][b] * g_q[b]).sum()).collect();
            for (k, (r, row)) in res.iter().enumerate() {
                if wc[k] == 0.0 {
                    continue;
                }
                let vj: f64 = v.iter().zip(row).map(|(a, b)| a * b).sum();
                grad[k] -= 2.0 * wc[k] * r * vj / scale;
            }
        }
        let dir = adam.direction(&grad);
        for (wk, dk) in wc.iter_mut().zip(dir) {
            if *wk > 0.0 {
                *wk = (*wk - cfg.refine_lr * dk).max(0.0);
            }
        }
    }
    DesignWeights::continuous(wc)
}
