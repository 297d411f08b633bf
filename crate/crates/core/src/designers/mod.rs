//! Design-weight training: continuous weights driven to sparsity by a
//! nonnegative soft shrink, and binary weights explored by Tabu search.

mod continuous;
mod tabu;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use continuous::{train_continuous, train_theta};
pub use tabu::{tabu_neighbors, tabu_search, train_binary_tabu, Fingerprint, TabuState};

use crate::error::{Error, Result};
use crate::net::{Gradients, NetworkParams};
use crate::objective::TotalRiskLoss;
use crate::ode::{OdeModel, TimeGrid};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;
use crate::stochastic::{generate_batch, TrainingBatch};

pub const SPARSITY_THRESHOLD: f64 = 1e-3;

/// Number of entries strictly above `threshold`.
pub fn sparsity(w: &[f64], threshold: f64) -> usize {
    w.iter().filter(|&&v| v > threshold).count()
}

/// `t - rho` above `rho`, zero otherwise (including every negative `t`).
pub fn soft_shrink(t: f64, rho: f64) -> f64 {
    if t > rho {
        t - rho
    } else {
        0.0
    }
}

/// Proximal step `w' = soft_shrink(w - mu * dw, rho)`.
pub fn update_w_continuous(w: &[f64], dw: &[f64], mu: f64, rho: f64) -> Vec<f64> {
    w.iter()
        .zip(dw)
        .map(|(&wi, &gi)| soft_shrink(wi - mu * gi, rho))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignMode {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignWeights {
    pub values: Vec<f64>,
    pub mode: DesignMode,
}

impl DesignWeights {
    pub fn ones(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
            mode: DesignMode::Continuous,
        }
    }

    pub fn continuous(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Domain(format!("design weight {v} is negative or NaN")));
        }
        Ok(Self {
            values,
            mode: DesignMode::Continuous,
        })
    }

    pub fn binary_from_indices(n: usize, active: &[usize]) -> Result<Self> {
        let mut values = vec![0.0; n];
        for &i in active {
            if i >= n {
                return Err(Error::Domain(format!("index {i} outside a design of length {n}")));
            }
            values[i] = 1.0;
        }
        Ok(Self {
            values,
            mode: DesignMode::Binary,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sparsity(&self) -> usize {
        sparsity(&self.values, SPARSITY_THRESHOLD)
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > SPARSITY_THRESHOLD)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            DesignMode::Binary if self.values.iter().any(|&v| v != 0.0 && v != 1.0) => {
                Err(Error::Domain("binary design with entries outside {0, 1}".into()))
            }
            _ if self.values.iter().any(|v| !(*v >= 0.0)) => {
                Err(Error::Domain("design weights must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    /// CSV with columns `index, t, weight`.
    pub fn write_csv(&self, path: &Path, grid: &TimeGrid) -> Result<()> {
        crate::error::check_len("design weights", grid.len(), self.len())?;
        let mut wr = csv::Writer::from_path(path)?;
        wr.write_record(["index", "t", "weight"])?;
        for (i, (&t, &v)) in grid.points().iter().zip(&self.values).enumerate() {
            wr.write_record([i.to_string(), format!("{t:?}"), format!("{v:?}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a weights CSV; the mode is binary when every weight is 0 or 1.
    pub fn read_csv(path: &Path) -> Result<(Self, Vec<f64>)> {
        #[derive(Deserialize)]
        struct Row {
            index: usize,
            t: f64,
            weight: f64,
        }
        let mut rd = csv::Reader::from_path(path)?;
        let mut values = Vec::new();
        let mut times = Vec::new();
        for (k, r) in rd.deserialize::<Row>().enumerate() {
            let r = r?;
            if r.index != k {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    msg: format!("row {k} has index {}", r.index),
                });
            }
            values.push(r.weight);
            times.push(r.t);
        }
        let mode = if values.iter().all(|&v| v == 0.0 || v == 1.0) {
            DesignMode::Binary
        } else {
            DesignMode::Continuous
        };
        let w = Self { values, mode };
        w.validate()?;
        Ok((w, times))
    }
}

/// Training hyper-parameters. Every field has a default; configs override.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub gamma: f64,
    pub lr_theta: f64,
    pub lr_w: f64,
    /// Initial shrink step per iteration.
    pub rho: f64,
    /// The shrink step grows linearly: `rho * (1 + k / rho_ramp)` at
    /// iteration `k`; zero keeps it constant.
    pub rho_ramp: f64,
    pub sparsity_target: usize,
    pub phase1_cap: usize,
    pub phase2_iters: usize,
    pub outer_iter: usize,
    pub inner_iter: usize,
    pub neighbor_subset: usize,
    pub tabu_list_len: usize,
    pub tabu_total_iters: usize,
    /// Iterations used to pretrain a network before random-design runs.
    pub pretrain_iters: usize,
    /// Short theta-only training applied to each random design.
    pub random_design_iters: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 3500,
            gamma: 1.0,
            lr_theta: 1e-3,
            lr_w: 1e-3,
            rho: 5e-4,
            rho_ramp: 500.0,
            sparsity_target: 4,
            phase1_cap: 200_000,
            phase2_iters: 5000,
            outer_iter: 10,
            inner_iter: 500,
            neighbor_subset: 10,
            tabu_list_len: 8,
            tabu_total_iters: 200,
            pretrain_iters: 500,
            random_design_iters: 500,
            hidden: crate::net::DEFAULT_HIDDEN,
            n_layers: crate::net::DEFAULT_LAYERS,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.sparsity_target > n {
            return Err(Error::config(format!(
                "sparsity_target {} exceeds the grid size {n}",
                self.sparsity_target
            )));
        }
        if !(self.rho > 0.0) {
            return Err(Error::config("rho must be positive"));
        }
        for (name, v) in [("lr_theta", self.lr_theta), ("lr_w", self.lr_w), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be a finite nonnegative number")));
            }
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden must be at least 1"));
        }
        if self.tabu_list_len == 0 || self.neighbor_subset == 0 {
            return Err(Error::config("tabu_list_len and neighbor_subset must be at least 1"));
        }
        Ok(())
    }

    fn shrink_at(&self, k: usize) -> f64 {
        if self.rho_ramp > 0.0 {
            self.rho * (1.0 + k as f64 / self.rho_ramp)
        } else {
            self.rho
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Joint training of theta and w under shrinkage.
    Shrink,
    /// Theta only, w fixed.
    Fixed,
    /// Theta steps inside a Tabu outer iteration.
    Theta,
    /// A Tabu move.
    Tabu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub l_q: f64,
    pub l_d: f64,
    #[serde(rename = "l_T")]
    pub l_t: f64,
    pub sparsity: usize,
    pub phase: Phase,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: NetworkParams,
    pub w: DesignWeights,
    pub history: Vec<HistoryRow>,
}

/// One gradient evaluation of the training objective on a fresh batch.
pub(crate) struct Step {
    pub l_q: f64,
    pub l_d: f64,
    pub l_t: f64,
    pub grads: Gradients,
}

pub(crate) fn gradient_step(
    model: &OdeModel,
    net: &NetworkParams,
    w: &[f64],
    batch: &TrainingBatch,
    weights: &[f64],
    gamma: f64,
) -> Result<Step> {
    let loss = TotalRiskLoss::new(model, batch.q.view(), batch.d_noisy.view(), weights, gamma);
    let (l_t, grads) = net.backward(w, batch.d_noisy.view(), &batch.sigma, &loss)?;
    let (l_q, l_d) = loss.last_components();
    Ok(Step { l_q, l_d, l_t, grads })
}

/// Loss of a fixed (network, design) pair on a batch, without gradients.
pub fn batch_loss(
    model: &OdeModel,
    net: &NetworkParams,
    w: &[f64],
    batch: &TrainingBatch,
    gamma: f64,
) -> Result<f64> {
    let q_hat = net.forward_batch(w, batch.d_noisy.view(), &batch.sigma)?;
    if gamma == 0.0 {
        return crate::risk::nmse_params_batch(q_hat.view(), batch.q.view());
    }
    let (l_q, l_d) = crate::risk::batch_risks(model, batch, q_hat.view())?;
    Ok(l_q + gamma * l_d)
}

pub(crate) fn adam_for(len: usize, lr: f64) -> Adam {
    Adam::new(len, AdamConfig { lr, ..Default::default() })
}

pub(crate) fn fresh_batch(model: &OdeModel, cfg: &TrainConfig, rng: &mut Rng, iter: usize) -> Result<TrainingBatch> {
    generate_batch(model, cfg.batch_size, rng).map_err(crate::error::diverged_at(iter))
}


pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    crate::risk::write_rows(path, rows)
}
