use super::{
    adam_for, fresh_batch, gradient_step, DesignWeights, HistoryRow, Phase, TrainConfig, TrainOutcome,
    SPARSITY_THRESHOLD,
};
use crate::error::{diverged_at, Error, Result};
use crate::net::NetworkParams;
use crate::ode::OdeModel;
use crate::optim::Adam;
use crate::rng::{derive_named, rng_from, Rng};

/// Theta-only training at fixed `w` for `iters` iterations, appending to
/// `history` with iteration numbers starting at `first_iter`.
#[allow(clippy::too_many_arguments)]
pub fn train_theta(
    model: &OdeModel,
    cfg: &TrainConfig,
    net: &mut NetworkParams,
    adam: &mut Adam,
    w: &[f64],
    iters: usize,
    rng: &mut Rng,
    history: &mut Vec<HistoryRow>,
    first_iter: usize,
    phase: Phase,
) -> Result<()> {
    let weights = model.grid.trapezoid_weights();
    let s = super::sparsity(w, SPARSITY_THRESHOLD);
    for k in 0..iters {
        let iter = first_iter + k;
        let batch = fresh_batch(model, cfg, rng, iter)?;
        let step = gradient_step(model, net, w, &batch, &weights, cfg.gamma).map_err(diverged_at(iter))?;
        if !step.l_t.is_finite() {
            return Err(Error::Diverged { iter, loss: step.l_t });
        }
        adam.step(&mut net.data, &step.grads.d_theta);
        history.push(HistoryRow {
            iter,
            l_q: step.l_q,
            l_d: step.l_d,
            l_t: step.l_t,
            sparsity: s,
            phase,
        });
    }
    Ok(())
}

/// Joint training of the estimator and continuous design weights.
///
/// Phase one starts from `w = 1` and alternates an Adam step on theta with a
/// shrunk step on `w` until at most `sparsity_target` weights exceed the
/// threshold. Weights at or below the threshold are then set to zero and
/// phase two trains theta alone for `phase2_iters` iterations.
pub fn train_continuous(model: &OdeModel, cfg: &TrainConfig, init: Option<NetworkParams>) -> Result<TrainOutcome> {
    let n = model.n();
    cfg.validate(n)?;
    let mut net = match init {
        Some(net) => net,
        None => {
            let mut rng = rng_from(derive_named(cfg.seed, "init"));
            NetworkParams::for_model(model, cfg.hidden, cfg.n_layers, &mut rng)
        }
    };
    let mut rng = rng_from(derive_named(cfg.seed, "batches"));
    let weights = model.grid.trapezoid_weights();
    let mut adam = adam_for(net.len(), cfg.lr_theta);
    let mut adam_w = adam_for(n, cfg.lr_w);
    let mut w = vec![1.0; n];
    let mut history = Vec::new();

    let mut k = 0;
    while super::sparsity(&w, SPARSITY_THRESHOLD) > cfg.sparsity_target {
        if k >= cfg.phase1_cap {
            return Err(Error::SparsityUnreachable {
                target: cfg.sparsity_target,
                reached: super::sparsity(&w, SPARSITY_THRESHOLD),
                cap: cfg.phase1_cap,
            });
        }
        let batch = fresh_batch(model, cfg, &mut rng, k)?;
        let step = gradient_step(model, &net, &w, &batch, &weights, cfg.gamma).map_err(diverged_at(k))?;
        if !step.l_t.is_finite() {
            return Err(Error::Diverged { iter: k, loss: step.l_t });
        }
        adam.step(&mut net.data, &step.grads.d_theta);
        let dw = adam_w.direction(&step.grads.d_w);
        let next = super::update_w_continuous(&w, &dw, cfg.lr_w, cfg.shrink_at(k));
        w = if super::sparsity(&next, SPARSITY_THRESHOLD) < cfg.sparsity_target {
            // the step removed too many weights at once
            keep_largest(&w, cfg.sparsity_target)
        } else {
            next
        };
        history.push(HistoryRow {
            iter: k,
            l_q: step.l_q,
            l_d: step.l_d,
            l_t: step.l_t,
            sparsity: super::sparsity(&w, SPARSITY_THRESHOLD),
            phase: Phase::Shrink,
        });
        k += 1;
    }

    for v in &mut w {
        if *v <= SPARSITY_THRESHOLD {
            *v = 0.0;
        }
    }
    train_theta(
        model,
        cfg,
        &mut net,
        &mut adam,
        &w,
        cfg.phase2_iters,
        &mut rng,
        &mut history,
        k,
        Phase::Fixed,
    )?;
    Ok(TrainOutcome {
        net,
        w: DesignWeights::continuous(w)?,
        history,
    })
}

/// `w` with all but its `k` largest entries set to zero; ties keep the
/// earlier index.
fn keep_largest(w: &[f64], k: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; w.len()];
    for &i in idx.iter().take(k) {
        out[i] = w[i];
    }
    out
}
