use std::collections::VecDeque;

use rand::seq::index::sample;

use super::{
    adam_for, batch_loss, fresh_batch, train_theta, DesignMode, DesignWeights, HistoryRow, Phase, TrainConfig,
    TrainOutcome,
};
use crate::error::{diverged_at, Error, Result};
use crate::net::NetworkParams;
use crate::ode::OdeModel;
use crate::rng::{derive_named, rng_from, Rng};

/// Sorted indices of the active entries of a binary design.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fingerprint(pub Vec<usize>);

impl Fingerprint {
    pub fn from_weights(w: &[f64]) -> Self {
        Self(w.iter().enumerate().filter(|(_, &v)| v > 0.5).map(|(i, _)| i).collect())
    }

    pub fn to_weights(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        for &i in &self.0 {
            w[i] = 1.0;
        }
        w
    }
}

/// Search state: the current design, the best design seen and a bounded
/// first-in first-out list of recently visited designs.
#[derive(Clone, Debug)]
pub struct TabuState {
    pub current: Fingerprint,
    pub best: Fingerprint,
    pub best_loss: f64,
    list: VecDeque<Fingerprint>,
    max_len: usize,
}

impl TabuState {
    pub fn new(init: Fingerprint, max_len: usize) -> Self {
        let mut s = Self {
            current: init.clone(),
            best: init.clone(),
            best_loss: f64::INFINITY,
            list: VecDeque::with_capacity(max_len + 1),
            max_len: max_len.max(1),
        };
        s.push(init);
        s
    }

    pub fn push(&mut self, fp: Fingerprint) {
        if self.list.len() == self.max_len {
            self.list.pop_front();
        }
        self.list.push_back(fp);
    }

    pub fn is_tabu(&self, fp: &Fingerprint) -> bool {
        self.list.contains(fp)
    }

    pub fn list(&self) -> impl Iterator<Item = &Fingerprint> {
        self.list.iter()
    }

    pub fn list_len(&self) -> usize {
        self.list.len()
    }

    /// Empties the list and re-enters the current design.
    pub fn reset_list(&mut self) {
        self.list.clear();
        let cur = self.current.clone();
        self.push(cur);
    }

    /// Records an evaluated design; returns true if it is a new best.
    pub fn offer(&mut self, fp: &Fingerprint, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best = fp.clone();
            true
        } else {
            false
        }
    }
}

/// Up to `k` distinct single-swap neighbours of `current` (one active index
/// moved to an inactive one) that are not on the Tabu list, sampled
/// uniformly and returned in ascending order.
pub fn tabu_neighbors(current: &Fingerprint, n: usize, k: usize, state: &TabuState, rng: &mut Rng) -> Result<Vec<Fingerprint>> {
    let active = &current.0;
    let mut is_active = vec![false; n];
    for &i in active {
        is_active[i] = true;
    }
    let mut all = Vec::new();
    for (pos, _) in active.iter().enumerate() {
        for (b, _) in is_active.iter().enumerate().filter(|(_, &on)| !on) {
            let mut next = active.clone();
            next[pos] = b;
            next.sort_unstable();
            let fp = Fingerprint(next);
            if !state.is_tabu(&fp) {
                all.push(fp);
            }
        }
    }
    if all.is_empty() {
        return Err(Error::Exhausted);
    }
    let m = k.min(all.len());
    let mut chosen: Vec<Fingerprint> = sample(rng, all.len(), m).into_iter().map(|i| all[i].clone()).collect();
    chosen.sort();
    Ok(chosen)
}

/// One executed Tabu move.
#[derive(Clone, Debug)]
pub struct TabuMove {
    pub to: Fingerprint,
    pub loss: f64,
    pub improved: bool,
}

/// Runs `steps` Tabu moves. `loss` scores a list of candidates (all on the
/// same data); the lowest score wins, ties going to the earliest candidate.
pub fn tabu_search(
    state: &mut TabuState,
    n: usize,
    steps: usize,
    k: usize,
    rng: &mut Rng,
    mut loss: impl FnMut(&[Fingerprint]) -> Result<Vec<f64>>,
) -> Result<Vec<TabuMove>> {
    let mut moves = Vec::with_capacity(steps);
    for _ in 0..steps {
        let cands = tabu_neighbors(&state.current, n, k, state, rng)?;
        let scores = loss(&cands)?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s.is_nan() {
                return Err(Error::NonFinite("tabu candidate loss".into()));
            }
            if s < scores[best] {
                best = i;
            }
        }
        let to = cands[best].clone();
        let improved = state.offer(&to, scores[best]);
        state.current = to.clone();
        state.push(to.clone());
        moves.push(TabuMove {
            to,
            loss: scores[best],
            improved,
        });
    }
    Ok(moves)
}

/// Block coordinate descent over the estimator and a binary design: each
/// outer iteration trains theta at the current design, then makes Tabu moves
/// with theta frozen. Returns the best (theta, design) pair seen.
pub fn train_binary_tabu(
    model: &OdeModel,
    cfg: &TrainConfig,
    w_init: &DesignWeights,
    init: Option<NetworkParams>,
) -> Result<TrainOutcome> {
    let n = model.n();
    cfg.validate(n)?;
    crate::error::check_len("initial design", n, w_init.len())?;
    if w_init.mode != DesignMode::Binary {
        return Err(Error::config("Tabu training needs a binary initial design"));
    }
    w_init.validate()?;
    let mut net = match init {
        Some(net) => net,
        None => {
            let mut rng = rng_from(derive_named(cfg.seed, "init"));
            NetworkParams::for_model(model, cfg.hidden, cfg.n_layers, &mut rng)
        }
    };
    let mut rng = rng_from(derive_named(cfg.seed, "batches"));
    let mut move_rng = rng_from(derive_named(cfg.seed, "tabu"));
    let mut adam = adam_for(net.len(), cfg.lr_theta);
    let mut history = Vec::new();
    let mut state = TabuState::new(Fingerprint::from_weights(&w_init.values), cfg.tabu_list_len);
    let mut best_net = net.clone();
    let mut iter = 0;

    for o in 0..cfg.outer_iter {
        let w = state.current.to_weights(n);
        train_theta(model, cfg, &mut net, &mut adam, &w, cfg.inner_iter, &mut rng, &mut history, iter, Phase::Theta)?;
        iter += cfg.inner_iter;
        state.reset_list();

        let batch = fresh_batch(model, cfg, &mut rng, iter)?;
        let cur_loss = batch_loss(model, &net, &w, &batch, cfg.gamma).map_err(diverged_at(iter))?;
        let cur = state.current.clone();
        if state.offer(&cur, cur_loss) {
            best_net = net.clone();
        }

        let steps = cfg.tabu_total_iters * (o + 1) / cfg.outer_iter - cfg.tabu_total_iters * o / cfg.outer_iter;
        for _ in 0..steps {
            let batch = fresh_batch(model, cfg, &mut rng, iter)?;
            let net_ref = &net;
            let moves = tabu_search(&mut state, n, 1, cfg.neighbor_subset, &mut move_rng, |cands| {
                cands
                    .iter()
                    .map(|fp| batch_loss(model, net_ref, &fp.to_weights(n), &batch, cfg.gamma))
                    .collect()
            })
            .map_err(diverged_at(iter))?;
            let mv = &moves[0];
            if mv.improved {
                best_net = net.clone();
            }
            history.push(HistoryRow {
                iter,
                l_q: f64::NAN,
                l_d: f64::NAN,
                l_t: mv.loss,
                sparsity: mv.to.0.len(),
                phase: Phase::Tabu,
            });
            iter += 1;
        }
    }

    let w = if cfg.outer_iter == 0 {
        w_init.clone()
    } else {
        DesignWeights::binary_from_indices(n, &state.best.0)?
    };
    let net = if cfg.outer_iter == 0 { net } else { best_net };
    Ok(TrainOutcome { net, w, history })
}
