//! Config-driven experiment runs and their CSV artifacts.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use config::{find_key_line, EvalConfig, ExperimentConfig, Method};

use crate::baselines::{
    aopt_best, default_rho_reg, greedy_refine, greedy_search, write_baseline_rows, BaselineRow, GreedyConfig,
    QuasiNewtonEstimator,
};
use crate::baselines::InnerEstimator;
use crate::designers::{
    train_binary_tabu, train_continuous, train_theta, write_history, DesignMode, DesignWeights, HistoryRow, Phase,
    TrainConfig, TrainOutcome,
};
use crate::error::{Error, Result};
use crate::net::{save_network, NetworkHeader, NetworkParams};
use crate::ode::{exp_design_matrix, OdeModel};
use crate::optim::{Adam, AdamConfig};
use crate::risk::{evaluate, write_rows, Estimator, NetworkEstimator, ReportRow, RiskReport};
use crate::rng::{derive_named, rng_from, Rng};
use crate::stochastic::TrainingBatch;

/// Seed of a named task: a hash of the master seed and the task name, so
/// adding tasks never changes the seeds of existing ones.
pub fn task_seed(master: u64, task: &str) -> u64 {
    derive_named(master, task)
}

/// Seed shared by every evaluation of one model, so all designs are scored
/// on the same samples.
pub fn eval_seed(master: u64, model: &str) -> u64 {
    derive_named(master, &format!("{model}/eval"))
}

fn task_name(model: &str, method: Method, sparsity: usize, gamma: f64) -> String {
    format!("{model}_{}_s{sparsity}_g{gamma}", method.as_str())
}

/// Half-width of a log-scale error bar: `log10(l + sem) - log10(l)`.
pub fn log_error_halfwidth(l: f64, sem: f64) -> f64 {
    (l + sem).log10() - l.log10()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub model: String,
    pub method: String,
    pub sparsity: usize,
    pub gamma: f64,
    #[serde(rename = "l_T")]
    pub l_t: f64,
    #[serde(rename = "sem_l_T")]
    pub sem_l_t: f64,
    pub log10_halfwidth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoptRow {
    pub model: String,
    pub sparsity: usize,
    pub sigma: f64,
    pub loss: f64,
    /// Selected grid indices separated by spaces.
    pub indices: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomRow {
    pub design: usize,
    pub model: String,
    pub mode: DesignMode,
    pub sparsity: usize,
    pub gamma: f64,
    pub l_q: f64,
    pub l_d: f64,
    #[serde(rename = "l_T")]
    pub l_t: f64,
    #[serde(rename = "sem_l_T")]
    pub sem_l_t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RandomBaseline {
    pub designs: Vec<DesignWeights>,
    pub reports: Vec<RiskReport>,
    pub nets: Vec<NetworkParams>,
    pub l_t: Summary,
    pub l_q: Summary,
}

impl RandomBaseline {
    pub fn rows(&self, model: &str, sparsity: usize) -> Vec<RandomRow> {
        self.designs
            .iter()
            .zip(&self.reports)
            .enumerate()
            .map(|(i, (w, r))| RandomRow {
                design: i,
                model: model.to_string(),
                mode: w.mode,
                sparsity,
                gamma: r.gamma,
                l_q: r.l_q,
                l_d: r.l_d,
                l_t: r.l_t,
                sem_l_t: r.sem_l_t,
            })
            .collect()
    }

    /// Index of the design with the lowest total risk.
    pub fn best(&self) -> usize {
        (0..self.reports.len())
            .min_by(|&a, &b| self.reports[a].l_t.total_cmp(&self.reports[b].l_t))
            .unwrap_or(0)
    }
}

/// A random design. Binary: `sparsity` distinct points set to one.
/// Continuous: weights drawn from `Uniform(0, 2)` on `sparsity` random
/// points, or on every point when `dense` is set.
pub fn random_design(n: usize, mode: DesignMode, sparsity: usize, dense: bool, rng: &mut Rng) -> DesignWeights {
    let mut idx = sample(rng, n, sparsity.min(n)).into_vec();
    idx.sort_unstable();
    match mode {
        DesignMode::Binary => DesignWeights::binary_from_indices(n, &idx).expect("indices in range"),
        DesignMode::Continuous => {
            let mut values = vec![0.0; n];
            if dense {
                for v in &mut values {
                    *v = rng.random_range(0.0..2.0);
                }
            } else {
                for &i in &idx {
                    values[i] = rng.random_range(0.0..2.0);
                }
            }
            DesignWeights::continuous(values).expect("nonnegative")
        }
    }
}

/// Trains a network from scratch at a fixed design.
pub fn pretrain(model: &OdeModel, cfg: &TrainConfig, w: &[f64], iters: usize, seed: u64) -> Result<NetworkParams> {
    let mut net = NetworkParams::for_model(model, cfg.hidden, cfg.n_layers, &mut rng_from(derive_named(seed, "init")));
    let mut adam = Adam::new(net.len(), AdamConfig { lr: cfg.lr_theta, ..Default::default() });
    let mut rng = rng_from(derive_named(seed, "pretrain"));
    let mut hist = Vec::new();
    train_theta(model, cfg, &mut net, &mut adam, w, iters, &mut rng, &mut hist, 0, Phase::Fixed)?;
    Ok(net)
}

/// `n` random designs, each given `cfg.random_design_iters` theta-only
/// iterations starting from a shared pretrained network, then evaluated on
/// common evaluation samples. Without `pretrained`, a network is first
/// trained for `cfg.pretrain_iters` on an extra random design of the same
/// mode.
#[allow(clippy::too_many_arguments)]
pub fn random_design_baseline(
    model: &OdeModel,
    mode: DesignMode,
    sparsity: usize,
    n: usize,
    dense: bool,
    cfg: &TrainConfig,
    eval: &EvalConfig,
    seed: u64,
    eval_seed: u64,
    pretrained: Option<&NetworkParams>,
) -> Result<RandomBaseline> {
    if n == 0 {
        return Err(Error::config("at least one random design is required"));
    }
    let mut rng = rng_from(derive_named(seed, "designs"));
    let base = match pretrained {
        Some(net) => net.clone(),
        None => {
            let w0 = random_design(model.n(), mode, sparsity, dense, &mut rng);
            pretrain(model, cfg, &w0.values, cfg.pretrain_iters, derive_named(seed, "pretrain"))?
        }
    };
    let mut designs = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);
    let mut nets = Vec::with_capacity(n);
    for i in 0..n {
        let w = random_design(model.n(), mode, sparsity, dense, &mut rng);
        let mut net = base.clone();
        let mut adam = Adam::new(net.len(), AdamConfig { lr: cfg.lr_theta, ..Default::default() });
        let mut brng = rng_from(derive_named(seed, &format!("design-{i}")));
        let mut hist = Vec::new();
        train_theta(model, cfg, &mut net, &mut adam, &w.values, cfg.random_design_iters, &mut brng, &mut hist, 0, Phase::Fixed)?;
        let r = evaluate(&NetworkEstimator { net: &net, w: &w.values }, model, cfg.gamma, eval.n_sets, eval.set_size, eval_seed)?;
        designs.push(w);
        reports.push(r);
        nets.push(net);
    }
    let l_t: Vec<f64> = reports.iter().map(|r| r.l_t).collect();
    let l_q: Vec<f64> = reports.iter().map(|r| r.l_q).collect();
    Ok(RandomBaseline {
        designs,
        reports,
        nets,
        l_t: Summary::of(&l_t),
        l_q: Summary::of(&l_q),
    })
}

/// Tabu training initialised with the best of `n_random` short random-design
/// runs from a pretrained network.
pub fn train_tabu_with_init(
    model: &OdeModel,
    cfg: &TrainConfig,
    eval: &EvalConfig,
    n_random: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    let init_eval = EvalConfig {
        n_sets: 1,
        set_size: eval.set_size,
    };
    let rb = random_design_baseline(
        model,
        DesignMode::Binary,
        cfg.sparsity_target,
        n_random.max(1),
        false,
        cfg,
        &init_eval,
        derive_named(seed, "tabu-init"),
        derive_named(seed, "tabu-init-eval"),
        None,
    )?;
    let k = rb.best();
    train_binary_tabu(model, cfg, &rb.designs[k], Some(rb.nets[k].clone()))
}

/// Training outcome plus evaluation for one sparsity and gamma.
pub fn train_and_evaluate(
    model: &OdeModel,
    method: Method,
    cfg: &TrainConfig,
    eval: &EvalConfig,
    n_random: usize,
    eval_seed: u64,
) -> Result<(TrainOutcome, RiskReport)> {
    let out = match method {
        Method::Continuous => train_continuous(model, cfg, None)?,
        Method::Tabu => train_tabu_with_init(model, cfg, eval, n_random, cfg.seed)?,
        other => return Err(Error::config(format!("{} is not a training method", other.as_str()))),
    };
    let r = evaluate(
        &NetworkEstimator {
            net: &out.net,
            w: &out.w.values,
        },
        model,
        cfg.gamma,
        eval.n_sets,
        eval.set_size,
        eval_seed,
    )?;
    Ok((out, r))
}

/// Continuous training at one sparsity for each gamma.
pub fn gamma_sweep(
    model: &OdeModel,
    sparsity: usize,
    gammas: &[f64],
    cfg: &TrainConfig,
    eval: &EvalConfig,
    master: u64,
) -> Result<Vec<ReportRow>> {
    let name = model.name.as_str();
    let es = eval_seed(master, name);
    let mut rows = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let mut c = cfg.clone();
        c.gamma = g;
        c.sparsity_target = sparsity;
        c.seed = task_seed(master, &task_name(name, Method::Continuous, sparsity, g));
        let (_, r) = train_and_evaluate(model, Method::Continuous, &c, eval, 0, es)?;
        rows.push(ReportRow::new(name, "continuous", sparsity, c.seed, &r));
    }
    Ok(rows)
}

/// MAP estimates for every sample, as an [`Estimator`].
pub struct MapEstimator<'a> {
    pub model: &'a OdeModel,
    pub w: &'a [f64],
    pub qn: &'a QuasiNewtonEstimator,
}

impl Estimator for MapEstimator<'_> {
    fn estimate(&self, batch: &TrainingBatch) -> Result<Array2<f64>> {
        self.qn.estimate_batch(self.model, self.w, batch)
    }
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
    pub reports: Vec<ReportRow>,
}

fn save_outcome(dir: &Path, task: &str, model: &OdeModel, seed: u64, out: &TrainOutcome, files: &mut Vec<PathBuf>) -> Result<()> {
    let hist = dir.join(format!("history_{task}.csv"));
    write_history(&hist, &out.history)?;
    let wfile = format!("w_opt_{task}.csv");
    out.w.write_csv(&dir.join(&wfile), &model.grid)?;
    let net = dir.join(format!("net_{task}.bin"));
    let header = NetworkHeader::describe(&out.net, model.name.as_str(), seed, Some(wfile.clone()));
    save_network(&net, &out.net, &header)?;
    files.extend([hist, dir.join(wfile), net]);
    Ok(())
}

/// Runs every (sparsity, gamma) task of the config and writes its CSV
/// artifacts into `cfg.out`. An empty sparsity list does nothing.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let mut art = Artifacts::default();
    if cfg.sparsity.is_empty() || cfg.gamma.is_empty() {
        return Ok(art);
    }
    let model = cfg.build_model()?;
    let name = model.name.as_str();
    let dir = &cfg.out;
    fs::create_dir_all(dir)?;
    let es = eval_seed(cfg.seed, name);
    let mut plot = Vec::new();
    let mut baselines = Vec::new();
    let mut aopt_rows = Vec::new();
    let mut random_rows = Vec::new();
    let mut summaries = Vec::new();

    for &s in &cfg.sparsity {
        match cfg.method {
            Method::Continuous | Method::Tabu => {
                for &g in &cfg.gamma {
                    let task = task_name(name, cfg.method, s, g);
                    let mut tc = cfg.train.clone();
                    tc.sparsity_target = s;
                    tc.gamma = g;
                    tc.seed = task_seed(cfg.seed, &task);
                    let (out, r) = train_and_evaluate(&model, cfg.method, &tc, &cfg.eval, cfg.n_random_designs, es)?;
                    save_outcome(dir, &task, &model, tc.seed, &out, &mut art.files)?;
                    plot.push(PlotRow {
                        model: name.into(),
                        method: cfg.method.as_str().into(),
                        sparsity: s,
                        gamma: g,
                        l_t: r.l_t,
                        sem_l_t: r.sem_l_t,
                        log10_halfwidth: log_error_halfwidth(r.l_t, r.sem_l_t),
                    });
                    art.reports.push(ReportRow::new(name, cfg.method.as_str(), s, tc.seed, &r));
                }
            }
            Method::Random => {
                for &g in &cfg.gamma {
                    let task = task_name(name, Method::Random, s, g);
                    let mut tc = cfg.train.clone();
                    tc.gamma = g;
                    let seed = task_seed(cfg.seed, &task);
                    let rb = random_design_baseline(
                        &model,
                        cfg.random_mode,
                        s,
                        cfg.n_random_designs,
                        cfg.random_dense,
                        &tc,
                        &cfg.eval,
                        seed,
                        es,
                        None,
                    )?;
                    random_rows.extend(rb.rows(name, s));
                    summaries.push(RandomSummaryRow::new(name, cfg.random_mode, s, g, &rb));
                }
            }
            Method::Greedy => {
                let task = task_name(name, Method::Greedy, s, 0.0);
                let gc = GreedyConfig {
                    seed: task_seed(cfg.seed, &task),
                    ..cfg.greedy.clone()
                };
                let qn = QuasiNewtonEstimator {
                    rho_reg: gc.rho_reg.unwrap_or_else(|| default_rho_reg(model.name)),
                    lbfgs: gc.lbfgs,
                };
                let mut res = greedy_search(&model, s, &gc, &qn)?;
                let mut w = res.w.clone();
                if gc.refine_iters > 0 {
                    w = greedy_refine(&model, &res.w, &qn, &gc, &mut res.counter)?;
                }
                let wfile = dir.join(format!("w_{task}.csv"));
                w.write_csv(&wfile, &model.grid)?;
                art.files.push(wfile);
                let g = cfg.gamma[0];
                let r = evaluate(&MapEstimator { model: &model, w: &w.values, qn: &qn }, &model, g, cfg.eval.n_sets, cfg.eval.set_size, es)?;
                let (m, sd) = res.counter.timing();
                baselines.push(BaselineRow {
                    method: "greedy".into(),
                    model: name.into(),
                    sparsity: s,
                    l_q: r.l_q,
                    l_d: r.l_d,
                    forward_passes: res.counter.forward_passes,
                    backward_passes: res.counter.backward_passes,
                    seconds_per_pass_mean: m,
                    seconds_per_pass_std: sd,
                });
                art.reports.push(ReportRow::new(name, "greedy", s, gc.seed, &r));
            }
            Method::Aopt => {
                let a = exp_design_matrix(&model.grid);
                let (w, loss) = aopt_best(a.view(), s, cfg.aopt_sigma)?;
                aopt_rows.push(AoptRow {
                    model: name.into(),
                    sparsity: s,
                    sigma: cfg.aopt_sigma,
                    loss,
                    indices: w.active_indices().iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
                });
            }
        }
    }

    let mut emit = |file: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let p = dir.join(file);
        f(&p)?;
        art.files.push(p);
        Ok(())
    };
    if !art.reports.is_empty() {
        let rows = art.reports.clone();
        emit("results.csv", &|p| write_rows(p, &rows))?;
    }
    if !plot.is_empty() {
        emit("plot.csv", &|p| write_rows(p, &plot))?;
    }
    if !baselines.is_empty() {
        emit("baselines.csv", &|p| write_baseline_rows(p, &baselines))?;
    }
    if !aopt_rows.is_empty() {
        emit("aopt.csv", &|p| write_rows(p, &aopt_rows))?;
    }
    if !random_rows.is_empty() {
        emit("random_designs.csv", &|p| write_rows(p, &random_rows))?;
        emit("random_summary.csv", &|p| write_rows(p, &summaries))?;
    }
    write_metadata(dir, cfg)?;
    Ok(art)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSummaryRow {
    pub model: String,
    pub mode: DesignMode,
    pub sparsity: usize,
    pub gamma: f64,
    pub n_designs: usize,
    pub mean_l_t: f64,
    pub std_l_t: f64,
    pub min_l_t: f64,
    pub mean_l_q: f64,
    pub std_l_q: f64,
    pub min_l_q: f64,
}

impl RandomSummaryRow {
    pub fn new(model: &str, mode: DesignMode, sparsity: usize, gamma: f64, rb: &RandomBaseline) -> Self {
        Self {
            model: model.into(),
            mode,
            sparsity,
            gamma,
            n_designs: rb.designs.len(),
            mean_l_t: rb.l_t.mean,
            std_l_t: rb.l_t.std,
            min_l_t: rb.l_t.min,
            mean_l_q: rb.l_q.mean,
            std_l_q: rb.l_q.std,
            min_l_q: rb.l_q.min,
        }
    }
}

/// Run metadata, kept apart from the deterministic CSV outputs.
fn write_metadata(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let finished = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "crate_version": env!("CARGO_PKG_VERSION"),
        "finished_unix_seconds": finished,
        "config": cfg,
    });
    fs::write(dir.join("metadata.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Reads back a CSV artifact written by this module.
pub fn load_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    crate::risk::read_rows(path)
}

pub fn load_history(path: &Path) -> Result<Vec<HistoryRow>> {
    load_rows(path)
}

pub fn write_plot_rows(path: &Path, rows: &[PlotRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn write_baselines(path: &Path, rows: &[BaselineRow]) -> Result<()> {
    write_baseline_rows(path, rows)
}
