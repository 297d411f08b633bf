//! Experiment configuration read from TOML. Every field has a default in
//! code; a file only lists overrides.
//!
//! ```toml
//! model = "ppm"            # 3tc | ppm | exp
//! method = "continuous"    # continuous | tabu | greedy | aopt | random
//! sparsity = [2, 4, 10]
//! gamma = [1.0]
//! seed = 7
//! out = "runs/ppm"
//! random_mode = "continuous"   # continuous | binary
//! n_random_designs = 100
//! solver_substeps = 20
//!
//! [train]          # any TrainConfig field
//! batch_size = 256
//!
//! [eval]
//! n_sets = 50
//! set_size = 3500
//!
//! [greedy]         # any GreedyConfig field
//! batch_size = 64
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::GreedyConfig;
use crate::designers::{DesignMode, TrainConfig};
use crate::error::{Error, Result};
use crate::ode::{ModelName, OdeModel, DEFAULT_SUBSTEPS};
use crate::risk::{DEFAULT_N_SETS, DEFAULT_SET_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Continuous,
    Tabu,
    Greedy,
    Aopt,
    Random,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Continuous => "continuous",
            Method::Tabu => "tabu",
            Method::Greedy => "greedy",
            Method::Aopt => "aopt",
            Method::Random => "random",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Method::Continuous),
            "tabu" => Ok(Method::Tabu),
            "greedy" => Ok(Method::Greedy),
            "aopt" => Ok(Method::Aopt),
            "random" => Ok(Method::Random),
            other => Err(Error::config(format!(
                "unknown method {other:?}; expected continuous, tabu, greedy, aopt or random"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_sets: usize,
    pub set_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_sets: DEFAULT_N_SETS,
            set_size: DEFAULT_SET_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub method: Method,
    pub sparsity: Vec<usize>,
    pub gamma: Vec<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub random_mode: DesignMode,
    pub n_random_designs: usize,
    /// Random continuous designs spread over the whole grid instead of a
    /// random subset of `sparsity` points.
    pub random_dense: bool,
    pub solver_substeps: usize,
    /// Standard deviation of the log-data noise for the A-optimality baseline.
    pub aopt_sigma: f64,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub greedy: GreedyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "ppm".into(),
            method: Method::Continuous,
            sparsity: vec![4],
            gamma: vec![1.0],
            seed: 0,
            out: PathBuf::from("runs"),
            random_mode: DesignMode::Continuous,
            n_random_designs: 100,
            random_dense: false,
            solver_substeps: DEFAULT_SUBSTEPS,
            aopt_sigma: 0.1,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            greedy: GreedyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reduced sizes for a laptop: batch 256, phase-one cap 5000, phase-two
    /// 1000 iterations, evaluation on 10 sets of 512, 30 Tabu moves, and 4
    /// solver substeps per grid interval.
    pub fn desk_scale() -> Self {
        let mut c = Self::default();
        c.apply_desk_scale();
        c
    }

    pub fn apply_desk_scale(&mut self) {
        self.train.batch_size = 256;
        self.train.phase1_cap = 5000;
        self.train.phase2_iters = 1000;
        self.train.tabu_total_iters = 30;
        self.train.outer_iter = 3;
        self.train.inner_iter = 300;
        self.eval = EvalConfig {
            n_sets: 10,
            set_size: 512,
        };
        self.greedy.batch_size = 32;
        self.solver_substeps = 4;
    }

    /// Parses `text` over a base configuration: keys present in the file
    /// replace the base values, nested tables merge key by key.
    pub fn from_toml_over(text: &str, base: &ExperimentConfig) -> Result<Self> {
        // syntax, types and unknown keys, reported with line numbers
        let _: ExperimentConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        let overrides: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut merged, overrides);
        let cfg: ExperimentConfig =
            toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        cfg.validate().map_err(|e| with_line(text, e))?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_over(text, &Self::default())
    }

    pub fn load(path: &Path, desk_scale: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let base = if desk_scale { Self::desk_scale() } else { Self::default() };
        Self::from_toml_over(&text, &base)
    }

    pub fn model_name(&self) -> Result<ModelName> {
        self.model.parse()
    }

    /// The forward model with the configured solver resolution.
    pub fn build_model(&self) -> Result<OdeModel> {
        let mut m = OdeModel::by_name(self.model_name()?);
        m.substeps = self.solver_substeps;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model_name().map_err(|e| keyed("model", e))?;
        let n = OdeModel::by_name(model).n();
        if let Some(&s) = self.sparsity.iter().find(|&&s| s > n) {
            return Err(keyed(
                "sparsity",
                Error::config(format!("sparsity {s} exceeds the {n} grid points of model {model}")),
            ));
        }
        if self.gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(keyed("gamma", Error::config("gamma values must be finite and nonnegative")));
        }
        if self.solver_substeps == 0 {
            return Err(keyed("solver_substeps", Error::config("solver_substeps must be at least 1")));
        }
        if self.eval.n_sets == 0 || self.eval.set_size == 0 {
            return Err(keyed("eval", Error::config("n_sets and set_size must be at least 1")));
        }
        if self.method == Method::Aopt && model != ModelName::Exponential {
            return Err(keyed("method", Error::config("the A-optimality baseline needs model = \"exp\"")));
        }
        if self.method == Method::Random && self.n_random_designs == 0 {
            return Err(keyed("n_random_designs", Error::config("n_random_designs must be at least 1")));
        }
        self.train.validate(n).map_err(|e| keyed("train", e))?;
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Semantic errors carry the key they concern until a line is attached.
fn keyed(key: &str, e: Error) -> Error {
    match e {
        Error::Config { line: None, msg } => Error::Config {
            line: None,
            msg: format!("{key}: {msg}"),
        },
        other => other,
    }
}

fn with_line(text: &str, e: Error) -> Error {
    match e {
        Error::Config { line: None, msg } => {
            let key = msg.split(':').next().unwrap_or("").trim().to_string();
            Error::Config {
                line: find_key_line(text, &key),
                msg,
            }
        }
        other => other,
    }
}

/// 1-based line of `key = ...` or `[key]`.
pub fn find_key_line(text: &str, key: &str) -> Option<usize> {
    if key.is_empty() {
        return None;
    }
    text.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false)
            || t.trim_end() == format!("[{key}]")
    })
    .map(|i| i + 1)
}

fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::Config {
        line,
        msg: e.message().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn overrides_merge_into_nested_tables() {
        let c = ExperimentConfig::from_toml_over("[train]\nbatch_size = 64\n", &ExperimentConfig::desk_scale()).unwrap();
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.phase2_iters, 1000);
        assert_eq!(c.eval.set_size, 512);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let err = ExperimentConfig::from_toml("model = \"ppm\"\n\n[train]\nbatchsize = 3\n").unwrap_err();
        match err {
            Error::Config { line, .. } => assert_eq!(line, Some(4)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn semantic_error_reports_its_line() {
        let err = ExperimentConfig::from_toml("model = \"exp\"\nsparsity = [2, 400]\n").unwrap_err();
        match err {
            Error::Config { line, msg } => {
                assert_eq!(line, Some(2));
                assert!(msg.contains("400"));
            }
            e => panic!("unexpected {e}"),
        }
        let err = ExperimentConfig::from_toml("seed = 1\nmodel = \"lv\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(2), .. }));
    }
}
