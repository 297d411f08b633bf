//! Priors, measurement noise and self-supervised batch generation.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::OdeModel;
use crate::rng::{self, Rng};

/// Converts the mean and standard deviation of `q` into the location and
/// scale `(mu, sigma)` of `ln q`.
pub fn lognormal_params(mean: f64, std: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) {
        return Err(Error::Domain(format!(
            "lognormal mean must be positive, got {mean}"
        )));
    }
    if !(std >= 0.0) {
        return Err(Error::Domain(format!(
            "lognormal std must be nonnegative, got {std}"
        )));
    }
    let m2 = mean * mean;
    let mu = (m2 / (m2 + std * std).sqrt()).ln();
    let sigma = (std * std / m2).ln_1p().sqrt();
    Ok((mu, sigma))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ParamPrior {
    /// Specified through the mean and standard deviation of `q` itself.
    LogNormal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl ParamPrior {
    pub fn mean(&self) -> f64 {
        match *self {
            ParamPrior::LogNormal { mean, .. } => mean,
            ParamPrior::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn std(&self) -> f64 {
        match *self {
            ParamPrior::LogNormal { std, .. } => std,
            ParamPrior::Uniform { low, high } => (high - low) / 12f64.sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ParamPrior::LogNormal { mean, std } => lognormal_params(mean, std).map(|_| ()),
            ParamPrior::Uniform { low, high } if low <= high => Ok(()),
            ParamPrior::Uniform { low, high } => Err(Error::Domain(format!(
                "uniform prior needs low <= high, got [{low}, {high}]"
            ))),
        }
    }
}

/// Independent per-component prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub params: Vec<ParamPrior>,
}

impl Prior {
    pub fn new(params: Vec<ParamPrior>) -> Self {
        Self { params }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn means(&self) -> Vec<f64> {
        self.params.iter().map(ParamPrior::mean).collect()
    }

    pub fn stds(&self) -> Vec<f64> {
        self.params.iter().map(ParamPrior::std).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.iter().try_for_each(ParamPrior::validate)
    }

    /// Negative log-density up to a constant, and its gradient. Uniform
    /// components contribute nothing inside their support.
    pub fn neg_log_density(&self, q: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = vec![0.0; q.len()];
        for (j, (p, &x)) in self.params.iter().zip(q).enumerate() {
            if let ParamPrior::LogNormal { mean, std } = *p {
                let (mu, sigma) = lognormal_params(mean, std).expect("validated prior");
                if sigma == 0.0 || x <= 0.0 {
                    continue;
                }
                let z = (x.ln() - mu) / sigma;
                value += x.ln() + 0.5 * z * z;
                grad[j] = (1.0 + z / sigma) / x;
            }
        }
        (value, grad)
    }
}

/// Draws `batch_size` parameter vectors (rows).
pub fn sample_prior(prior: &Prior, batch_size: usize, rng: &mut Rng) -> Array2<f64> {
    let mut out = Array2::zeros((batch_size, prior.dim()));
    for mut row in out.rows_mut() {
        sample_into(prior, row.as_slice_mut().expect("contiguous"), rng);
    }
    out
}

fn sample_into(prior: &Prior, q: &mut [f64], rng: &mut Rng) {
    for (slot, p) in q.iter_mut().zip(&prior.params) {
        *slot = match *p {
            ParamPrior::LogNormal { mean, std } => {
                let (mu, sigma) = lognormal_params(mean, std).expect("validated prior");
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            ParamPrior::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        };
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `d = F(q) (1 + sigma eps)`
    MultiplicativeRelative,
    /// `log d = log F(q) + sigma eps`
    AdditiveOnLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevels {
    /// One level drawn uniformly per sample.
    Set(Vec<f64>),
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub levels: NoiseLevels,
}

impl NoiseSpec {
    /// Multiplicative noise at `0 %, 1 %, ..., max_percent %`.
    pub fn percent_levels(max_percent: usize) -> Self {
        Self {
            kind: NoiseKind::MultiplicativeRelative,
            levels: NoiseLevels::Set((0..=max_percent).map(|p| p as f64 / 100.0).collect()),
        }
    }

    pub fn additive_on_log(sigma: f64) -> Self {
        Self {
            kind: NoiseKind::AdditiveOnLog,
            levels: NoiseLevels::Fixed(sigma),
        }
    }

    /// Same kind, all levels replaced by a constant.
    pub fn fixed(&self, sigma: f64) -> Self {
        Self {
            kind: self.kind,
            levels: NoiseLevels::Fixed(sigma),
        }
    }

    pub fn level_values(&self) -> Vec<f64> {
        match &self.levels {
            NoiseLevels::Set(v) => v.clone(),
            NoiseLevels::Fixed(s) => vec![*s],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.level_values();
        if levels.is_empty() {
            return Err(Error::Domain("noise level set is empty".into()));
        }
        if let Some(l) = levels.iter().find(|l| !(**l >= 0.0)) {
            return Err(Error::Domain(format!("noise level {l} is negative")));
        }
        Ok(())
    }

    pub fn sample_level(&self, rng: &mut Rng) -> f64 {
        match &self.levels {
            NoiseLevels::Set(v) => v[rng.random_range(0..v.len())],
            NoiseLevels::Fixed(s) => *s,
        }
    }
}

pub fn add_noise(d_clean: &[f64], sigma: f64, kind: NoiseKind, rng: &mut Rng) -> Result<Vec<f64>> {
    let mut out = d_clean.to_vec();
    add_noise_in_place(&mut out, sigma, kind, rng)?;
    Ok(out)
}

fn add_noise_in_place(d: &mut [f64], sigma: f64, kind: NoiseKind, rng: &mut Rng) -> Result<()> {
    match kind {
        NoiseKind::MultiplicativeRelative => {
            for v in d.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v *= 1.0 + sigma * e;
            }
        }
        NoiseKind::AdditiveOnLog => {
            if let Some(v) = d.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Domain(format!(
                    "additive-on-log noise needs positive data, got {v}"
                )));
            }
            for v in d.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v *= (sigma * e).exp();
            }
        }
    }
    Ok(())
}

/// Parameters, clean data and noisy data for one batch (one row per sample).
#[derive(Clone, Debug)]
pub struct TrainingBatch {
    pub q: Array2<f64>,
    pub d_clean: Array2<f64>,
    pub d_noisy: Array2<f64>,
    pub sigma: Vec<f64>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wr = csv::Writer::from_path(path)?;
        let p = self.q.ncols();
        let n = self.d_noisy.ncols();
        let mut header = vec!["sample_id".to_string(), "sigma".to_string()];
        header.extend((1..=p).map(|j| format!("q_{j}")));
        header.extend((1..=n).map(|j| format!("d_{j}")));
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string(), self.sigma[i].to_string()];
            rec.extend(self.q.row(i).iter().map(|v| v.to_string()));
            rec.extend(self.d_noisy.row(i).iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Samples a batch: prior draw, forward solve, one noise level per sample.
///
/// A single `u64` is drawn from `rng`; sample `i` then uses its own stream
/// derived from that value and `i`, so results do not depend on how the
/// samples are scheduled.
pub fn generate_batch(model: &OdeModel, batch_size: usize, rng: &mut Rng) -> Result<TrainingBatch> {
    let batch_seed = rng.next_u64();
    let p = model.param_dim();
    let n = model.n();
    let mut q = Array2::zeros((batch_size, p));
    let mut d_clean = Array2::zeros((batch_size, n));
    let mut d_noisy = Array2::zeros((batch_size, n));
    let mut sigma = Vec::with_capacity(batch_size);
    for i in 0..batch_size {
        let mut srng = rng::rng_from(rng::derive(batch_seed, i as u64));
        let qi = q.row_mut(i).into_slice().expect("contiguous");
        sample_into(&model.prior, qi, &mut srng);
        let clean = model.solve(qi)?;
        let s = model.noise.sample_level(&mut srng);
        let mut noisy = clean.clone();
        add_noise_in_place(&mut noisy, s, model.noise.kind, &mut srng)?;
        d_clean.row_mut(i).assign(&ArrayView1::from(&clean));
        d_noisy.row_mut(i).assign(&ArrayView1::from(&noisy));
        sigma.push(s);
    }
    Ok(TrainingBatch {
        q,
        d_clean,
        d_noisy,
        sigma,
    })
}
