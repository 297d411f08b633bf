//! Forward problems: parameter vector in, noiseless data on a time grid out.

mod grid;
pub mod rk4;
pub mod three_tissue;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

pub use grid::{Spacing, TimeGrid};
pub use three_tissue::{feng_input, rhs_3tc, FengInputParams};

use crate::dual::{Dual, Scalar};
use crate::error::{check_len, Error, Result};
use crate::stochastic::{NoiseSpec, ParamPrior, Prior};

/// Default RK4 substeps per grid interval for the explicitly integrated models.
pub const DEFAULT_SUBSTEPS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelName {
    ThreeTissue,
    PredatorPrey,
    Exponential,
}

impl ModelName {
    pub const ALL: [ModelName; 3] = [
        ModelName::ThreeTissue,
        ModelName::PredatorPrey,
        ModelName::Exponential,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelName::ThreeTissue => "3tc",
            ModelName::PredatorPrey => "ppm",
            ModelName::Exponential => "exp",
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3tc" => Ok(ModelName::ThreeTissue),
            "ppm" => Ok(ModelName::PredatorPrey),
            "exp" => Ok(ModelName::Exponential),
            other => Err(Error::config(format!(
                "unknown model '{other}' (expected one of 3tc, ppm, exp)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    ThreeTissue(FengInputParams),
    PredatorPrey { initial: [f64; 2] },
    Exponential,
}

/// A forward problem together with its canonical grid, prior and noise.
#[derive(Clone, Debug)]
pub struct OdeModel {
    pub name: ModelName,
    pub dynamics: Dynamics,
    pub grid: TimeGrid,
    pub prior: Prior,
    pub noise: NoiseSpec,
    pub substeps: usize,
}

/// Predator-prey right-hand side, state `(prey, predator)` and
/// `q = (alpha, beta, gamma, delta)`.
pub fn rhs_ppm<S: Scalar>(state: &[S; 2], q: &[S]) -> [S; 2] {
    let [x, y] = *state;
    let (alpha, beta, gamma, delta) = (q[0], q[1], q[2], q[3]);
    let xy = x * y;
    [alpha * x - beta * xy, delta * xy - gamma * y]
}

/// Design matrix of the log-linearised exponential model: rows `(1, t_i)`.
pub fn exp_design_matrix(grid: &TimeGrid) -> Array2<f64> {
    let mut a = Array2::ones((grid.len(), 2));
    for (i, &t) in grid.points().iter().enumerate() {
        a[[i, 1]] = t;
    }
    a
}

impl OdeModel {
    pub fn by_name(name: ModelName) -> Self {
        match name {
            ModelName::ThreeTissue => Self::three_tissue(),
            ModelName::PredatorPrey => Self::predator_prey(),
            ModelName::Exponential => Self::exponential(),
        }
    }

    /// 3-TC with the Feng input: 400 log-spaced points on `[0, 10^4]` min,
    /// lognormal prior with standard deviations at 20 % of the means.
    pub fn three_tissue() -> Self {
        let means = [1.5e-2, 1.6e-3, 121.0, 4e-2, 1e-3, 2e-4];
        Self {
            name: ModelName::ThreeTissue,
            dynamics: Dynamics::ThreeTissue(FengInputParams::default()),
            grid: TimeGrid::log_shifted(1e4, 400).expect("valid grid"),
            prior: Prior::new(
                means
                    .iter()
                    .map(|&m| ParamPrior::LogNormal {
                        mean: m,
                        std: 0.2 * m,
                    })
                    .collect(),
            ),
            noise: NoiseSpec::percent_levels(19),
            substeps: DEFAULT_SUBSTEPS,
        }
    }

    /// Lotka-Volterra on 200 points over 30 years, prey observed, starting
    /// from (30, 4) thousand; lognormal prior at 5 % of the fitted means.
    pub fn predator_prey() -> Self {
        let means = [0.4, 0.018, 0.8, 0.023];
        Self {
            name: ModelName::PredatorPrey,
            dynamics: Dynamics::PredatorPrey {
                initial: [30.0, 4.0],
            },
            grid: TimeGrid::linear(0.0, 30.0, 200).expect("valid grid"),
            prior: Prior::new(
                means
                    .iter()
                    .map(|&m| ParamPrior::LogNormal {
                        mean: m,
                        std: 0.05 * m,
                    })
                    .collect(),
            ),
            noise: NoiseSpec::percent_levels(10),
            substeps: DEFAULT_SUBSTEPS,
        }
    }

    /// `y = y0 exp(lambda t)` with `q = (log y0, lambda)` on 100 points over
    /// `[0, 100]`, uniform prior, additive noise of 0.1 on `log d`.
    pub fn exponential() -> Self {
        Self::exponential_on(TimeGrid::linear(0.0, 100.0, 100).expect("valid grid"))
    }

    pub fn exponential_on(grid: TimeGrid) -> Self {
        Self {
            name: ModelName::Exponential,
            dynamics: Dynamics::Exponential,
            grid,
            prior: Prior::new(vec![
                ParamPrior::Uniform {
                    low: 0.0,
                    high: 1.0,
                },
                ParamPrior::Uniform {
                    low: -0.5,
                    high: -0.01,
                },
            ]),
            noise: NoiseSpec::additive_on_log(0.1),
            substeps: DEFAULT_SUBSTEPS,
        }
    }

    pub fn with_grid(mut self, grid: TimeGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn param_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::ThreeTissue(_) => 6,
            Dynamics::PredatorPrey { .. } => 4,
            Dynamics::Exponential => 2,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::ThreeTissue(_) => 3,
            Dynamics::PredatorPrey { .. } => 2,
            Dynamics::Exponential => 1,
        }
    }

    /// Number of candidate measurements.
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self.dynamics {
            Dynamics::ThreeTissue(_) => &["k1", "k2", "k3", "k4", "k5", "k6"],
            Dynamics::PredatorPrey { .. } => &["alpha", "beta", "gamma", "delta"],
            Dynamics::Exponential => &["log_y0", "lambda"],
        }
    }

    /// Initial state; the exponential model's depends on `q` and is reported
    /// at the prior mean.
    pub fn initial_state(&self) -> Vec<f64> {
        match self.dynamics {
            Dynamics::ThreeTissue(_) => vec![0.0; 3],
            Dynamics::PredatorPrey { initial } => initial.to_vec(),
            Dynamics::Exponential => vec![self.prior.means()[0].exp()],
        }
    }

    /// Whether every rate must be nonnegative.
    pub fn rates_nonnegative(&self) -> bool {
        !matches!(self.dynamics, Dynamics::Exponential)
    }

    /// Projection onto the admissible parameter domain.
    pub fn project<S: Scalar>(&self, q: &[S]) -> Vec<S> {
        if self.rates_nonnegative() {
            q.iter().map(|v| v.max_cst(0.0)).collect()
        } else {
            q.to_vec()
        }
    }

    pub fn solve<S: Scalar>(&self, q: &[S]) -> Result<Vec<S>> {
        self.solve_on(q, &self.grid)
    }

    /// Observable on an arbitrary grid.
    pub fn solve_on<S: Scalar>(&self, q: &[S], grid: &TimeGrid) -> Result<Vec<S>> {
        check_len("parameter vector", self.param_dim(), q.len())?;
        let pts = grid.points();
        match &self.dynamics {
            Dynamics::ThreeTissue(input) => three_tissue::solve_3tc(q, pts, input),
            Dynamics::PredatorPrey { initial } => {
                let y0 = [S::cst(initial[0]), S::cst(initial[1])];
                let y0 = if pts[0] > 0.0 {
                    rk4::advance(|_, y: &[S; 2]| rhs_ppm(y, q), y0, 0.0, pts[0], self.substeps)
                } else {
                    y0
                };
                rk4::integrate(|_, y| rhs_ppm(y, q), y0, pts, self.substeps, |y| y[0])
            }
            Dynamics::Exponential => {
                let lambda = q[1];
                let y0 = [q[0].exp()];
                let y0 = if pts[0] > 0.0 {
                    rk4::advance(|_, y: &[S; 1]| [lambda * y[0]], y0, 0.0, pts[0], self.substeps)
                } else {
                    y0
                };
                rk4::integrate(|_, y: &[S; 1]| [lambda * y[0]], y0, pts, self.substeps, |y| y[0])
            }
        }
    }

    /// Observable and its Jacobian (row-major `N x p`) with respect to `q`,
    /// exact for the discretised solver.
    pub fn solve_with_jacobian(&self, q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match self.param_dim() {
            2 => self.jacobian_impl::<2>(q),
            4 => self.jacobian_impl::<4>(q),
            6 => self.jacobian_impl::<6>(q),
            p => Err(Error::Domain(format!("unsupported parameter dimension {p}"))),
        }
    }

    fn jacobian_impl<const P: usize>(&self, q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("parameter vector", P, q.len())?;
        let qd: Vec<Dual<P>> = q.iter().enumerate().map(|(i, &v)| Dual::var(v, i)).collect();
        let out = self.solve(&qd)?;
        let mut values = Vec::with_capacity(out.len());
        let mut jac = Vec::with_capacity(out.len() * P);
        for d in out {
            values.push(d.re);
            jac.extend_from_slice(&d.eps);
        }
        Ok((values, jac))
    }
}
