//! Optimal experimental design for ODE parameter estimation with
//! likelihood-free estimators.
//!
//! A neural estimator maps weighted data, the design weights and the noise
//! level directly to parameter estimates, so the design weights and the
//! estimator can be trained jointly in one self-supervised loop instead of a
//! bilevel optimisation. The crate contains the forward models, the estimator
//! and its gradient engine, the two design-training methods (continuous
//! weights with a nonnegative soft shrink, binary weights with Tabu search),
//! conventional baselines (A-optimality, greedy search over a quasi-Newton
//! MAP estimator) and an experiment harness.

pub mod baselines;
pub mod designers;
pub mod dual;
pub mod error;
pub mod harness;
pub mod net;
pub mod objective;
pub mod ode;
pub mod optim;
pub mod risk;
pub mod rng;
pub mod stochastic;

pub use error::{Error, Result};
