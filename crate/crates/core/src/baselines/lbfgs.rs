//! Limited-memory BFGS with Armijo backtracking and a hard budget on
//! objective evaluations.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    /// Restarts of the inner loop; the memory is kept across them.
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub memory: usize,
    /// Stop once an accepted step changes the objective by less than this.
    pub tolerance: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            outer_iters: 4,
            inner_iters: 20,
            memory: 10,
            tolerance: 1e-6,
        }
    }
}

impl LbfgsConfig {
    /// Maximum number of objective-and-gradient evaluations.
    pub fn budget(&self) -> usize {
        self.outer_iters * self.inner_iters
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Objective after each outer iteration.
    pub outer_values: Vec<f64>,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f`, which returns the value and gradient. The initial point
/// counts as one evaluation; every line-search trial counts as another.
pub fn minimize(
    x0: &[f64],
    cfg: &LbfgsConfig,
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<LbfgsResult> {
    let budget = cfg.budget().max(1);
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    let mut evals = 1;
    if !fx.is_finite() {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut outer_values = Vec::with_capacity(cfg.outer_iters);
    let mut converged = false;

    'outer: for _ in 0..cfg.outer_iters {
        for _ in 0..cfg.inner_iters {
            if evals >= budget {
                break 'outer;
            }
            let gnorm = dot(&g, &g).sqrt();
            if gnorm == 0.0 {
                converged = true;
                break 'outer;
            }
            let mut d = two_loop(&g, &mem);
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                mem.clear();
                d = two_loop(&g, &mem);
                slope = dot(&g, &d);
            }
            let mut t = 1.0;
            let accepted = loop {
                if evals >= budget {
                    break None;
                }
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
                let r = f(&trial);
                evals += 1;
                match r {
                    Ok((ft, gt)) if ft.is_finite() && ft <= fx + 1e-4 * t * slope => break Some((trial, ft, gt)),
                    Ok(_) | Err(Error::NonFinite(_)) => t *= 0.5,
                    Err(e) => return Err(e),
                }
            };
            let Some((xn, fnew, gn)) = accepted else {
                break 'outer;
            };
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                if mem.len() == cfg.memory.max(1) {
                    mem.pop_front();
                }
                mem.push_back((s, y, 1.0 / sy));
            }
            let change = (fx - fnew).abs();
            x = xn;
            fx = fnew;
            g = gn;
            if change < cfg.tolerance {
                converged = true;
                break 'outer;
            }
        }
        outer_values.push(fx);
    }
    if outer_values.len() < cfg.outer_iters {
        outer_values.push(fx);
    }
    Ok(LbfgsResult {
        x,
        value: fx,
        evaluations: evals,
        outer_values,
        converged,
    })
}

/// `-H g` from the stored curvature pairs; a scaled steepest-descent step
/// when the memory is empty.
fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    if mem.is_empty() {
        let gnorm = dot(g, g).sqrt();
        let scale = 1.0f64.min(1.0 / gnorm.max(1e-300));
        return q.iter().map(|v| -v * scale).collect();
    }
    let mut alpha = vec![0.0; mem.len()];
    for (k, (s, y, rho)) in mem.iter().enumerate().rev() {
        alpha[k] = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha[k] * yi;
        }
    }
    let (s, y, _) = mem.back().expect("non-empty");
    let gamma = dot(s, y) / dot(y, y);
    for v in &mut q {
        *v *= gamma;
    }
    for (k, (s, y, rho)) in mem.iter().enumerate() {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alpha[k] - beta) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}
