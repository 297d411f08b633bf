use crate::dual::Scalar;
use crate::error::{Error, Result};

/// Classical fourth-order Runge-Kutta over a grid of output times.
///
/// Each interval `[t_i, t_{i+1}]` is split into `substeps` equal internal
/// steps; the observable is recorded at every grid point, starting with the
/// initial state at `grid[0]`.
pub fn integrate<S, const D: usize>(
    rhs: impl Fn(f64, &[S; D]) -> [S; D],
    y0: [S; D],
    grid: &[f64],
    substeps: usize,
    observe: impl Fn(&[S; D]) -> S,
) -> Result<Vec<S>>
where
    S: Scalar,
{
    let substeps = substeps.max(1);
    let mut y = y0;
    let mut out = Vec::with_capacity(grid.len());
    if grid.is_empty() {
        return Ok(out);
    }
    out.push(observe(&y));
    for (i, w) in grid.windows(2).enumerate() {
        let h = (w[1] - w[0]) / substeps as f64;
        let mut t = w[0];
        for _ in 0..substeps {
            y = step(&rhs, t, &y, h);
            t += h;
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "state became non-finite on interval {} (t = {})",
                i, w[1]
            )));
        }
        out.push(observe(&y));
    }
    Ok(out)
}

/// Final state after `substeps` equal steps from `t0` to `t1`.
pub fn advance<S: Scalar, const D: usize>(
    rhs: impl Fn(f64, &[S; D]) -> [S; D],
    y0: [S; D],
    t0: f64,
    t1: f64,
    substeps: usize,
) -> [S; D] {
    let n = substeps.max(1);
    let h = (t1 - t0) / n as f64;
    let mut y = y0;
    let mut t = t0;
    for _ in 0..n {
        y = step(&rhs, t, &y, h);
        t += h;
    }
    y
}

#[inline]
fn step<S: Scalar, const D: usize>(
    rhs: &impl Fn(f64, &[S; D]) -> [S; D],
    t: f64,
    y: &[S; D],
    h: f64,
) -> [S; D] {
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &axpy(y, &k1, 0.5 * h));
    let k3 = rhs(t + 0.5 * h, &axpy(y, &k2, 0.5 * h));
    let k4 = rhs(t + h, &axpy(y, &k3, h));
    let mut next = *y;
    let c = h / 6.0;
    for j in 0..D {
        next[j] += (k1[j] + (k2[j] + k3[j]) * 2.0 + k4[j]) * c;
    }
    next
}

#[inline]
fn axpy<S: Scalar, const D: usize>(y: &[S; D], k: &[S; D], a: f64) -> [S; D] {
    let mut out = *y;
    for j in 0..D {
        out[j] += k[j] * a;
    }
    out
}
