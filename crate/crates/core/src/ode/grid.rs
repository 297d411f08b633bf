use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Logarithmic,
    Custom,
}

/// Ordered candidate measurement times.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    spacing: Spacing,
}

#[derive(Serialize, Deserialize)]
struct GridRow {
    index: usize,
    t: f64,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("time grid must not be empty".into()));
        }
        if !(points[0] >= 0.0) {
            return Err(Error::Domain(format!(
                "time grid must start at t >= 0, got {}",
                points[0]
            )));
        }
        if let Some(w) = points.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::Domain(format!(
                "time grid must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { points, spacing })
    }

    /// `n` equally spaced points on `[t0, t1]`, endpoints included.
    pub fn linear(t0: f64, t1: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Self::new(vec![t0], Spacing::Linear);
        }
        let span = t1 - t0;
        let pts = (0..n)
            .map(|i| t0 + span * i as f64 / (n - 1) as f64)
            .collect();
        Self::new(pts, Spacing::Linear)
    }

    /// `n` points on `[0, t_end]` spaced logarithmically in `1 + t`:
    /// `t_i = (1 + t_end)^(i / (n - 1)) - 1`.
    pub fn log_shifted(t_end: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Self::new(vec![0.0], Spacing::Logarithmic);
        }
        let base = 1.0 + t_end;
        let mut pts: Vec<f64> = (0..n)
            .map(|i| base.powf(i as f64 / (n - 1) as f64) - 1.0)
            .collect();
        pts[0] = 0.0;
        pts[n - 1] = t_end;
        Self::new(pts, Spacing::Logarithmic)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Sub-grid made of the given indices (must be increasing).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let pts = indices
            .iter()
            .map(|&i| {
                self.points
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::Domain(format!("grid index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pts, Spacing::Custom)
    }

    /// Per-node weights of the composite trapezoid rule, so that
    /// `sum_i weights[i] * f[i]` equals the variable-width trapezoid integral.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.points.len();
        let mut w = vec![0.0; n];
        for i in 0..n.saturating_sub(1) {
            let h = 0.5 * (self.points[i + 1] - self.points[i]);
            w[i] += h;
            w[i + 1] += h;
        }
        w
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wr = csv::Writer::from_path(path)?;
        for (index, &t) in self.points.iter().enumerate() {
            wr.serialize(GridRow { index, t })?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let mut pts = Vec::new();
        for (k, row) in rd.deserialize::<GridRow>().enumerate() {
            let row = row?;
            if row.index != k {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    msg: format!("expected index {k}, found {}", row.index),
                });
            }
            pts.push(row.t);
        }
        Self::new(pts, Spacing::Custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_grid_rows() {
        let g = TimeGrid::linear(0.0, 100.0, 100).unwrap();
        assert_eq!(g.len(), 100);
        for (i, &t) in g.points().iter().enumerate() {
            assert_eq!(t, 100.0 * i as f64 / 99.0);
        }
    }

    #[test]
    fn log_grid_is_strictly_increasing_from_zero() {
        let g = TimeGrid::log_shifted(1e4, 400).unwrap();
        assert_eq!(g.len(), 400);
        assert_eq!(g.start(), 0.0);
        assert_eq!(g.end(), 1e4);
        assert!(g.points()[1] < 0.05);
        assert!(g.points().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_unordered_or_negative() {
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0], Spacing::Custom).is_err());
        assert!(TimeGrid::new(vec![-1.0, 1.0], Spacing::Custom).is_err());
    }

    #[test]
    fn trapezoid_weights_sum_to_span() {
        let g = TimeGrid::log_shifted(30.0, 17).unwrap();
        let s: f64 = g.trapezoid_weights().iter().sum();
        assert!((s - 30.0).abs() < 1e-12);
    }
}
