//! The training objective: mean over the batch of
//! `nmse(q_hat, q) + gamma * nmse(F(q_hat), d_noisy)`.

use std::cell::Cell;

use ndarray::{Array2, ArrayView2};

use crate::error::{check_len, Error, Result};
use crate::net::LossFn;
use crate::ode::OdeModel;
use crate::risk::nmse_data_weighted;

pub struct TotalRiskLoss<'a> {
    pub model: &'a OdeModel,
    pub q_true: ArrayView2<'a, f64>,
    pub d_noisy: ArrayView2<'a, f64>,
    pub weights: &'a [f64],
    pub gamma: f64,
    /// Also evaluate the data risk when `gamma == 0` (reporting only).
    pub track_data_risk: bool,
    last: Cell<(f64, f64)>,
}

impl<'a> TotalRiskLoss<'a> {
    pub fn new(
        model: &'a OdeModel,
        q_true: ArrayView2<'a, f64>,
        d_noisy: ArrayView2<'a, f64>,
        weights: &'a [f64],
        gamma: f64,
    ) -> Self {
        Self {
            model,
            q_true,
            d_noisy,
            weights,
            gamma,
            track_data_risk: true,
            last: Cell::new((f64::NAN, f64::NAN)),
        }
    }

    /// `(l_q, l_d)` of the most recent evaluation; `l_d` is NaN when it was
    /// not computed.
    pub fn last_components(&self) -> (f64, f64) {
        self.last.get()
    }
}

impl LossFn for TotalRiskLoss<'_> {
    fn loss_and_grad(&self, q_hat: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
        let m = q_hat.nrows();
        let p = q_hat.ncols();
        check_len("estimate rows", self.q_true.nrows(), m)?;
        check_len("estimate columns", self.q_true.ncols(), p)?;
        let inv_m = 1.0 / m.max(1) as f64;
        let mut grad = Array2::zeros((m, p));
        let mut l_q = 0.0;
        let mut l_d = 0.0;
        let need_grad = self.gamma != 0.0;
        let need_value = need_grad || self.track_data_risk;

        for i in 0..m {
            let qh = q_hat.row(i);
            let q = self.q_true.row(i);
            let den: f64 = q.iter().map(|v| v * v).sum();
            if den == 0.0 {
                return Err(Error::Domain("parameter-risk reference has zero norm".into()));
            }
            for j in 0..p {
                let diff = qh[j] - q[j];
                l_q += diff * diff / den;
                grad[[i, j]] = 2.0 * diff / den * inv_m;
            }
            if !need_value {
                continue;
            }
            let qv = qh.to_vec();
            let qp = self.model.project(&qv);
            let d = self.d_noisy.row(i);
            let d = d.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| d.to_vec());
            if need_grad {
                let (f, jac) = self.model.solve_with_jacobian(&qp)?;
                l_d += nmse_data_weighted(&f, &d, self.weights)?;
                let dden: f64 = d.iter().zip(self.weights).map(|(v, w)| w * v * v).sum();
                let c = self.gamma * 2.0 / dden * inv_m;
                for (k, ((fk, dk), wk)) in f.iter().zip(&d).zip(self.weights).enumerate() {
                    let r = c * wk * (fk - dk);
                    if r == 0.0 {
                        continue;
                    }
                    for j in 0..p {
                        grad[[i, j]] += r * jac[k * p + j];
                    }
                }
                if self.model.rates_nonnegative() {
                    // the clamp has zero slope below the floor
                    for j in 0..p {
                        if qv[j] < 0.0 {
                            grad[[i, j]] = 2.0 * (qv[j] - q[j]) / den * inv_m;
                        }
                    }
                }
            } else {
                let f = self.model.solve(&qp)?;
                l_d += nmse_data_weighted(&f, &d, self.weights)?;
            }
        }
        l_q *= inv_m;
        let l_d = if need_value { l_d * inv_m } else { f64::NAN };
        self.last.set((l_q, l_d));
        let total = if need_grad { l_q + self.gamma * l_d } else { l_q };
        if !total.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        Ok((total, grad))
    }
}
