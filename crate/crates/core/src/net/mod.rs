//! The likelihood-free estimator `q_hat = F_theta(w * d, w, sigma)` and its
//! hand-written reverse-mode gradient.
//!
//! Per sample, with `eta` the SiLU activation and `L` layers:
//!
//! ```text
//! y  = W1 (w * d / c) + b1          s = E sigma + bE
//! q  = eta(Q1 w + bQ1)              s = eta(P1 s + bP1)
//! x0 = eta(y + q + s)
//! x_i = eta(W_{i+1} x_{i-1} + b + eta(Q_{i+1} q + ..) + eta(P_{i+1} s + ..))
//! q_hat = shift + scale * (Wf x_L + bf)
//! ```
//!
//! `c`, `shift` and `scale` are fixed normalisation constants taken from the
//! model (typical data magnitude, prior mean and prior spread); they are not
//! trained.

mod io;
mod layout;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use io::{load_network, save_network, NetworkHeader};
pub use layout::{Layout, Slot};

use crate::error::{check_len, Result};
use crate::ode::OdeModel;
use crate::rng::Rng;

pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_LAYERS: usize = 3;

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Fixed input/output scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_scale: f64,
    pub output_shift: Vec<f64>,
    pub output_scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(p: usize) -> Self {
        Self {
            input_scale: 1.0,
            output_shift: vec![0.0; p],
            output_scale: vec![1.0; p],
        }
    }

    /// Data scaled by the peak of the prior-mean signal; outputs centred on
    /// the prior mean with the prior spread as unit.
    pub fn for_model(model: &OdeModel) -> Self {
        let means = model.prior.means();
        let peak = model
            .solve(&means)
            .map(|d| d.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .unwrap_or(1.0);
        let input_scale = if peak > 0.0 && peak.is_finite() { peak } else { 1.0 };
        let output_scale = model
            .prior
            .stds()
            .iter()
            .zip(&means)
            .map(|(&s, &m)| if s > 0.0 { s } else if m != 0.0 { m.abs() } else { 1.0 })
            .collect();
        Self {
            input_scale,
            output_shift: means,
            output_scale,
        }
    }
}

/// All trainable tensors, stored contiguously in one buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub layout: Layout,
    pub data: Vec<f64>,
    pub norm: Normalization,
}

impl NetworkParams {
    pub fn zeros(layout: Layout, norm: Normalization) -> Self {
        let data = vec![0.0; layout.len()];
        Self { layout, data, norm }
    }

    /// Matrix entries ~ N(0, 1/fan_in), biases zero.
    pub fn init(layout: Layout, norm: Normalization, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(layout, norm);
        for slot in p.layout.slots().to_vec() {
            if slot.cols == 0 {
                continue;
            }
            let std = (1.0 / slot.cols as f64).sqrt();
            for v in &mut p.data[slot.offset..slot.offset + slot.len()] {
                let z: f64 = StandardNormal.sample(rng);
                *v = std * z;
            }
        }
        p
    }

    pub fn for_model(model: &OdeModel, hidden: usize, layers: usize, rng: &mut Rng) -> Self {
        let layout = Layout::new(model.n(), model.param_dim(), hidden, layers);
        Self::init(layout, Normalization::for_model(model), rng)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn mat(&self, slot: Slot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((slot.rows, slot.cols), &self.data[slot.offset..slot.offset + slot.len()])
            .expect("layout shape")
    }

    fn vec(&self, slot: Slot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[slot.offset..slot.offset + slot.rows])
    }

    /// Single-sample forward pass.
    pub fn forward(&self, w: &[f64], d: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let n = self.layout.n;
        check_len("design weights", n, w.len())?;
        check_len("data vector", n, d.len())?;
        let dm = ArrayView2::from_shape((1, n), d).expect("row");
        let q = self.forward_batch(w, dm, &[sigma])?;
        Ok(q.row(0).to_vec())
    }

    /// Batched forward pass; one row of `d` per sample.
    pub fn forward_batch(&self, w: &[f64], d: ArrayView2<'_, f64>, sigma: &[f64]) -> Result<Array2<f64>> {
        Ok(self.forward_cached(w, d, sigma)?.q_hat)
    }

    fn forward_cached(&self, w: &[f64], d: ArrayView2<'_, f64>, sigma: &[f64]) -> Result<Cache> {
        let l = &self.layout;
        check_len("design weights", l.n, w.len())?;
        check_len("data columns", l.n, d.ncols())?;
        check_len("noise levels", d.nrows(), sigma.len())?;
        let w_arr = ArrayView1::from(w);
        let sig = ArrayView1::from(sigma);

        let mut input = d.to_owned();
        let inv_scale = 1.0 / self.norm.input_scale;
        for mut row in input.rows_mut() {
            row.zip_mut_with(&w_arr, |v, &wi| *v *= wi * inv_scale);
        }
        let y = input.dot(&self.mat(l.w1).t()) + &self.vec(l.b1);

        let mut s_in = Array2::zeros((sigma.len(), l.hidden));
        for (mut row, &sg) in s_in.rows_mut().into_iter().zip(sig.iter()) {
            row.assign(&(&self.vec(l.e) * sg + &self.vec(l.be)));
        }

        let mut q_pre = Vec::with_capacity(l.layers + 1);
        let mut q_act = Vec::with_capacity(l.layers + 1);
        let mut s_pre = Vec::with_capacity(l.layers + 1);
        let mut s_act = Vec::with_capacity(l.layers + 1);
        let mut x_pre = Vec::with_capacity(l.layers + 1);
        let mut x_act = Vec::with_capacity(l.layers + 1);

        let qa = self.mat(l.q[0]).dot(&w_arr) + &self.vec(l.bq[0]);
        let qv = qa.mapv(silu);
        let sa = s_in.dot(&self.mat(l.sp[0]).t()) + &self.vec(l.bsp[0]);
        let sv = sa.mapv(silu);
        let xa = &y + &qv + &sv;
        let xv = xa.mapv(silu);
        q_pre.push(qa);
        q_act.push(qv);
        s_pre.push(sa);
        s_act.push(sv);
        x_pre.push(xa);
        x_act.push(xv);

        for i in 1..=l.layers {
            let za = x_act[i - 1].dot(&self.mat(l.w[i - 1]).t()) + &self.vec(l.bw[i - 1]);
            let qa = self.mat(l.q[i]).dot(&q_act[i - 1]) + &self.vec(l.bq[i]);
            let qv = qa.mapv(silu);
            let sa = s_act[i - 1].dot(&self.mat(l.sp[i]).t()) + &self.vec(l.bsp[i]);
            let sv = sa.mapv(silu);
            let xa = za + &qv + &sv;
            let xv = xa.mapv(silu);
            q_pre.push(qa);
            q_act.push(qv);
            s_pre.push(sa);
            s_act.push(sv);
            x_pre.push(xa);
            x_act.push(xv);
        }

        let mut out = x_act[l.layers].dot(&self.mat(l.wf).t()) + &self.vec(l.bf);
        let shift = ArrayView1::from(&self.norm.output_shift);
        let scale = ArrayView1::from(&self.norm.output_scale);
        for mut row in out.rows_mut() {
            row.zip_mut_with(&scale, |v, &sc| *v *= sc);
            row += &shift;
        }

        Ok(Cache {
            input,
            s_in,
            q_pre,
            q_act,
            s_pre,
            s_act,
            x_pre,
            x_act,
            q_hat: out,
        })
    }
}

struct Cache {
    input: Array2<f64>,
    s_in: Array2<f64>,
    q_pre: Vec<Array1<f64>>,
    q_act: Vec<Array1<f64>>,
    s_pre: Vec<Array2<f64>>,
    s_act: Vec<Array2<f64>>,
    x_pre: Vec<Array2<f64>>,
    x_act: Vec<Array2<f64>>,
    q_hat: Array2<f64>,
}

/// Gradients of a scalar loss with respect to the network parameters (same
/// layout as [`NetworkParams::data`]), the design weights and the network's
/// data input.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub d_theta: Vec<f64>,
    pub d_w: Vec<f64>,
    pub d_data: Array2<f64>,
}

/// A scalar objective of the batch estimates.
pub trait LossFn {
    /// Loss and its gradient with respect to `q_hat` (same shape).
    fn loss_and_grad(&self, q_hat: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)>;
}

impl NetworkParams {
    /// Reverse-mode pass: loss value and exact gradients.
    pub fn backward(
        &self,
        w: &[f64],
        d: ArrayView2<'_, f64>,
        sigma: &[f64],
        loss: &impl LossFn,
    ) -> Result<(f64, Gradients)> {
        let cache = self.forward_cached(w, d, sigma)?;
        let (value, dq) = loss.loss_and_grad(cache.q_hat.view())?;
        let grads = self.backprop(&cache, w, d, sigma, dq);
        Ok((value, grads))
    }

    fn backprop(&self, c: &Cache, w: &[f64], d: ArrayView2<'_, f64>, sigma: &[f64], dq_hat: Array2<f64>) -> Gradients {
        let l = &self.layout;
        let mut g = vec![0.0; self.data.len()];
        let w_arr = ArrayView1::from(w);

        let scale = ArrayView1::from(&self.norm.output_scale);
        let mut dout = dq_hat;
        for mut row in dout.rows_mut() {
            row.zip_mut_with(&scale, |v, &sc| *v *= sc);
        }
        let last = &c.x_act[l.layers];
        add_mat(&mut g, l.wf, dout.t().dot(last).view());
        add_vec(&mut g, l.bf, dout.sum_axis(Axis(0)).view());
        let mut dx = dout.dot(&self.mat(l.wf));

        let mut dq = Array1::<f64>::zeros(l.hidden);
        let mut ds = Array2::<f64>::zeros((sigma.len(), l.hidden));
        for i in (1..=l.layers).rev() {
            let mut dxa = dx;
            dxa.zip_mut_with(&c.x_pre[i], |v, &a| *v *= silu_grad(a));
            // the embedding branches receive the same upstream gradient
            dq += &dxa.sum_axis(Axis(0));
            ds += &dxa;

            add_mat(&mut g, l.w[i - 1], dxa.t().dot(&c.x_act[i - 1]).view());
            add_vec(&mut g, l.bw[i - 1], dxa.sum_axis(Axis(0)).view());
            dx = dxa.dot(&self.mat(l.w[i - 1]));

            let mut dqa = dq;
            dqa.zip_mut_with(&c.q_pre[i], |v, &a| *v *= silu_grad(a));
            add_outer(&mut g, l.q[i], dqa.view(), c.q_act[i - 1].view());
            add_vec(&mut g, l.bq[i], dqa.view());
            dq = self.mat(l.q[i]).t().dot(&dqa);

            let mut dsa = ds;
            dsa.zip_mut_with(&c.s_pre[i], |v, &a| *v *= silu_grad(a));
            add_mat(&mut g, l.sp[i], dsa.t().dot(&c.s_act[i - 1]).view());
            add_vec(&mut g, l.bsp[i], dsa.sum_axis(Axis(0)).view());
            ds = dsa.dot(&self.mat(l.sp[i]));
        }

        let mut dxa = dx;
        dxa.zip_mut_with(&c.x_pre[0], |v, &a| *v *= silu_grad(a));
        dq += &dxa.sum_axis(Axis(0));
        ds += &dxa;

        // data embedding
        add_mat(&mut g, l.w1, dxa.t().dot(&c.input).view());
        add_vec(&mut g, l.b1, dxa.sum_axis(Axis(0)).view());
        let d_input = dxa.dot(&self.mat(l.w1));

        // w embedding
        let mut dqa = dq;
        dqa.zip_mut_with(&c.q_pre[0], |v, &a| *v *= silu_grad(a));
        add_outer(&mut g, l.q[0], dqa.view(), w_arr);
        add_vec(&mut g, l.bq[0], dqa.view());
        let mut d_w = self.mat(l.q[0]).t().dot(&dqa);

        // sigma embedding
        let mut dsa = ds;
        dsa.zip_mut_with(&c.s_pre[0], |v, &a| *v *= silu_grad(a));
        add_mat(&mut g, l.sp[0], dsa.t().dot(&c.s_in).view());
        add_vec(&mut g, l.bsp[0], dsa.sum_axis(Axis(0)).view());
        let ds_in = dsa.dot(&self.mat(l.sp[0]));
        add_vec(&mut g, l.e, ds_in.t().dot(&ArrayView1::from(sigma)).view());
        add_vec(&mut g, l.be, ds_in.sum_axis(Axis(0)).view());

        // input = d * w / c
        let inv_scale = 1.0 / self.norm.input_scale;
        let mut dw_data = Array1::<f64>::zeros(l.n);
        for (gi, di) in d_input.rows().into_iter().zip(d.rows()) {
            ndarray::Zip::from(&mut dw_data)
                .and(&gi)
                .and(&di)
                .for_each(|acc, &a, &b| *acc += a * b * inv_scale);
        }
        d_w += &dw_data;
        let mut d_data = d_input;
        for mut row in d_data.rows_mut() {
            row.zip_mut_with(&w_arr, |v, &wi| *v *= wi * inv_scale);
        }

        Gradients {
            d_theta: g,
            d_w: d_w.to_vec(),
            d_data,
        }
    }
}

fn slot_mat_mut(g: &mut [f64], slot: Slot) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((slot.rows, slot.cols), &mut g[slot.offset..slot.offset + slot.len()])
        .expect("layout shape")
}

fn add_mat(g: &mut [f64], slot: Slot, m: ArrayView2<'_, f64>) {
    slot_mat_mut(g, slot).zip_mut_with(&m, |a, &b| *a += b);
}

fn add_vec(g: &mut [f64], slot: Slot, v: ArrayView1<'_, f64>) {
    ArrayViewMut1::from(&mut g[slot.offset..slot.offset + slot.rows]).zip_mut_with(&v, |a, &b| *a += b);
}

fn add_outer(g: &mut [f64], slot: Slot, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    let mut m = slot_mat_mut(g, slot);
    for (i, &ai) in a.iter().enumerate() {
        m.slice_mut(s![i, ..]).zip_mut_with(&b, |x, &bj| *x += ai * bj);
    }
}
