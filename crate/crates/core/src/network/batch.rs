//! Batched forward/backward pass of the composite model.
//!
//! Evaluates `v` and `dv/dt` for many probe points at once, keeping the
//! activations, then back-propagates adjoints of both outputs into the flat
//! parameter gradient. The layer algebra is the hand-derived reverse mode of
//! the dual-number forward pass, so it agrees with the scalar tape route up to
//! rounding. Probes sharing a time share one locator evaluation.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};

use super::{DenseLayer, MlpLayout, ModelLayout, ModelSpec, ShockInputs};
use crate::autodiff::{sigmoid, softplus};

/// A spatial sample attached to one of the batch's distinct times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub slot: usize,
    pub r: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeBatch {
    pub times: Vec<f64>,
    pub probes: Vec<Probe>,
}

impl ProbeBatch {
    pub fn push_time(&mut self, t: f64) -> usize {
        self.times.push(t);
        self.times.len() - 1
    }

    pub fn push_probe(&mut self, slot: usize, r: f64) -> usize {
        debug_assert!(slot < self.times.len());
        self.probes.push(Probe { slot, r });
        self.probes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }
}

fn weights<'a>(params: &'a [f64], l: &DenseLayer) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((l.n_out, l.n_in), &params[l.w..l.b]).expect("layer shape")
}

fn weights_mut<'a>(grad: &'a mut [f64], l: &DenseLayer) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((l.n_out, l.n_in), &mut grad[l.w..l.b]).expect("layer shape")
}

/// Activations of one dense network over a batch (columns are points).
#[derive(Debug, Clone)]
struct MlpTrace {
    /// Layer inputs: `values[0]` is the network input, `values[l]` the output
    /// of hidden layer `l - 1`.
    values: Vec<Array2<f64>>,
    tangents: Vec<Array2<f64>>,
    y: Vec<f64>,
    y_dot: Vec<f64>,
}

fn mlp_forward(net: &MlpLayout, params: &[f64], x: Array2<f64>, x_dot: Array2<f64>) -> MlpTrace {
    let n = x.ncols();
    let mut values = vec![x];
    let mut tangents = vec![x_dot];
    for layer in net.layers.iter() {
        let w = weights(params, layer);
        let prev = values.last().expect("input");
        let prev_dot = tangents.last().expect("input");
        let mut z = Array2::<f64>::zeros((layer.n_out, n));
        let mut z_dot = Array2::<f64>::zeros((layer.n_out, n));
        general_mat_mul(1.0, &w, prev, 0.0, &mut z);
        general_mat_mul(1.0, &w, prev_dot, 0.0, &mut z_dot);
        let hidden = !std::ptr::eq(layer, net.output());
        for (o, (mut zr, mut zdr)) in z.outer_iter_mut().zip(z_dot.outer_iter_mut()).enumerate() {
            let b = params[layer.b + o];
            if hidden {
                for (a, ad) in zr.iter_mut().zip(zdr.iter_mut()) {
                    let y = (*a + b).tanh();
                    *a = y;
                    *ad *= 1.0 - y * y;
                }
            } else {
                zr.mapv_inplace(|a| a + b);
            }
        }
        values.push(z);
        tangents.push(z_dot);
    }
    let y = values.pop().expect("output").row(0).to_vec();
    let y_dot = tangents.pop().expect("output").row(0).to_vec();
    MlpTrace { values, tangents, y, y_dot }
}

/// Accumulates parameter gradients; returns input adjoints when requested.
fn mlp_backward(
    net: &MlpLayout,
    params: &[f64],
    trace: &MlpTrace,
    y_bar: &[f64],
    y_dot_bar: &[f64],
    grad: &mut [f64],
    want_input: bool,
) -> Option<(Array2<f64>, Array2<f64>)> {
    let n = y_bar.len();
    let mut z_bar = Array2::from_shape_vec((1, n), y_bar.to_vec()).expect("shape");
    let mut z_dot_bar = Array2::from_shape_vec((1, n), y_dot_bar.to_vec()).expect("shape");
    for (l, layer) in net.layers.iter().enumerate().rev() {
        let x = &trace.values[l];
        let x_dot = &trace.tangents[l];
        {
            let mut w_bar = weights_mut(grad, layer);
            general_mat_mul(1.0, &z_bar, &x.t(), 1.0, &mut w_bar);
            general_mat_mul(1.0, &z_dot_bar, &x_dot.t(), 1.0, &mut w_bar);
        }
        for (o, row) in z_bar.outer_iter().enumerate() {
            grad[layer.b + o] += row.sum();
        }
        if l == 0 && !want_input {
            return None;
        }
        let w = weights(params, layer);
        let mut a_bar = Array2::<f64>::zeros((layer.n_in, n));
        let mut a_dot_bar = Array2::<f64>::zeros((layer.n_in, n));
        general_mat_mul(1.0, &w.t(), &z_bar, 0.0, &mut a_bar);
        general_mat_mul(1.0, &w.t(), &z_dot_bar, 0.0, &mut a_dot_bar);
        if l == 0 {
            return Some((a_bar, a_dot_bar));
        }
        // Through a = tanh(z), a_dot = (1 - a^2) z_dot:
        //   z_dot_bar = (1 - a^2) a_dot_bar
        //   z_bar     = (1 - a^2) a_bar - 2 a a_dot a_dot_bar
        ndarray::Zip::from(&mut a_bar)
            .and(&mut a_dot_bar)
            .and(x)
            .and(x_dot)
            .for_each(|ab, adb, &a, &ad| {
                let s = 1.0 - a * a;
                *ab = s * *ab - 2.0 * a * ad * *adb;
                *adb *= s;
            });
        z_bar = a_bar;
        z_dot_bar = a_dot_bar;
    }
    None
}

/// Forward results and cached intermediates for one [`ProbeBatch`].
#[derive(Debug, Clone)]
pub struct BatchEval {
    /// Model output per probe.
    pub v: Vec<f64>,
    /// Time derivative of the output per probe.
    pub v_t: Vec<f64>,
    /// Shock location per time slot.
    pub r_s: Vec<f64>,
    /// Smoothed indicator per probe.
    pub h: Vec<f64>,
    smooth: MlpTrace,
    locator: MlpTrace,
    shock: MlpTrace,
    locator_sigmoid: Vec<f64>,
    r_s_dot: Vec<f64>,
    k: f64,
}

impl BatchEval {
    pub fn forward(spec: &ModelSpec, layout: &ModelLayout, params: &[f64], batch: &ProbeBatch) -> Self {
        let sc = &spec.scaling;
        let n = batch.probes.len();
        let n_slots = batch.times.len();
        let dt_hat = 1.0 / sc.t_half_width;
        let length = spec.domain.length();

        let loc_x = Array2::from_shape_fn((1, n_slots), |(_, j)| sc.t_hat(batch.times[j]));
        let loc_x_dot = Array2::from_elem((1, n_slots), dt_hat);
        let locator = mlp_forward(&layout.locator, params, loc_x, loc_x_dot);
        let locator_sigmoid: Vec<f64> = locator.y.iter().map(|&z| sigmoid(z)).collect();
        let r_s: Vec<f64> = locator_sigmoid.iter().map(|&s| spec.domain.r_min + length * s).collect();
        let r_s_dot: Vec<f64> = locator_sigmoid
            .iter()
            .zip(&locator.y_dot)
            .map(|(&s, &zd)| length * s * (1.0 - s) * zd)
            .collect();

        let k = softplus(params[layout.sharpness]);
        let mut h = Vec::with_capacity(n);
        let mut h_dot = Vec::with_capacity(n);
        for p in &batch.probes {
            let hv = sigmoid(k * (p.r - r_s[p.slot]));
            h.push(hv);
            h_dot.push(hv * (1.0 - hv) * (-k * r_s_dot[p.slot]));
        }

        let smooth_x = Array2::from_shape_fn((2, n), |(i, j)| {
            let p = &batch.probes[j];
            if i == 0 {
                sc.t_hat(batch.times[p.slot])
            } else {
                sc.r_hat(p.r)
            }
        });
        let mut smooth_x_dot = Array2::zeros((2, n));
        smooth_x_dot.row_mut(0).fill(dt_hat);
        let (shock_x, shock_x_dot) = match spec.shock_inputs {
            ShockInputs::TimeRadiusIndicator => {
                let mut x = Array2::zeros((3, n));
                x.slice_mut(ndarray::s![0..2, ..]).assign(&smooth_x);
                x.row_mut(2).assign(&ndarray::ArrayView1::from(&h));
                let mut x_dot = Array2::zeros((3, n));
                x_dot.row_mut(0).fill(dt_hat);
                x_dot.row_mut(2).assign(&ndarray::ArrayView1::from(&h_dot));
                (x, x_dot)
            }
            ShockInputs::IndicatorOnly => (
                Array2::from_shape_vec((1, n), h.clone()).expect("shape"),
                Array2::from_shape_vec((1, n), h_dot).expect("shape"),
            ),
        };

        let smooth = mlp_forward(&layout.smooth, params, smooth_x, smooth_x_dot);
        let shock = mlp_forward(&layout.shock, params, shock_x, shock_x_dot);
        let v = smooth.y.iter().zip(&shock.y).map(|(a, b)| a + b).collect();
        let v_t = smooth.y_dot.iter().zip(&shock.y_dot).map(|(a, b)| a + b).collect();
        Self { v, v_t, r_s, h, smooth, locator, shock, locator_sigmoid, r_s_dot, k }
    }

    /// Adds `sum_i v_bar[i] dv_i/dparams + v_t_bar[i] d(v_t)_i/dparams` to `grad`.
    pub fn backward(
        &self,
        layout: &ModelLayout,
        spec: &ModelSpec,
        params: &[f64],
        batch: &ProbeBatch,
        v_bar: &[f64],
        v_t_bar: &[f64],
        grad: &mut [f64],
    ) {
        debug_assert_eq!(v_bar.len(), batch.probes.len());
        mlp_backward(&layout.smooth, params, &self.smooth, v_bar, v_t_bar, grad, false);
        let (x_bar, x_dot_bar) =
            mlp_backward(&layout.shock, params, &self.shock, v_bar, v_t_bar, grad, true).expect("input adjoints");
        let row = spec.shock_inputs.width() - 1;
        let h_bar = x_bar.index_axis(Axis(0), row);
        let h_dot_bar = x_dot_bar.index_axis(Axis(0), row);

        let k = self.k;
        let n_slots = batch.times.len();
        let mut r_s_bar = vec![0.0; n_slots];
        let mut r_s_dot_bar = vec![0.0; n_slots];
        let mut k_bar = 0.0;
        for (i, p) in batch.probes.iter().enumerate() {
            // h = sigmoid(u), u = k (r - r_s);  h_dot = sigmoid'(u) q, q = -k r_s_dot
            let hv = self.h[i];
            let d1 = hv * (1.0 - hv);
            let d2 = d1 * (1.0 - 2.0 * hv);
            let q = -k * self.r_s_dot[p.slot];
            let u_bar = h_bar[i] * d1 + h_dot_bar[i] * q * d2;
            let q_bar = h_dot_bar[i] * d1;
            k_bar += u_bar * (p.r - self.r_s[p.slot]) - q_bar * self.r_s_dot[p.slot];
            r_s_bar[p.slot] -= k * u_bar;
            r_s_dot_bar[p.slot] -= k * q_bar;
        }

        let length = spec.domain.length();
        let mut z_bar = vec![0.0; n_slots];
        let mut z_dot_bar = vec![0.0; n_slots];
        for j in 0..n_slots {
            let s = self.locator_sigmoid[j];
            let d1 = s * (1.0 - s);
            let d2 = d1 * (1.0 - 2.0 * s);
            z_bar[j] = length * (r_s_bar[j] * d1 + r_s_dot_bar[j] * d2 * self.locator.y_dot[j]);
            z_dot_bar[j] = length * r_s_dot_bar[j] * d1;
        }
        mlp_backward(&layout.locator, params, &self.locator, &z_bar, &z_dot_bar, grad, false);
        grad[layout.sharpness] += k_bar * sigmoid(params[layout.sharpness]);
    }
}
