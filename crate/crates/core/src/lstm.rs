//! Single LSTM layer: forward recursion over a sequence and exact
//! backpropagation through time.
//!
//! Every partitioned tensor stores its gate blocks in the order
//! `[f, i, g, o]` (forget, input, update, output), each block `d_h` rows.

use serde::{Deserialize, Serialize};

use crate::error::{FddError, Result};
use crate::tensor::Tensor2;

/// Gate block indices inside the stacked `4·d_h` dimension.
pub const GATE_F: usize = 0;
pub const GATE_I: usize = 1;
pub const GATE_G: usize = 2;
pub const GATE_O: usize = 3;

/// Weights of one LSTM layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// Input weights, `4·d_h × d_x`.
    pub w: Tensor2,
    /// Recurrent weights, `4·d_h × d_h`.
    pub r: Tensor2,
    /// Bias, length `4·d_h`.
    pub b: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w: Tensor2::zeros(4 * hidden_dim, input_dim),
            r: Tensor2::zeros(4 * hidden_dim, hidden_dim),
            b: vec![0.0; 4 * hidden_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.r.cols()
    }

    /// Checks the internal partition sizes.
    pub fn validate(&self) -> Result<()> {
        let dh = self.hidden_dim();
        if self.w.rows() != 4 * dh || self.r.rows() != 4 * dh || self.b.len() != 4 * dh {
            return Err(FddError::dim(format!(
                "LSTM partitions inconsistent: W {:?}, R {:?}, b {} for d_h = {dh}",
                self.w.shape(),
                self.r.shape(),
                self.b.len()
            )));
        }
        Ok(())
    }

    /// Bias slice of one gate block.
    pub fn gate_bias(&self, gate: usize) -> &[f64] {
        let dh = self.hidden_dim();
        &self.b[gate * dh..(gate + 1) * dh]
    }

    pub fn gate_bias_mut(&mut self, gate: usize) -> &mut [f64] {
        let dh = self.hidden_dim();
        &mut self.b[gate * dh..(gate + 1) * dh]
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    input: Tensor2,
    params: LstmParams,
    /// `T+1` rows; row 0 is `h0`.
    h: Tensor2,
    /// `T+1` rows; row 0 is `c0`.
    c: Tensor2,
    /// Post-activation gates, `T × 4·d_h` in `[f, i, g, o]` order.
    gates: Tensor2,
    tanh_c: Tensor2,
}

impl LstmCache {
    pub fn steps(&self) -> usize {
        self.input.rows()
    }

    pub fn gates(&self) -> &Tensor2 {
        &self.gates
    }
}

/// Output of [`lstm_forward`].
#[derive(Debug, Clone)]
pub struct LstmOutput {
    /// `T × d_h`
    pub hidden: Tensor2,
    /// `T × d_h`
    pub cell: Tensor2,
    pub cache: LstmCache,
}

/// Gradients produced by [`lstm_backward`].
#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub params: LstmParams,
    /// `T × d_x`
    pub input: Tensor2,
    pub h0: Vec<f64>,
    pub c0: Vec<f64>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Runs the layer over `seq` (`T × d_x`) from initial state `(h0, c0)`.
pub fn lstm_forward(seq: &Tensor2, params: &LstmParams, h0: &[f64], c0: &[f64]) -> Result<LstmOutput> {
    params.validate()?;
    let dx = params.input_dim();
    let dh = params.hidden_dim();
    if seq.cols() != dx {
        return Err(FddError::dim(format!(
            "sequence has {} features, layer expects {dx}",
            seq.cols()
        )));
    }
    if h0.len() != dh || c0.len() != dh {
        return Err(FddError::dim(format!(
            "initial state lengths ({}, {}) do not match d_h = {dh}",
            h0.len(),
            c0.len()
        )));
    }
    if !seq.all_finite() || !h0.iter().chain(c0).all(|v| v.is_finite()) {
        return Err(FddError::Numeric("non-finite LSTM input".into()));
    }

    let steps = seq.rows();
    let mut h = Tensor2::zeros(steps + 1, dh);
    let mut c = Tensor2::zeros(steps + 1, dh);
    h.row_mut(0).copy_from_slice(h0);
    c.row_mut(0).copy_from_slice(c0);
    let mut gates = Tensor2::zeros(steps, 4 * dh);
    let mut tanh_c = Tensor2::zeros(steps, dh);
    let mut hidden = Tensor2::zeros(steps, dh);
    let mut cell = Tensor2::zeros(steps, dh);

    let mut pre = vec![0.0; 4 * dh];
    for t in 0..steps {
        pre.copy_from_slice(&params.b);
        params.w.matvec_acc(seq.row(t), &mut pre);
        params.r.matvec_acc(h.row(t), &mut pre);

        let g_row = gates.row_mut(t);
        for k in 0..dh {
            g_row[GATE_F * dh + k] = sigmoid(pre[GATE_F * dh + k]);
            g_row[GATE_I * dh + k] = sigmoid(pre[GATE_I * dh + k]);
            g_row[GATE_G * dh + k] = pre[GATE_G * dh + k].tanh();
            g_row[GATE_O * dh + k] = sigmoid(pre[GATE_O * dh + k]);
        }

        for k in 0..dh {
            let g_row = gates.row(t);
            let (f, i, g, o) = (
                g_row[GATE_F * dh + k],
                g_row[GATE_I * dh + k],
                g_row[GATE_G * dh + k],
                g_row[GATE_O * dh + k],
            );
            let c_prev = c.get(t, k);
            let c_t = f * c_prev + i * g;
            let tc = c_t.tanh();
            c.set(t + 1, k, c_t);
            tanh_c.set(t, k, tc);
            let h_t = o * tc;
            h.set(t + 1, k, h_t);
            hidden.set(t, k, h_t);
            cell.set(t, k, c_t);
        }
    }

    Ok(LstmOutput {
        hidden,
        cell,
        cache: LstmCache {
            input: seq.clone(),
            params: params.clone(),
            h,
            c,
            gates,
            tanh_c,
        },
    })
}

/// Backpropagation through time.
///
/// `grad_h` is the upstream gradient of the loss with respect to every
/// emitted hidden state (`T × d_h`); `grad_c_final` the gradient with respect
/// to the last cell state.
pub fn lstm_backward(cache: &LstmCache, grad_h: &Tensor2, grad_c_final: &[f64]) -> Result<LstmGrads> {
    let p = &cache.params;
    let dx = p.input_dim();
    let dh = p.hidden_dim();
    let steps = cache.steps();
    if grad_h.shape() != (steps, dh) {
        return Err(FddError::dim(format!(
            "hidden gradient shape {:?} does not match cache ({steps}, {dh})",
            grad_h.shape()
        )));
    }
    if grad_c_final.len() != dh {
        return Err(FddError::dim(format!(
            "final cell gradient has length {}, expected {dh}",
            grad_c_final.len()
        )));
    }

    let mut grads = LstmParams::zeros(dx, dh);
    let mut grad_input = Tensor2::zeros(steps, dx);
    let mut dh_next = vec![0.0; dh];
    let mut dc_next = grad_c_final.to_vec();
    let mut dpre = vec![0.0; 4 * dh];

    for t in (0..steps).rev() {
        let g_row = cache.gates.row(t);
        let c_prev = cache.c.row(t);
        let tc = cache.tanh_c.row(t);
        for k in 0..dh {
            let f = g_row[GATE_F * dh + k];
            let i = g_row[GATE_I * dh + k];
            let g = g_row[GATE_G * dh + k];
            let o = g_row[GATE_O * dh + k];
            let dh_t = grad_h.get(t, k) + dh_next[k];
            let d_o = dh_t * tc[k];
            let dc = dc_next[k] + dh_t * o * (1.0 - tc[k] * tc[k]);
            let d_f = dc * c_prev[k];
            let d_i = dc * g;
            let d_g = dc * i;
            dc_next[k] = dc * f;
            dpre[GATE_F * dh + k] = d_f * f * (1.0 - f);
            dpre[GATE_I * dh + k] = d_i * i * (1.0 - i);
            dpre[GATE_G * dh + k] = d_g * (1.0 - g * g);
            dpre[GATE_O * dh + k] = d_o * o * (1.0 - o);
        }
        grads.w.add_outer(&dpre, cache.input.row(t));
        grads.r.add_outer(&dpre, cache.h.row(t));
        for (gb, d) in grads.b.iter_mut().zip(&dpre) {
            *gb += d;
        }
        p.w.matvec_t_acc(&dpre, grad_input.row_mut(t));
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        p.r.matvec_t_acc(&dpre, &mut dh_next);
    }

    Ok(LstmGrads {
        params: grads,
        input: grad_input,
        h0: dh_next,
        c0: dc_next,
    })
}
