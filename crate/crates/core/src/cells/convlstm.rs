use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::CellState;
use crate::activation::Activation;
use crate::conv::{conv2d, conv2d_backward, ConvParams, Padding};
use crate::error::{Error, Result};
use crate::math;
use crate::params::{join, ParamSet};
use crate::tensor::Tensor;

/// ConvLSTM gate parameters.
///
/// The four gate convolutions are fused into one kernel over the channel
/// concatenation `[x, h]`, with output channel blocks ordered
/// `[input, candidate, forget, output]`, each `hidden` wide. Convolving the
/// concatenation is the same as summing separate `W_x * x` and `W_h * h`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvLstmParams {
    pub gates: ConvParams,
    pub candidate: Activation,
}

impl ConvLstmParams {
    pub fn zeros(input_channels: usize, hidden: usize, kernel: usize) -> Self {
        ConvLstmParams {
            gates: ConvParams::zeros(kernel, kernel, input_channels + hidden, 4 * hidden),
            candidate: Activation::Sigmoid,
        }
    }

    /// Uniform `±scale/√fan_in` weights, zero biases except the forget gate,
    /// which starts at `forget_bias`.
    pub fn random<R: Rng>(
        input_channels: usize,
        hidden: usize,
        kernel: usize,
        forget_bias: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(input_channels, hidden, kernel);
        let fan_in = (kernel * kernel * (input_channels + hidden)) as f64;
        let bound = 1.0 / math::sqrt(fan_in);
        for v in p.gates.kernel.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        for v in &mut p.gates.bias.data_mut()[2 * hidden..3 * hidden] {
            *v = forget_bias;
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.gates.c_out() / 4
    }

    pub fn input_channels(&self) -> usize {
        self.gates.c_in() - self.hidden()
    }

    pub fn validate(&self) -> Result<()> {
        self.gates.validate()?;
        let cout = self.gates.c_out();
        if cout == 0 || cout % 4 != 0 {
            return Err(Error::invalid(
                "convlstm",
                "gate channels must be a positive multiple of 4",
            ));
        }
        if self.gates.c_in() <= self.hidden() {
            return Err(Error::invalid(
                "convlstm",
                "gate input must include x and h channels",
            ));
        }
        Ok(())
    }
}

impl ParamSet for ConvLstmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.gates.visit(&join(prefix, "gates"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.gates.visit_mut(f);
    }
}

/// Intermediates of one gating pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct GateCache {
    /// `[x, h_prev]` as fed to the gate convolution.
    input: Tensor,
    /// Activated gates, `[H, W, 4·hidden]`.
    gates: Vec<f64>,
    c_prev: Tensor,
    tanh_c: Vec<f64>,
}

/// Gating against an (optionally warped) previous state.
pub(crate) fn gates_forward(
    params: &ConvLstmParams,
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
) -> Result<(CellState, GateCache)> {
    params.validate()?;
    let (h, w, cx) = x.hwc()?;
    let hid = params.hidden();
    if cx != params.input_channels() {
        return Err(Error::shape(
            "convlstm",
            "input channels",
            params.input_channels(),
            cx,
        ));
    }
    h_prev.expect_dims("convlstm", &[h, w, hid])?;
    c_prev.expect_dims("convlstm", &[h, w, hid])?;
    let input = Tensor::concat_channels(x, h_prev)?;
    let z = conv2d(&input, &params.gates, Padding::SameZero)?;
    let mut gates = z.into_data();
    let cp = c_prev.data();
    let mut c_new = vec![0.0; h * w * hid];
    let mut h_new = vec![0.0; h * w * hid];
    let mut tanh_c = vec![0.0; h * w * hid];
    for px in 0..h * w {
        let gz = &mut gates[px * 4 * hid..(px + 1) * 4 * hid];
        for k in 0..hid {
            gz[k] = math::sigmoid(gz[k]);
            gz[hid + k] = params.candidate.apply_scalar(gz[hid + k]);
            gz[2 * hid + k] = math::sigmoid(gz[2 * hid + k]);
            gz[3 * hid + k] = math::sigmoid(gz[3 * hid + k]);
            let o = px * hid + k;
            let c = gz[2 * hid + k] * cp[o] + gz[k] * gz[hid + k];
            let t = math::tanh(c);
            c_new[o] = c;
            tanh_c[o] = t;
            h_new[o] = gz[3 * hid + k] * t;
        }
    }
    let dims = vec![h, w, hid];
    Ok((
        CellState {
            h: Tensor::new(dims.clone(), h_new)?,
            c: Tensor::new(dims, c_new)?,
        },
        GateCache {
            input,
            gates,
            c_prev: c_prev.clone(),
            tanh_c,
        },
    ))
}

/// Gradients leaving the gating pass.
pub(crate) struct GateGrads {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    pub params: ConvLstmParams,
}

pub(crate) fn gates_backward(
    params: &ConvLstmParams,
    cache: &GateCache,
    grad_h: &Tensor,
    grad_c: &Tensor,
) -> Result<GateGrads> {
    let (h, w, hid) = cache.c_prev.hwc()?;
    grad_h.expect_dims("convlstm_backward", &[h, w, hid])?;
    grad_c.expect_dims("convlstm_backward", &[h, w, hid])?;
    let dh = grad_h.data();
    let dc_in = grad_c.data();
    let cp = cache.c_prev.data();
    let mut dz = vec![0.0; h * w * 4 * hid];
    let mut dc_prev = vec![0.0; h * w * hid];
    for px in 0..h * w {
        let g = &cache.gates[px * 4 * hid..(px + 1) * 4 * hid];
        let dzp = &mut dz[px * 4 * hid..(px + 1) * 4 * hid];
        for k in 0..hid {
            let o = px * hid + k;
            let (ig, gg, fg, og) = (g[k], g[hid + k], g[2 * hid + k], g[3 * hid + k]);
            let t = cache.tanh_c[o];
            let dc = dc_in[o] + dh[o] * og * (1.0 - t * t);
            dzp[k] = dc * gg * ig * (1.0 - ig);
            dzp[hid + k] = dc * ig * params.candidate.derivative_from_output(gg);
            dzp[2 * hid + k] = dc * cp[o] * fg * (1.0 - fg);
            dzp[3 * hid + k] = dh[o] * t * og * (1.0 - og);
            dc_prev[o] = dc * fg;
        }
    }
    let dz = Tensor::new(vec![h, w, 4 * hid], dz)?;
    let cg = conv2d_backward(&cache.input, &params.gates, Padding::SameZero, &dz)?;
    let cx = params.input_channels();
    let mut parts = cg.input.split_channels(&[cx, hid])?;
    let h_prev = parts.pop().unwrap_or_else(|| Tensor::zeros(&[h, w, hid]));
    let x = parts.pop().unwrap_or_else(|| Tensor::zeros(&[h, w, cx]));
    Ok(GateGrads {
        x,
        h_prev,
        c_prev: Tensor::new(vec![h, w, hid], dc_prev)?,
        params: ConvLstmParams {
            gates: cg.params,
            candidate: params.candidate,
        },
    })
}

/// One ConvLSTM step.
pub fn convlstm_step(params: &ConvLstmParams, x: &Tensor, prev: &CellState) -> Result<CellState> {
    Ok(gates_forward(params, x, &prev.h, &prev.c)?.0)
}
