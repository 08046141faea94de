use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::convlstm::{gates_backward, gates_forward, ConvLstmParams, GateCache};
use super::{CellState, StepGrads};
use crate::conv::{conv2d, conv2d_backward, ConvParams, Padding};
use crate::error::{Error, Result};
use crate::params::{join, ParamSet};
use crate::sample::{warp_by_flow, warp_by_flow_backward};
use crate::tensor::Tensor;

/// Reduced trajectory-LSTM baseline: `links` dense flows are predicted by a
/// convolution on `[x, h_prev]`; the previous hidden state is warped by
/// each, and the warped copies are merged by a 1×1 convolution. The memory
/// cell is warped by the mean flow.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrajLstmParams {
    pub base: ConvLstmParams,
    pub links: usize,
    /// Output channels `2·links`, ordered `(dy, dx)` per link.
    pub flow: ConvParams,
    /// `links·hidden → hidden`, 1×1.
    pub aggregate: ConvParams,
}

impl TrajLstmParams {
    /// Zero flows and an averaging aggregate: starts out as a ConvLSTM.
    pub fn from_base(base: ConvLstmParams, links: usize, flow_kernel: usize) -> Self {
        let hid = base.hidden();
        let cin = base.gates.c_in();
        let mut aggregate = ConvParams::zeros(1, 1, links * hid, hid);
        let inv = 1.0 / links as f64;
        for l in 0..links {
            for k in 0..hid {
                aggregate.kernel.data_mut()[(l * hid + k) * hid + k] = inv;
            }
        }
        TrajLstmParams {
            base,
            links,
            flow: ConvParams::zeros(flow_kernel, flow_kernel, cin, 2 * links),
            aggregate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.links == 0 {
            return Err(Error::invalid("trajlstm", "links must be >= 1"));
        }
        let hid = self.base.hidden();
        if self.flow.c_out() != 2 * self.links {
            return Err(Error::shape(
                "trajlstm",
                "flow channels",
                2 * self.links,
                self.flow.c_out(),
            ));
        }
        if self.flow.c_in() != self.base.gates.c_in() {
            return Err(Error::shape(
                "trajlstm",
                "flow input channels",
                self.base.gates.c_in(),
                self.flow.c_in(),
            ));
        }
        if self.aggregate.c_in() != self.links * hid || self.aggregate.c_out() != hid {
            return Err(Error::shape(
                "trajlstm",
                "aggregate channels",
                self.links * hid,
                self.aggregate.c_in(),
            ));
        }
        Ok(())
    }
}

impl ParamSet for TrajLstmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.base.visit(prefix, f);
        self.flow.visit(&join(prefix, "flow"), f);
        self.aggregate.visit(&join(prefix, "aggregate"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.base.visit_mut(f);
        self.flow.visit_mut(f);
        self.aggregate.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TrajCache {
    flow_input: Tensor,
    flows: Vec<Tensor>,
    mean_flow: Tensor,
    stacked: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    gates: GateCache,
}

pub(crate) fn trajlstm_forward(
    params: &TrajLstmParams,
    x: &Tensor,
    prev: &CellState,
) -> Result<(CellState, TrajCache)> {
    params.validate()?;
    let flow_input = Tensor::concat_channels(x, &prev.h)?;
    let all = conv2d(&flow_input, &params.flow, Padding::SameZero)?;
    let flows = all.split_channels(&vec![2; params.links])?;
    let warped: Vec<Tensor> = flows
        .iter()
        .map(|f| warp_by_flow(&prev.h, f))
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = warped.iter().collect();
    let stacked = Tensor::concat_many(&refs)?;
    let h_warp = conv2d(&stacked, &params.aggregate, Padding::SameZero)?;
    let mut mean_flow = Tensor::zeros_like(&flows[0]);
    for f in &flows {
        mean_flow.add_assign(f)?;
    }
    let mean_flow = mean_flow.scale(1.0 / params.links as f64);
    let c_warp = warp_by_flow(&prev.c, &mean_flow)?;
    let (state, gates) = gates_forward(&params.base, x, &h_warp, &c_warp)?;
    Ok((
        state,
        TrajCache {
            flow_input,
            flows,
            mean_flow,
            stacked,
            h_prev: prev.h.clone(),
            c_prev: prev.c.clone(),
            gates,
        },
    ))
}

pub(crate) fn trajlstm_backward(
    params: &TrajLstmParams,
    cache: &TrajCache,
    grad_h: &Tensor,
    grad_c: &Tensor,
) -> Result<StepGrads<TrajLstmParams>> {
    let mut grads = params.zeros_like();
    let gg = gates_backward(&params.base, &cache.gates, grad_h, grad_c)?;
    grads.base = gg.params;

    let ag = conv2d_backward(
        &cache.stacked,
        &params.aggregate,
        Padding::SameZero,
        &gg.h_prev,
    )?;
    grads.aggregate = ag.params;
    let hid = params.base.hidden();
    let gwarped = ag.input.split_channels(&vec![hid; params.links])?;

    let (gc_prev, gmean) = warp_by_flow_backward(&cache.c_prev, &cache.mean_flow, &gg.c_prev)?;
    let gmean = gmean.scale(1.0 / params.links as f64);
    let mut gh_prev = Tensor::zeros_like(&cache.h_prev);
    let mut gflows = Vec::with_capacity(params.links);
    for (f, gw) in cache.flows.iter().zip(&gwarped) {
        let (gh, mut gf) = warp_by_flow_backward(&cache.h_prev, f, gw)?;
        gh_prev.add_assign(&gh)?;
        gf.add_assign(&gmean)?;
        gflows.push(gf);
    }
    let refs: Vec<&Tensor> = gflows.iter().collect();
    let gall = Tensor::concat_many(&refs)?;
    let fg = conv2d_backward(&cache.flow_input, &params.flow, Padding::SameZero, &gall)?;
    grads.flow = fg.params;
    let cx = params.base.input_channels();
    let parts = fg.input.split_channels(&[cx, hid])?;
    gh_prev.add_assign(&parts[1])?;
    let mut gx = gg.x;
    gx.add_assign(&parts[0])?;
    Ok(StepGrads {
        x: gx,
        h_prev: gh_prev,
        c_prev: gc_prev,
        params: grads,
    })
}

pub fn trajlstm_step(params: &TrajLstmParams, x: &Tensor, prev: &CellState) -> Result<CellState> {
    Ok(trajlstm_forward(params, x, prev)?.0)
}
