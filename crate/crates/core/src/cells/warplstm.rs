use alloc::string::String;
use alloc::vec::Vec;

use super::bottleneck::Bottleneck;
use super::convlstm::{gates_backward, gates_forward, ConvLstmParams, GateCache};
use super::{CellState, StepGrads};
use crate::conv::{conv2d, conv2d_backward, ConvParams, Padding};
use crate::error::{Error, Result};
use crate::params::{join, ParamSet};
use crate::spline::{ControlPointSet, Displacement, FlowField, SparseWarp, WarpConfig};
use crate::tensor::Tensor;

/// Warp LSTM parameters: ConvLSTM gates plus a 1×1 displacement head whose
/// two output channels are `(dx, dy)`, read at the control-point grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WarpLstmParams {
    pub base: ConvLstmParams,
    pub disp: ConvParams,
    /// `(horizontal lines, vertical lines)` of the control grid.
    pub grid: (usize, usize),
    pub warp: WarpConfig,
    /// Add the zero-displacement corner and edge-midpoint control points.
    pub boundary: bool,
    pub bottleneck: Option<Bottleneck>,
}

impl WarpLstmParams {
    /// Wraps `base` with a zero displacement head, so the cell starts out as
    /// an exact ConvLSTM.
    pub fn from_base(base: ConvLstmParams, grid: (usize, usize)) -> Self {
        let cin = base.gates.c_in();
        WarpLstmParams {
            base,
            disp: ConvParams::zeros(1, 1, cin, 2),
            grid,
            warp: WarpConfig::default(),
            boundary: true,
            bottleneck: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.disp.validate()?;
        if self.disp.c_out() != 2 {
            return Err(Error::shape(
                "warplstm",
                "displacement channels",
                2,
                self.disp.c_out(),
            ));
        }
        if self.disp.c_in() != self.base.gates.c_in() {
            return Err(Error::shape(
                "warplstm",
                "displacement input channels",
                self.base.gates.c_in(),
                self.disp.c_in(),
            ));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::invalid(
                "warplstm",
                "control grid must be at least 1x1",
            ));
        }
        Ok(())
    }

    fn control_grid(&self, h: usize, w: usize) -> Result<ControlPointSet> {
        ControlPointSet::grid(h, w, self.grid.0, self.grid.1, self.boundary)
    }
}

impl ParamSet for WarpLstmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.base.visit(prefix, f);
        self.disp.visit(&join(prefix, "disp"), f);
        self.bottleneck.visit(&join(prefix, "bottleneck"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.base.visit_mut(f);
        self.disp.visit_mut(f);
        self.bottleneck.visit_mut(f);
    }
}

/// Displacements for each grid control point, gathered from the 2-channel
/// displacement map `d = W_d * [x, h_prev] + b_d`. `x` is the cell-level
/// input (after any bottleneck projection).
pub fn predict_displacements(
    params: &WarpLstmParams,
    x: &Tensor,
    h_prev: &Tensor,
) -> Result<ControlPointSet> {
    params.validate()?;
    let input = Tensor::concat_channels(x, h_prev)?;
    let (h, w, _) = input.hwc()?;
    let dmap = conv2d(&input, &params.disp, Padding::SameZero)?;
    gather(&params.control_grid(h, w)?, &dmap)
}

fn gather(grid: &ControlPointSet, dmap: &Tensor) -> Result<ControlPointSet> {
    let d = grid
        .interior()
        .iter()
        .map(|p| {
            let (y, x) = (p.y as usize, p.x as usize);
            Displacement::new(dmap.at3(y, x, 0), dmap.at3(y, x, 1))
        })
        .collect();
    grid.with_displacements(d)
}

#[derive(Debug, Clone)]
pub struct WarpLstmOutput {
    pub state: CellState,
    /// Dense flow used to warp the previous state.
    pub flow: FlowField,
    pub control_points: ControlPointSet,
    /// Exported representation: `h`, or the bottleneck output.
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub(crate) struct WarpCache {
    x: Tensor,
    x_cell: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    disp_input: Tensor,
    control_points: ControlPointSet,
    plan: SparseWarp,
    gates: GateCache,
    h_new: Tensor,
}

pub(crate) fn warplstm_forward(
    params: &WarpLstmParams,
    x: &Tensor,
    prev: &CellState,
) -> Result<(WarpLstmOutput, WarpCache)> {
    params.validate()?;
    let x_cell = match &params.bottleneck {
        Some(b) => b.project_in(x)?,
        None => x.clone(),
    };
    let disp_input = Tensor::concat_channels(&x_cell, &prev.h)?;
    let (h, w, _) = disp_input.hwc()?;
    let dmap = conv2d(&disp_input, &params.disp, Padding::SameZero)?;
    let cps = gather(&params.control_grid(h, w)?, &dmap)?;
    let plan = SparseWarp::plan(&cps, h, w, &params.warp)?;
    let h_warp = plan.apply(&prev.h)?;
    let c_warp = plan.apply(&prev.c)?;
    let (state, gates) = gates_forward(&params.base, &x_cell, &h_warp, &c_warp)?;
    let output = match &params.bottleneck {
        Some(b) => b.project_out(x, &state.h)?,
        None => state.h.clone(),
    };
    let out = WarpLstmOutput {
        state: state.clone(),
        flow: plan.flow().clone(),
        control_points: cps.clone(),
        output,
    };
    let cache = WarpCache {
        x: x.clone(),
        x_cell,
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        disp_input,
        control_points: cps,
        plan,
        gates,
        h_new: state.h,
    };
    Ok((out, cache))
}

pub(crate) fn warplstm_backward(
    params: &WarpLstmParams,
    cache: &WarpCache,
    grad_output: &Tensor,
    grad_h: &Tensor,
    grad_c: &Tensor,
) -> Result<StepGrads<WarpLstmParams>> {
    let mut grads = params.zeros_like();
    let mut gx_direct = None;
    let gh_total = match &params.bottleneck {
        Some(b) => {
            let (gx, gh, gb) = b.project_out_backward(&cache.x, &cache.h_new, grad_output)?;
            gx_direct = Some(gx);
            grads.bottleneck = Some(gb);
            gh.add(grad_h)?
        }
        None => grad_output.add(grad_h)?,
    };
    let gg = gates_backward(&params.base, &cache.gates, &gh_total, grad_c)?;
    grads.base = gg.params;

    let (mut gh_prev, gflow_h) = cache.plan.apply_backward(&cache.h_prev, &gg.h_prev)?;
    let (gc_prev, gflow_c) = cache.plan.apply_backward(&cache.c_prev, &gg.c_prev)?;
    let gflow = gflow_h.add(&gflow_c)?;
    let gdisp = cache.plan.backward_flow(&gflow)?;

    let (h, w, _) = cache.disp_input.hwc()?;
    let mut gdmap = Tensor::zeros(&[h, w, 2]);
    for (p, g) in cache.control_points.interior().iter().zip(&gdisp) {
        let (y, x) = (p.y as usize, p.x as usize);
        *gdmap.at3_mut(y, x, 0) += g.dx;
        *gdmap.at3_mut(y, x, 1) += g.dy;
    }
    let dg = conv2d_backward(&cache.disp_input, &params.disp, Padding::SameZero, &gdmap)?;
    grads.disp = dg.params;
    let cx = cache.x_cell.dims()[2];
    let hid = params.base.hidden();
    let parts: Vec<Tensor> = dg.input.split_channels(&[cx, hid])?;
    gh_prev.add_assign(&parts[1])?;
    let mut gx_cell = gg.x;
    gx_cell.add_assign(&parts[0])?;

    let gx = match &params.bottleneck {
        Some(b) => {
            let gb = grads.bottleneck.as_mut().expect("set above");
            let mut gx = b.project_in_backward(&cache.x, &gx_cell, gb)?;
            if let Some(d) = gx_direct {
                gx.add_assign(&d)?;
            }
            gx
        }
        None => gx_cell,
    };
    Ok(StepGrads {
        x: gx,
        h_prev: gh_prev,
        c_prev: gc_prev,
        params: grads,
    })
}

/// One warp LSTM step: predict control-point displacements, warp `h` and
/// `c` with the same dense flow, then gate as in ConvLSTM.
pub fn warplstm_step(
    params: &WarpLstmParams,
    x: &Tensor,
    prev: &CellState,
) -> Result<WarpLstmOutput> {
    Ok(warplstm_forward(params, x, prev)?.0)
}
