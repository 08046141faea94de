//! Recurrent convolutional cells: ConvLSTM, warp LSTM and a reduced
//! trajectory-LSTM baseline, with explicit backward passes for
//! back-propagation through time.

mod bottleneck;
mod convlstm;
mod trajlstm;
mod warplstm;

use alloc::string::String;
use alloc::vec::Vec;

pub use bottleneck::Bottleneck;
pub use convlstm::{convlstm_step, ConvLstmParams};
pub use trajlstm::{trajlstm_step, TrajLstmParams};
pub use warplstm::{predict_displacements, warplstm_step, WarpLstmOutput, WarpLstmParams};

pub(crate) use convlstm::{gates_backward, gates_forward, GateCache};

use crate::error::Result;
use crate::params::ParamSet;
use crate::spline::FlowField;
use crate::tensor::Tensor;

/// Hidden state `h` and memory cell `c`, both `[H, W, hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Tensor,
    pub c: Tensor,
}

impl CellState {
    pub fn zeros(h: usize, w: usize, hidden: usize) -> Self {
        CellState {
            h: Tensor::zeros(&[h, w, hidden]),
            c: Tensor::zeros(&[h, w, hidden]),
        }
    }
}

/// Cotangents leaving one step.
#[derive(Debug, Clone)]
pub struct StepGrads<P> {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    pub params: P,
}

/// A recurrent cell of any supported kind.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Cell {
    ConvLstm(ConvLstmParams),
    WarpLstm(WarpLstmParams),
    TrajLstm(TrajLstmParams),
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: CellState,
    /// Exported representation.
    pub output: Tensor,
    /// Flow used to warp the previous state (warp LSTM only).
    pub flow: Option<FlowField>,
}

#[derive(Debug, Clone)]
pub struct StepCache(CacheKind);

#[derive(Debug, Clone)]
enum CacheKind {
    Conv(GateCache),
    Warp(warplstm::WarpCache),
    Traj(trajlstm::TrajCache),
}

impl Cell {
    pub fn hidden(&self) -> usize {
        self.base().hidden()
    }

    pub fn base(&self) -> &ConvLstmParams {
        match self {
            Cell::ConvLstm(p) => p,
            Cell::WarpLstm(p) => &p.base,
            Cell::TrajLstm(p) => &p.base,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Cell::ConvLstm(_) => "convlstm",
            Cell::WarpLstm(_) => "warplstm",
            Cell::TrajLstm(_) => "trajlstm",
        }
    }

    pub fn step(&self, x: &Tensor, prev: &CellState) -> Result<CellState> {
        Ok(self.forward(x, prev)?.0.state)
    }

    pub fn forward(&self, x: &Tensor, prev: &CellState) -> Result<(StepOutput, StepCache)> {
        match self {
            Cell::ConvLstm(p) => {
                let (state, cache) = gates_forward(p, x, &prev.h, &prev.c)?;
                let output = state.h.clone();
                Ok((
                    StepOutput {
                        state,
                        output,
                        flow: None,
                    },
                    StepCache(CacheKind::Conv(cache)),
                ))
            }
            Cell::WarpLstm(p) => {
                let (out, cache) = warplstm::warplstm_forward(p, x, prev)?;
                Ok((
                    StepOutput {
                        state: out.state,
                        output: out.output,
                        flow: Some(out.flow),
                    },
                    StepCache(CacheKind::Warp(cache)),
                ))
            }
            Cell::TrajLstm(p) => {
                let (state, cache) = trajlstm::trajlstm_forward(p, x, prev)?;
                let output = state.h.clone();
                Ok((
                    StepOutput {
                        state,
                        output,
                        flow: None,
                    },
                    StepCache(CacheKind::Traj(cache)),
                ))
            }
        }
    }

    /// Back-propagates one step. `grad_output` is the cotangent of the
    /// exported representation, `grad_h`/`grad_c` those of the new state
    /// arriving from later steps.
    pub fn backward(
        &self,
        cache: &StepCache,
        grad_output: &Tensor,
        grad_h: &Tensor,
        grad_c: &Tensor,
    ) -> Result<StepGrads<Cell>> {
        match (self, &cache.0) {
            (Cell::ConvLstm(p), CacheKind::Conv(c)) => {
                let g = gates_backward(p, c, &grad_output.add(grad_h)?, grad_c)?;
                Ok(StepGrads {
                    x: g.x,
                    h_prev: g.h_prev,
                    c_prev: g.c_prev,
                    params: Cell::ConvLstm(g.params),
                })
            }
            (Cell::WarpLstm(p), CacheKind::Warp(c)) => {
                let g = warplstm::warplstm_backward(p, c, grad_output, grad_h, grad_c)?;
                Ok(StepGrads {
                    x: g.x,
                    h_prev: g.h_prev,
                    c_prev: g.c_prev,
                    params: Cell::WarpLstm(g.params),
                })
            }
            (Cell::TrajLstm(p), CacheKind::Traj(c)) => {
                let g = trajlstm::trajlstm_backward(p, c, &grad_output.add(grad_h)?, grad_c)?;
                Ok(StepGrads {
                    x: g.x,
                    h_prev: g.h_prev,
                    c_prev: g.c_prev,
                    params: Cell::TrajLstm(g.params),
                })
            }
            _ => Err(crate::Error::invalid(
                "cell_backward",
                "cache does not match cell kind",
            )),
        }
    }
}

impl ParamSet for Cell {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        match self {
            Cell::ConvLstm(p) => p.visit(prefix, f),
            Cell::WarpLstm(p) => p.visit(prefix, f),
            Cell::TrajLstm(p) => p.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        match self {
            Cell::ConvLstm(p) => p.visit_mut(f),
            Cell::WarpLstm(p) => p.visit_mut(f),
            Cell::TrajLstm(p) => p.visit_mut(f),
        }
    }
}

/// Left fold of the cell's step over `inputs`, returning every state.
/// A missing initial state is all zeros.
pub fn run_sequence(
    cell: &Cell,
    inputs: &[Tensor],
    init: Option<CellState>,
) -> Result<Vec<CellState>> {
    let Some(first) = inputs.first() else {
        return Ok(Vec::new());
    };
    let (h, w, _) = first.hwc()?;
    for x in inputs {
        x.expect_same_dims("run_sequence", first)?;
    }
    let mut state = init.unwrap_or_else(|| CellState::zeros(h, w, cell.hidden()));
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        state = cell.step(x, &state)?;
        out.push(state.clone());
    }
    Ok(out)
}
