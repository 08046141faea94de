//! Localization model for the synthetic benchmark: a 3×3 encoder, a
//! bottleneck-wrapped recurrent cell and a 1×1 heatmap head.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::activation::Activation;
use crate::cells::{
    Bottleneck, Cell, CellState, ConvLstmParams, StepCache, TrajLstmParams, WarpLstmParams,
};
use crate::conv::{conv2d, conv2d_backward, ConvParams, Padding};
use crate::error::{Error, Result};
use crate::math;
use crate::params::{join, ParamSet};
use crate::sample::{warp_by_flow, warp_by_flow_backward};
use crate::spline::FlowField;
use crate::tensor::Tensor;

use super::synth::CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CellKind {
    /// ConvLSTM restarted from a zero state at every step.
    ClipIndependent,
    #[cfg_attr(feature = "serde", serde(rename = "convlstm"))]
    ConvLstm,
    #[cfg_attr(feature = "serde", serde(rename = "warplstm"))]
    WarpLstm,
    #[cfg_attr(feature = "serde", serde(rename = "trajlstm"))]
    TrajLstm,
    /// ConvLSTM whose state is shifted by the target's true displacement.
    GtFlowWarp,
}

impl CellKind {
    pub const ALL: [CellKind; 5] = [
        CellKind::ClipIndependent,
        CellKind::ConvLstm,
        CellKind::WarpLstm,
        CellKind::TrajLstm,
        CellKind::GtFlowWarp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::ClipIndependent => "clip_independent",
            CellKind::ConvLstm => "convlstm",
            CellKind::WarpLstm => "warplstm",
            CellKind::TrajLstm => "trajlstm",
            CellKind::GtFlowWarp => "gt_flow_warp",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ModelConfig {
    /// Encoder output channels.
    pub features: usize,
    /// Cell width (bottleneck channels).
    pub hidden: usize,
    pub kernel: usize,
    /// Control grid lines `(horizontal, vertical)` for the warp LSTM.
    pub grid: (usize, usize),
    /// Flow links of the trajectory baseline.
    pub links: usize,
    pub forget_bias: f64,
    pub candidate: Activation,
    /// Initial heatmap bias, the logit of the prior peak probability.
    pub head_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            features: 8,
            hidden: 4,
            kernel: 3,
            grid: (3, 3),
            links: 5,
            forget_bias: 1.0,
            candidate: Activation::Sigmoid,
            head_bias: -4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Model {
    pub kind: CellKind,
    pub encoder: ConvParams,
    pub bottleneck: Bottleneck,
    pub cell: Cell,
    pub head: ConvParams,
}

impl Model {
    pub fn new<R: Rng>(kind: CellKind, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        if cfg.features == 0 || cfg.hidden == 0 || cfg.kernel % 2 == 0 {
            return Err(Error::invalid(
                "model",
                "features and hidden must be positive, kernel odd",
            ));
        }
        let mut encoder = ConvParams::zeros(3, 3, CHANNELS, cfg.features);
        let b = 1.0 / math::sqrt((9 * CHANNELS) as f64);
        encoder
            .kernel
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-b..b));
        let bottleneck = Bottleneck::random(cfg.features, cfg.hidden, true, rng);
        let mut base =
            ConvLstmParams::random(cfg.hidden, cfg.hidden, cfg.kernel, cfg.forget_bias, rng);
        base.candidate = cfg.candidate;
        let cell = match kind {
            CellKind::ClipIndependent | CellKind::ConvLstm | CellKind::GtFlowWarp => {
                Cell::ConvLstm(base)
            }
            CellKind::WarpLstm => Cell::WarpLstm(WarpLstmParams::from_base(base, cfg.grid)),
            CellKind::TrajLstm => Cell::TrajLstm(TrajLstmParams::from_base(base, cfg.links, 3)),
        };
        let mut head = ConvParams::zeros(1, 1, cfg.features, 1);
        let bh = 1.0 / math::sqrt(cfg.features as f64);
        head.kernel
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-bh..bh));
        head.bias.data_mut()[0] = cfg.head_bias;
        Ok(Model {
            kind,
            encoder,
            bottleneck,
            cell,
            head,
        })
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden()
    }
}

impl ParamSet for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.bottleneck.visit(&join(prefix, "bottleneck"), f);
        self.cell.visit(&join(prefix, "cell"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.encoder.visit_mut(f);
        self.bottleneck.visit_mut(f);
        self.cell.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// Input to one step besides the frame: the true target displacement, used
/// only by [`CellKind::GtFlowWarp`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StepAux {
    pub displacement: (f64, f64),
}

struct StepRecord {
    encoded: Tensor,
    cell_output: Tensor,
    represent: Tensor,
    cell_cache: StepCache,
    /// Previous state before any ground-truth warp, and the flow applied.
    shifted: Option<(CellState, Tensor)>,
}

/// Forward pass over one sequence with everything needed for BPTT.
pub struct Rollout {
    /// Heatmap logits `[H, W, 1]` per step.
    pub logits: Vec<Tensor>,
    /// Dense flow used by the warp LSTM at each step.
    pub flows: Vec<Option<FlowField>>,
    records: Vec<StepRecord>,
    frames: Vec<Tensor>,
}

impl Model {
    pub fn rollout(&self, frames: &[Tensor], aux: &[StepAux]) -> Result<Rollout> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("rollout", "empty sequence"))?;
        let (h, w, _) = first.hwc()?;
        if aux.len() != frames.len() {
            return Err(Error::shape(
                "rollout",
                "aux length",
                frames.len(),
                aux.len(),
            ));
        }
        let hid = self.hidden();
        let mut state = CellState::zeros(h, w, hid);
        let mut out = Rollout {
            logits: Vec::with_capacity(frames.len()),
            flows: Vec::with_capacity(frames.len()),
            records: Vec::with_capacity(frames.len()),
            frames: frames.to_vec(),
        };
        for (frame, a) in frames.iter().zip(aux) {
            let encoded = conv2d(frame, &self.encoder, Padding::SameZero)?.map(math::tanh);
            let x = self.bottleneck.project_in(&encoded)?;
            let mut shifted = None;
            let prev = match self.kind {
                CellKind::ClipIndependent => CellState::zeros(h, w, hid),
                CellKind::GtFlowWarp => {
                    let flow = FlowField::uniform(h, w, a.displacement.0, a.displacement.1).flow;
                    let warped = CellState {
                        h: warp_by_flow(&state.h, &flow)?,
                        c: warp_by_flow(&state.c, &flow)?,
                    };
                    shifted = Some((state, flow));
                    warped
                }
                _ => state,
            };
            let (step, cell_cache) = self.cell.forward(&x, &prev)?;
            let represent = self.bottleneck.project_out(&encoded, &step.output)?;
            out.logits
                .push(conv2d(&represent, &self.head, Padding::SameZero)?);
            out.flows.push(step.flow.clone());
            out.records.push(StepRecord {
                encoded,
                cell_output: step.output,
                represent,
                cell_cache,
                shifted,
            });
            state = step.state;
        }
        Ok(out)
    }

    /// Back-propagates heatmap-logit cotangents through the rollout.
    pub fn backward(&self, rollout: &Rollout, grad_logits: &[Tensor]) -> Result<Model> {
        if grad_logits.len() != rollout.records.len() {
            return Err(Error::shape(
                "model_backward",
                "steps",
                rollout.records.len(),
                grad_logits.len(),
            ));
        }
        let mut grads = self.zeros_like();
        let (h, w, _) = rollout.frames[0].hwc()?;
        let hid = self.hidden();
        let mut gh = Tensor::zeros(&[h, w, hid]);
        let mut gc = Tensor::zeros(&[h, w, hid]);
        for t in (0..rollout.records.len()).rev() {
            let rec = &rollout.records[t];
            let hg = conv2d_backward(
                &rec.represent,
                &self.head,
                Padding::SameZero,
                &grad_logits[t],
            )?;
            grads.head.axpy(1.0, &hg.params);
            let (mut g_enc, g_out, bg_up) =
                self.bottleneck
                    .project_out_backward(&rec.encoded, &rec.cell_output, &hg.input)?;
            grads.bottleneck.axpy(1.0, &bg_up);

            let sg = self.cell.backward(&rec.cell_cache, &g_out, &gh, &gc)?;
            grads.cell.axpy(1.0, &sg.params);
            let mut bg_down = self.bottleneck.zeros_like();
            let gx_enc = self
                .bottleneck
                .project_in_backward(&rec.encoded, &sg.x, &mut bg_down)?;
            grads.bottleneck.axpy(1.0, &bg_down);
            g_enc.add_assign(&gx_enc)?;

            let g_pre = rec.encoded.zip_map(&g_enc, |e, g| g * (1.0 - e * e))?;
            let eg = conv2d_backward(&rollout.frames[t], &self.encoder, Padding::SameZero, &g_pre)?;
            grads.encoder.axpy(1.0, &eg.params);

            match (&rec.shifted, self.kind) {
                (_, CellKind::ClipIndependent) => {
                    gh = Tensor::zeros(&[h, w, hid]);
                    gc = Tensor::zeros(&[h, w, hid]);
                }
                (Some((prev, flow)), CellKind::GtFlowWarp) => {
                    gh = warp_by_flow_backward(&prev.h, flow, &sg.h_prev)?.0;
                    gc = warp_by_flow_backward(&prev.c, flow, &sg.c_prev)?.0;
                }
                _ => {
                    gh = sg.h_prev;
                    gc = sg.c_prev;
                }
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn objective(model: &Model, frames: &[Tensor], aux: &[StepAux], weights: &[Tensor]) -> f64 {
        let roll = model.rollout(frames, aux).unwrap();
        roll.logits
            .iter()
            .zip(weights)
            .map(|(z, g)| z.dot(g).unwrap())
            .sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = ModelConfig {
            features: 3,
            hidden: 2,
            grid: (2, 2),
            links: 2,
            ..Default::default()
        };
        for kind in CellKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut model = Model::new(kind, &cfg, &mut rng).unwrap();
            model.visit_mut(&mut |t| {
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v += rng.random_range(-0.3..0.3))
            });
            let frames: Vec<Tensor> = (0..3)
                .map(|_| Tensor::from_fn(&[7, 8, CHANNELS], |_| rng.random_range(-1.0..1.0)))
                .collect();
            let aux = vec![
                StepAux {
                    displacement: (0.0, 0.0),
                },
                StepAux {
                    displacement: (1.3, -0.6),
                },
                StepAux {
                    displacement: (0.4, 2.2),
                },
            ];
            let weights: Vec<Tensor> = (0..3)
                .map(|_| Tensor::from_fn(&[7, 8, 1], |_| rng.random_range(-1.0..1.0)))
                .collect();
            let roll = model.rollout(&frames, &aux).unwrap();
            let grads = model.backward(&roll, &weights).unwrap().tensors();
            let n = model.tensors().len();
            for ti in 0..n {
                for j in (0..grads[ti].len()).step_by(3) {
                    let eps = 1e-6;
                    let mut plus = model.clone();
                    let mut minus = model.clone();
                    let mut k = 0;
                    plus.visit_mut(&mut |t| {
                        if k == ti {
                            t.data_mut()[j] += eps;
                        }
                        k += 1;
                    });
                    k = 0;
                    minus.visit_mut(&mut |t| {
                        if k == ti {
                            t.data_mut()[j] -= eps;
                        }
                        k += 1;
                    });
                    let fd = (objective(&plus, &frames, &aux, &weights)
                        - objective(&minus, &frames, &aux, &weights))
                        / (2.0 * eps);
                    let an = grads[ti].data()[j];
                    assert!(
                        (fd - an).abs() <= 1e-5 * (1.0 + fd.abs()),
                        "{}: tensor {ti} entry {j}: analytic {an}, numeric {fd}",
                        kind.name()
                    );
                }
            }
        }
    }
}
