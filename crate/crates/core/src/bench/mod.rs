//! Synthetic moving-object benchmark: data, model, training and metrics.

mod model;
mod synth;

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use model::{CellKind, Model, ModelConfig, Rollout, StepAux};
pub use synth::{
    box_at, derive_seed, generate_set, generate_synthetic, heatmap_target, Occlusion, Sequence,
    SynthConfig, CHANNELS,
};

use crate::error::{Error, Result};
use crate::geom::iou;
use crate::math;
use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::tubelet::{frame_map, CombinedLabel, Detection, GroundTruth};

/// Seed streams, so that training data, evaluation data and initialization
/// never share random numbers.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;
pub const STREAM_EVAL: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub kind: CellKind,
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Iteration at which the learning rate is divided by 10.
    pub decay_step: usize,
    pub iterations: usize,
    pub batch_size: usize,
    /// Width of the Gaussian heatmap target in pixels.
    pub heat_sigma: f64,
    /// Rescale the gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: CellKind::WarpLstm,
            model: ModelConfig::default(),
            synth: SynthConfig::default(),
            learning_rate: 0.003,
            momentum: 0.9,
            decay_step: 1000,
            iterations: 300,
            batch_size: 4,
            heat_sigma: 2.0,
            clip_norm: Some(10.0),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid(
                "train_config",
                "learning rate must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(
                "train_config",
                "momentum must lie in [0, 1)",
            ));
        }
        if self.batch_size == 0 || !(self.heat_sigma > 0.0) {
            return Err(Error::invalid(
                "train_config",
                "batch size and heat sigma must be positive",
            ));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::invalid("train_config", "clip norm must be positive"));
        }
        self.synth.validate()
    }

    /// The initial model for this configuration.
    pub fn init_model(&self) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, STREAM_INIT, 0));
        Model::new(self.kind, &self.model, &mut rng)
    }

    /// Training sequence `index` of the stream.
    pub fn train_sequence(&self, index: u64) -> Result<Sequence> {
        let mut c = self.synth.clone();
        c.seed = derive_seed(self.seed, STREAM_TRAIN, index);
        generate_synthetic(&c)
    }
}

pub fn aux_for(seq: &Sequence) -> Vec<StepAux> {
    seq.displacements
        .iter()
        .map(|&displacement| StepAux { displacement })
        .collect()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + math::ln(1.0 + math::exp(-z))
    } else {
        math::ln(1.0 + math::exp(z))
    }
}

/// Per-pixel binary cross-entropy with logits, summed over pixels, and its
/// gradient with respect to the logits.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    logits.expect_same_dims("bce_with_logits", target)?;
    let loss = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&z, &y)| softplus(z) - y * z)
        .sum();
    let grad = logits.zip_map(target, |z, y| math::sigmoid(z) - y)?;
    Ok((loss, grad))
}

/// Mean per-frame loss over a sequence and the model gradient.
pub fn sequence_loss(model: &Model, seq: &Sequence, heat_sigma: f64) -> Result<(f64, Model)> {
    let roll = model.rollout(&seq.frames, &aux_for(seq))?;
    let (h, w, _) = seq.frames[0].hwc()?;
    let inv = 1.0 / seq.frames.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(seq.frames.len());
    for (z, &c) in roll.logits.iter().zip(&seq.centers) {
        let (l, g) = bce_with_logits(z, &heatmap_target(h, w, c, heat_sigma))?;
        total += l * inv;
        grads.push(g.scale(inv));
    }
    Ok((total, model.backward(&roll, &grads)?))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainOutput {
    pub model: Model,
    /// Mean batch loss per iteration.
    pub losses: Vec<f64>,
}

/// SGD with momentum (`v ← μv + g`, `θ ← θ − lr·v`) on fresh sequences
/// each iteration, with BPTT over whole sequences.
pub fn train(cfg: &TrainConfig, on_iteration: &mut dyn FnMut(usize, f64)) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut model = cfg.init_model()?;
    let mut velocity = model.zeros_like();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut grad = model.zeros_like();
        let mut loss = 0.0;
        let scale = 1.0 / cfg.batch_size as f64;
        for b in 0..cfg.batch_size {
            let seq = cfg.train_sequence((it * cfg.batch_size + b) as u64)?;
            let (l, g) = sequence_loss(&model, &seq, cfg.heat_sigma)?;
            loss += l * scale;
            grad.axpy(scale, &g);
        }
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFinite {
                op: "train",
                what: format!("loss at iteration {it}"),
            });
        }
        if let Some(max) = cfg.clip_norm {
            let norm = math::sqrt(grad.tensors().iter().map(|t| t.dot(t).unwrap_or(0.0)).sum());
            if norm > max {
                grad.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v *= max / norm));
            }
        }
        let lr = if it >= cfg.decay_step {
            cfg.learning_rate / 10.0
        } else {
            cfg.learning_rate
        };
        velocity.visit_mut(&mut |v| v.data_mut().iter_mut().for_each(|x| *x *= cfg.momentum));
        velocity.axpy(1.0, &grad);
        model.axpy(-lr, &velocity);
        on_iteration(it, loss);
        losses.push(loss);
    }
    Ok(TrainOutput { model, losses })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub mean_center_error_px: f64,
    pub mean_iou: f64,
    pub map50: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub overall: Metrics,
    /// Restricted to frames where the target is hidden; `None` without any.
    pub occlusion: Option<Metrics>,
    pub sequences: usize,
}

/// Row-major argmax; ties go to the smallest `(y, x)`.
pub fn heatmap_peak(heat: &Tensor) -> Result<((usize, usize), f64)> {
    let (_, w, c) = heat.hwc()?;
    if c != 1 {
        return Err(Error::shape("heatmap_peak", "channels", 1, c));
    }
    let mut best = (0, heat.data()[0]);
    for (i, &v) in heat.data().iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(((best.0 / w, best.0 % w), best.1))
}

struct FrameResult {
    seq: usize,
    t: usize,
    occluded: bool,
    center_error: f64,
    iou: f64,
    score: f64,
    pred: crate::geom::BBox,
}

fn summarize(results: &[&FrameResult], seqs: &[Sequence]) -> Result<Metrics> {
    let n = results.len();
    if n == 0 {
        return Ok(Metrics::default());
    }
    let label = CombinedLabel::new([1])?;
    let dets: Vec<Detection> = results
        .iter()
        .map(|r| Detection {
            video_id: format!("seq{}", r.seq),
            t: r.t as u32,
            bbox: r.pred,
            score: r.score,
            label: label.clone(),
        })
        .collect();
    let gts: Vec<GroundTruth> = results
        .iter()
        .map(|r| GroundTruth {
            video_id: format!("seq{}", r.seq),
            t: r.t as u32,
            bbox: seqs[r.seq].boxes[r.t],
            label: label.clone(),
        })
        .collect();
    let map = frame_map(&dets, &gts, 0.5)?;
    Ok(Metrics {
        mean_center_error_px: results.iter().map(|r| r.center_error).sum::<f64>() / n as f64,
        mean_iou: results.iter().map(|r| r.iou).sum::<f64>() / n as f64,
        map50: map
            .per_label_ap
            .get(&label.to_string())
            .copied()
            .unwrap_or(0.0),
        frames: n,
    })
}

/// Scores per-frame heatmaps `[H, W, 1]` against the sequences' ground
/// truth. The prediction is a fixed-size box at the peak, scored by the peak
/// value.
pub fn evaluate_heatmaps(
    heatmaps: &[Vec<Tensor>],
    seqs: &[Sequence],
    box_size: f64,
) -> Result<EvalReport> {
    if heatmaps.len() != seqs.len() {
        return Err(Error::shape(
            "evaluate",
            "sequences",
            seqs.len(),
            heatmaps.len(),
        ));
    }
    let mut results = Vec::new();
    for (si, (maps, seq)) in heatmaps.iter().zip(seqs).enumerate() {
        if maps.len() != seq.frames.len() {
            return Err(Error::shape(
                "evaluate",
                "frames",
                seq.frames.len(),
                maps.len(),
            ));
        }
        for (t, heat) in maps.iter().enumerate() {
            let (h, w, _) = heat.hwc()?;
            let ((py, px), score) = heatmap_peak(heat)?;
            let (cy, cx) = seq.centers[t];
            let pred = box_at((py as f64, px as f64), box_size, h, w);
            let (dy, dx) = (py as f64 - cy, px as f64 - cx);
            results.push(FrameResult {
                seq: si,
                t,
                occluded: seq.occluded[t],
                center_error: math::sqrt(dy * dy + dx * dx),
                iou: iou(&pred, &seq.boxes[t]),
                score,
                pred,
            });
        }
    }
    let all: Vec<&FrameResult> = results.iter().collect();
    let occ: Vec<&FrameResult> = results.iter().filter(|r| r.occluded).collect();
    Ok(EvalReport {
        overall: summarize(&all, seqs)?,
        occlusion: if occ.is_empty() {
            None
        } else {
            Some(summarize(&occ, seqs)?)
        },
        sequences: seqs.len(),
    })
}

/// Sigmoid heatmaps of `model` for every frame of `seq`.
pub fn predict_heatmaps(model: &Model, seq: &Sequence) -> Result<Vec<Tensor>> {
    let roll = model.rollout(&seq.frames, &aux_for(seq))?;
    Ok(roll.logits.iter().map(|z| z.map(math::sigmoid)).collect())
}

pub fn evaluate(model: &Model, seqs: &[Sequence], box_size: f64) -> Result<EvalReport> {
    let maps = seqs
        .iter()
        .map(|s| predict_heatmaps(model, s))
        .collect::<Result<Vec<_>>>()?;
    evaluate_heatmaps(&maps, seqs, box_size)
}

/// Evaluation sequences for a training configuration, disjoint from its
/// training stream.
pub fn eval_set(cfg: &TrainConfig, count: usize) -> Result<Vec<Sequence>> {
    (0..count)
        .map(|i| {
            let mut c = cfg.synth.clone();
            c.seed = derive_seed(cfg.seed, STREAM_EVAL, i as u64);
            generate_synthetic(&c)
        })
        .collect()
}
