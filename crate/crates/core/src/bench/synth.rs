//! Synthetic moving-object sequences: one target blob with its own channel
//! signature moves among distractor blobs, optionally hidden for a few
//! steps while its ground truth keeps moving.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Occlusion {
    pub start: usize,
    pub length: usize,
}

impl Occlusion {
    pub fn contains(&self, t: usize) -> bool {
        t >= self.start && t < self.start + self.length
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub length: usize,
    /// Number of distractor blobs.
    pub distractors: usize,
    /// Gaussian blob width in pixels.
    pub blob_sigma: f64,
    /// Side of the ground-truth box in pixels.
    pub box_size: f64,
    /// Target speed range in px/step.
    pub speed: (f64, f64),
    /// Heading range in degrees, measured from +x towards +y.
    pub heading_deg: (f64, f64),
    pub distractor_speed: f64,
    pub occlusion: Option<Occlusion>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 40,
            width: 40,
            length: 16,
            distractors: 3,
            blob_sigma: 2.0,
            box_size: 10.0,
            speed: (2.0, 2.5),
            heading_deg: (30.0, 60.0),
            distractor_speed: 1.0,
            occlusion: Some(Occlusion {
                start: 8,
                length: 3,
            }),
            noise_sigma: 0.05,
            seed: 42,
        }
    }
}

/// Frame channels: target, distractor, shared.
pub const CHANNELS: usize = 3;
const TARGET_SIGNATURE: [f64; CHANNELS] = [1.0, 0.0, 0.6];
const DISTRACTOR_SIGNATURE: [f64; CHANNELS] = [0.3, 1.0, 0.6];

impl SynthConfig {
    fn margin(&self) -> f64 {
        2.0 * self.blob_sigma
    }

    pub fn validate(&self) -> Result<()> {
        let op = "synth_config";
        if self.length < 2 {
            return Err(Error::invalid(op, "sequence length must be >= 2"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid(op, "frame must be non-empty"));
        }
        if !(self.blob_sigma > 0.0) || !(self.box_size > 0.0) {
            return Err(Error::invalid(op, "blob and box sizes must be positive"));
        }
        let side = self.height.min(self.width) as f64;
        if 2.0 * self.margin() >= side - 1.0 || self.box_size > side {
            return Err(Error::invalid(op, "blob or box larger than the frame"));
        }
        if !(self.speed.0 >= 0.0 && self.speed.0 <= self.speed.1) {
            return Err(Error::invalid(
                op,
                "speed range must satisfy 0 <= min <= max",
            ));
        }
        if self.heading_deg.0 > self.heading_deg.1
            || self.distractor_speed < 0.0
            || self.noise_sigma < 0.0
        {
            return Err(Error::invalid(op, "bad heading, distractor speed or noise"));
        }
        if let Some(o) = self.occlusion {
            if o.start + o.length > self.length {
                return Err(Error::invalid(op, "occlusion window exceeds the sequence"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sequence {
    /// `[H, W, 3]` per step.
    pub frames: Vec<Tensor>,
    /// Target centre `(y, x)` in pixel coordinates per step.
    pub centers: Vec<(f64, f64)>,
    /// Normalized fixed-size box around each centre.
    pub boxes: Vec<BBox>,
    pub occluded: Vec<bool>,
    /// Target displacement `(dy, dx)` from the previous step; zero at `t = 0`.
    pub displacements: Vec<(f64, f64)>,
    pub speed: f64,
}

/// Reflects `p` into `[lo, hi]`.
fn reflect(p: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let period = 2.0 * span;
    let mut u = (p - lo) % period;
    if u < 0.0 {
        u += period;
    }
    lo + if u > span { period - u } else { u }
}

/// Start coordinate keeping a straight path of `travel` inside `[lo, hi]`
/// when possible.
fn start_for(travel: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    let span = hi - lo;
    if travel.abs() <= span {
        let s = rng.random_range(0.0..=span - travel.abs());
        if travel >= 0.0 {
            lo + s
        } else {
            hi - s
        }
    } else {
        rng.random_range(lo..=hi)
    }
}

fn track(start: (f64, f64), vel: (f64, f64), t: usize, bounds: (f64, f64, f64, f64)) -> (f64, f64) {
    let (ylo, yhi, xlo, xhi) = bounds;
    (
        reflect(start.0 + vel.0 * t as f64, ylo, yhi),
        reflect(start.1 + vel.1 * t as f64, xlo, xhi),
    )
}

fn splat(frame: &mut Tensor, center: (f64, f64), sigma: f64, signature: &[f64; CHANNELS]) {
    let (h, w, _) = frame.hwc().expect("rank 3");
    let reach = 3.0 * sigma;
    let y0 = math::floor(center.0 - reach).max(0.0) as usize;
    let x0 = math::floor(center.1 - reach).max(0.0) as usize;
    let y1 = ((center.0 + reach) as usize).min(h - 1);
    let x1 = ((center.1 + reach) as usize).min(w - 1);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dy, dx) = (y as f64 - center.0, x as f64 - center.1);
            let d2 = dy * dy + dx * dx;
            let v = math::exp(-d2 * inv);
            for (c, s) in signature.iter().enumerate() {
                *frame.at3_mut(y, x, c) += s * v;
            }
        }
    }
}

/// Fixed-size normalized box centred on pixel-coordinate `center`, clipped
/// to the frame.
pub fn box_at(center: (f64, f64), size: f64, h: usize, w: usize) -> BBox {
    let (cy, cx) = (center.0 + 0.5, center.1 + 0.5);
    let half = size / 2.0;
    let clip = |v: f64, n: usize| (v / n as f64).clamp(0.0, 1.0);
    BBox::new(
        clip(cy - half, h),
        clip(cx - half, w),
        clip(cy + half, h),
        clip(cx + half, w),
    )
}

/// Generates one sequence, fully determined by `cfg` (including its seed).
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Sequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.margin();
    let bounds = (
        m,
        cfg.height as f64 - 1.0 - m,
        m,
        cfg.width as f64 - 1.0 - m,
    );
    let steps = (cfg.length - 1) as f64;

    let speed = rng.random_range(cfg.speed.0..=cfg.speed.1);
    let heading = rng
        .random_range(cfg.heading_deg.0..=cfg.heading_deg.1)
        .to_radians();
    let vel = (speed * libm::sin(heading), speed * libm::cos(heading));
    let start = (
        start_for(vel.0 * steps, bounds.0, bounds.1, &mut rng),
        start_for(vel.1 * steps, bounds.2, bounds.3, &mut rng),
    );

    let mut distractors = Vec::with_capacity(cfg.distractors);
    for _ in 0..cfg.distractors {
        let s = rng.random_range(0.0..=cfg.distractor_speed);
        let a = rng.random_range(0.0..core::f64::consts::TAU);
        let p = (
            rng.random_range(bounds.0..=bounds.1),
            rng.random_range(bounds.2..=bounds.3),
        );
        distractors.push((p, (s * libm::sin(a), s * libm::cos(a))));
    }

    let noise = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|_| Error::invalid("synth_config", "bad noise sigma"))?;
    let mut seq = Sequence {
        frames: Vec::with_capacity(cfg.length),
        centers: Vec::with_capacity(cfg.length),
        boxes: Vec::with_capacity(cfg.length),
        occluded: Vec::with_capacity(cfg.length),
        displacements: Vec::with_capacity(cfg.length),
        speed,
    };
    for t in 0..cfg.length {
        let mut frame = Tensor::zeros(&[cfg.height, cfg.width, CHANNELS]);
        for (p, v) in &distractors {
            splat(
                &mut frame,
                track(*p, *v, t, bounds),
                cfg.blob_sigma,
                &DISTRACTOR_SIGNATURE,
            );
        }
        let center = track(start, vel, t, bounds);
        let hidden = cfg.occlusion.is_some_and(|o| o.contains(t));
        if !hidden {
            splat(&mut frame, center, cfg.blob_sigma, &TARGET_SIGNATURE);
        }
        if cfg.noise_sigma > 0.0 {
            for v in frame.data_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        let disp = match seq.centers.last() {
            Some(&(py, px)) => (center.0 - py, center.1 - px),
            None => (0.0, 0.0),
        };
        seq.frames.push(frame);
        seq.centers.push(center);
        seq.boxes
            .push(box_at(center, cfg.box_size, cfg.height, cfg.width));
        seq.occluded.push(hidden);
        seq.displacements.push(disp);
    }
    Ok(seq)
}

/// Per-pixel Gaussian bump of width `sigma` at `center`, shaped `[H, W, 1]`.
pub fn heatmap_target(h: usize, w: usize, center: (f64, f64), sigma: f64) -> Tensor {
    let inv = 1.0 / (2.0 * sigma * sigma);
    Tensor::from_fn(&[h, w, 1], |i| {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        let (dy, dx) = (y - center.0, x - center.1);
        math::exp(-(dy * dy + dx * dx) * inv)
    })
}

/// Derives a per-sequence seed from a base seed and an index.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` sequences generated from `cfg` with seeds derived from
/// `cfg.seed`.
pub fn generate_set(cfg: &SynthConfig, stream: u64, count: usize) -> Result<Vec<Sequence>> {
    (0..count)
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = derive_seed(cfg.seed, stream, i as u64);
            generate_synthetic(&c)
        })
        .collect()
}
