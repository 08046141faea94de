//! Query–reference matching: spatial pooling, RoI pooling, attention over
//! query clips and a binary correspondence head.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::conv::{conv2d, conv2d_backward, ConvParams, Padding};
use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::math;
use crate::params::{join, ParamSet};
use crate::sample::{bilinear_sample, bilinear_sample_backward, Coord};
use crate::tensor::Tensor;

/// Per-channel mean over all pixels of `[H, W, C]`, giving `[C]`.
pub fn avg_pool_spatial(map: &Tensor) -> Result<Tensor> {
    let (h, w, c) = map.hwc()?;
    let mut out = vec![0.0; c];
    for px in map.data().chunks(c) {
        for (o, v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let inv = 1.0 / (h * w) as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::new(vec![c], out)
}

pub fn avg_pool_spatial_backward(dims: &[usize], grad: &Tensor) -> Result<Tensor> {
    let (h, w, c) = match *dims {
        [h, w, c] => (h, w, c),
        _ => return Err(Error::shape("avg_pool_spatial", "rank", 3, dims.len())),
    };
    grad.expect_dims("avg_pool_spatial_backward", &[c])?;
    let inv = 1.0 / (h * w) as f64;
    let g = grad.data();
    Ok(Tensor::from_fn(dims, |i| g[i % c] * inv))
}

/// Sample locations of an average RoI-align over `box` on an `h × w` map.
///
/// The box spans pixel edges `[ymin·H, ymax·H] × [xmin·W, xmax·W]`. Each of
/// the `out` bins averages a regular sub-grid of `ceil(bin size)` samples
/// per axis (at least one), taken at sub-cell centres.
struct RoiGrid {
    coords: Vec<Coord>,
    per_bin: usize,
}

fn roi_grid(h: usize, w: usize, bbox: &BBox, out: (usize, usize)) -> Result<RoiGrid> {
    bbox.validate()?;
    let (oh, ow) = out;
    if oh == 0 || ow == 0 {
        return Err(Error::invalid(
            "roi_pool",
            "output size must be at least 1x1",
        ));
    }
    let (y0, y1) = (bbox.ymin * h as f64, bbox.ymax * h as f64);
    let (x0, x1) = (bbox.xmin * w as f64, bbox.xmax * w as f64);
    if !(y1 > y0 && x1 > x0) {
        return Err(Error::invalid("roi_pool", "box has zero area"));
    }
    let bh = (y1 - y0) / oh as f64;
    let bw = (x1 - x0) / ow as f64;
    let ny = (libm::ceil(bh) as usize).max(1);
    let nx = (libm::ceil(bw) as usize).max(1);
    let mut coords = Vec::with_capacity(oh * ow * ny * nx);
    for i in 0..oh {
        for j in 0..ow {
            for sy in 0..ny {
                let y = y0 + i as f64 * bh + (sy as f64 + 0.5) * bh / ny as f64 - 0.5;
                for sx in 0..nx {
                    let x = x0 + j as f64 * bw + (sx as f64 + 0.5) * bw / nx as f64 - 0.5;
                    coords.push((y, x));
                }
            }
        }
    }
    Ok(RoiGrid {
        coords,
        per_bin: ny * nx,
    })
}

pub fn roi_pool(map: &Tensor, bbox: &BBox, out: (usize, usize)) -> Result<Tensor> {
    let (h, w, c) = map.hwc()?;
    let grid = roi_grid(h, w, bbox, out)?;
    let samples = bilinear_sample(map, &grid.coords)?;
    let inv = 1.0 / grid.per_bin as f64;
    let mut res = vec![0.0; out.0 * out.1 * c];
    for (bin, chunk) in samples.data().chunks(grid.per_bin * c).enumerate() {
        let dst = &mut res[bin * c..(bin + 1) * c];
        for s in chunk.chunks(c) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += v;
            }
        }
        dst.iter_mut().for_each(|v| *v *= inv);
    }
    Tensor::new(vec![out.0, out.1, c], res)
}

/// VJP of [`roi_pool`] with respect to the map.
pub fn roi_pool_backward(
    map: &Tensor,
    bbox: &BBox,
    out: (usize, usize),
    grad: &Tensor,
) -> Result<Tensor> {
    let (h, w, c) = map.hwc()?;
    grad.expect_dims("roi_pool_backward", &[out.0, out.1, c])?;
    let grid = roi_grid(h, w, bbox, out)?;
    let inv = 1.0 / grid.per_bin as f64;
    let mut gs = Vec::with_capacity(grid.coords.len() * c);
    for bin in grad.data().chunks(c) {
        for _ in 0..grid.per_bin {
            gs.extend(bin.iter().map(|g| g * inv));
        }
    }
    let gs = Tensor::new(vec![grid.coords.len(), c], gs)?;
    Ok(bilinear_sample_backward(map, &grid.coords, &gs)?.0)
}

/// Attention parameters: `W_q`, `W_r` are `[D, C]`, `w` and `b_p` are `[D]`,
/// `b_s` is a scalar `[1]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttentionParams {
    pub w_query: Tensor,
    pub w_ref: Tensor,
    pub w: Tensor,
    pub b_p: Tensor,
    pub b_s: Tensor,
}

impl AttentionParams {
    pub fn zeros(channels: usize, dim: usize) -> Self {
        AttentionParams {
            w_query: Tensor::zeros(&[dim, channels]),
            w_ref: Tensor::zeros(&[dim, channels]),
            w: Tensor::zeros(&[dim]),
            b_p: Tensor::zeros(&[dim]),
            b_s: Tensor::zeros(&[1]),
        }
    }

    /// `D` defaults to `C / 4` (at least 1).
    pub fn random<R: Rng>(channels: usize, dim: Option<usize>, rng: &mut R) -> Self {
        let dim = dim.unwrap_or((channels / 4).max(1));
        let mut p = Self::zeros(channels, dim);
        let b = 1.0 / math::sqrt(channels as f64);
        for t in [&mut p.w_query, &mut p.w_ref] {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-b..b));
        }
        let bw = 1.0 / math::sqrt(dim as f64);
        p.w.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-bw..bw));
        p
    }

    fn dims(&self) -> Result<(usize, usize)> {
        let d = self.w_query.dims();
        if d.len() != 2 {
            return Err(Error::shape("attention_pool", "W_q rank", 2, d.len()));
        }
        let (dim, c) = (d[0], d[1]);
        self.w_ref.expect_dims("attention_pool", &[dim, c])?;
        self.w.expect_dims("attention_pool", &[dim])?;
        self.b_p.expect_dims("attention_pool", &[dim])?;
        self.b_s.expect_dims("attention_pool", &[1])?;
        Ok((dim, c))
    }
}

impl ParamSet for AttentionParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "w_query"), &self.w_query);
        f(join(prefix, "w_ref"), &self.w_ref);
        f(join(prefix, "w"), &self.w);
        f(join(prefix, "b_p"), &self.b_p);
        f(join(prefix, "b_s"), &self.b_s);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.w_query);
        f(&mut self.w_ref);
        f(&mut self.w);
        f(&mut self.b_p);
        f(&mut self.b_s);
    }
}

fn matvec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    let c = v.len();
    m.data()
        .chunks(c)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| math::exp(l - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

struct AttentionForward {
    query_avg: Vec<Vec<f64>>,
    ref_avg: Vec<f64>,
    /// `e_j = tanh(W_q avg(f_j) + W_r avg(f_p) + b_p)`
    e: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

fn attention_forward(
    query: &[Tensor],
    proposal: &Tensor,
    params: &AttentionParams,
) -> Result<AttentionForward> {
    let first = query
        .first()
        .ok_or_else(|| Error::invalid("attention_pool", "empty query list"))?;
    let (dim, c) = params.dims()?;
    for q in query {
        q.expect_same_dims("attention_pool", first)?;
    }
    proposal.expect_same_dims("attention_pool", first)?;
    let (_, _, fc) = first.hwc()?;
    if fc != c {
        return Err(Error::shape("attention_pool", "channels", c, fc));
    }
    let ref_avg = avg_pool_spatial(proposal)?.into_data();
    let ref_term = matvec(&params.w_ref, &ref_avg);
    let mut query_avg = Vec::with_capacity(query.len());
    let mut e = Vec::with_capacity(query.len());
    let mut logits = Vec::with_capacity(query.len());
    for q in query {
        let a = avg_pool_spatial(q)?.into_data();
        let qt = matvec(&params.w_query, &a);
        let ej: Vec<f64> = (0..dim)
            .map(|d| math::tanh(qt[d] + ref_term[d] + params.b_p.data()[d]))
            .collect();
        logits.push(
            ej.iter()
                .zip(params.w.data())
                .map(|(x, y)| x * y)
                .sum::<f64>()
                + params.b_s.data()[0],
        );
        query_avg.push(a);
        e.push(ej);
    }
    Ok(AttentionForward {
        query_avg,
        ref_avg,
        e,
        alpha: softmax(&logits),
    })
}

/// Attention weights `α_j` over the query clips for one proposal.
pub fn attention_weights(
    query: &[Tensor],
    proposal: &Tensor,
    params: &AttentionParams,
) -> Result<Vec<f64>> {
    Ok(attention_forward(query, proposal, params)?.alpha)
}

/// `Σ_j α_j f_j`: the query representation weighted by its relevance to
/// the proposal.
pub fn attention_pool(
    query: &[Tensor],
    proposal: &Tensor,
    params: &AttentionParams,
) -> Result<Tensor> {
    let fwd = attention_forward(query, proposal, params)?;
    let mut out = Tensor::zeros_like(&query[0]);
    for (q, a) in query.iter().zip(&fwd.alpha) {
        out.axpy(*a, q)?;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub query: Vec<Tensor>,
    pub proposal: Tensor,
    pub params: AttentionParams,
}

pub fn attention_pool_backward(
    query: &[Tensor],
    proposal: &Tensor,
    params: &AttentionParams,
    grad: &Tensor,
) -> Result<AttentionGrads> {
    let fwd = attention_forward(query, proposal, params)?;
    grad.expect_same_dims("attention_pool_backward", &query[0])?;
    let (dim, c) = params.dims()?;
    let mut gp = params.zeros_like();
    let dalpha: Vec<f64> = query.iter().map(|q| q.dot(grad)).collect::<Result<_>>()?;
    let mean: f64 = fwd.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
    let mut gref_avg = vec![0.0; c];
    let mut gquery = Vec::with_capacity(query.len());
    for j in 0..query.len() {
        let dlogit = fwd.alpha[j] * (dalpha[j] - mean);
        gp.b_s.data_mut()[0] += dlogit;
        let mut gavg = vec![0.0; c];
        for d in 0..dim {
            let e = fwd.e[j][d];
            gp.w.data_mut()[d] += dlogit * e;
            let dpre = dlogit * params.w.data()[d] * (1.0 - e * e);
            gp.b_p.data_mut()[d] += dpre;
            for k in 0..c {
                gp.w_query.data_mut()[d * c + k] += dpre * fwd.query_avg[j][k];
                gp.w_ref.data_mut()[d * c + k] += dpre * fwd.ref_avg[k];
                gavg[k] += params.w_query.data()[d * c + k] * dpre;
                gref_avg[k] += params.w_ref.data()[d * c + k] * dpre;
            }
        }
        let mut gq = avg_pool_spatial_backward(query[j].dims(), &Tensor::new(vec![c], gavg)?)?;
        gq.axpy(fwd.alpha[j], grad)?;
        gquery.push(gq);
    }
    let gprop = avg_pool_spatial_backward(proposal.dims(), &Tensor::new(vec![c], gref_avg)?)?;
    Ok(AttentionGrads {
        query: gquery,
        proposal: gprop,
        params: gp,
    })
}

/// Binary correspondence head: channel concatenation of the proposal and
/// the weighted query, a `tanh` convolution, spatial average pooling, a
/// dense layer and a sigmoid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrespondenceHead {
    pub conv: ConvParams,
    pub dense_w: Tensor,
    pub dense_b: Tensor,
}

impl CorrespondenceHead {
    pub fn zeros(channels: usize, hidden: usize, kernel: usize) -> Self {
        CorrespondenceHead {
            conv: ConvParams::zeros(kernel, kernel, 2 * channels, hidden),
            dense_w: Tensor::zeros(&[hidden]),
            dense_b: Tensor::zeros(&[1]),
        }
    }

    pub fn random<R: Rng>(channels: usize, hidden: usize, kernel: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(channels, hidden, kernel);
        let b = 1.0 / math::sqrt((kernel * kernel * 2 * channels) as f64);
        p.conv
            .kernel
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-b..b));
        let bd = 1.0 / math::sqrt(hidden as f64);
        p.dense_w
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-bd..bd));
        p
    }
}

impl ParamSet for CorrespondenceHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.conv.visit(&join(prefix, "conv"), f);
        f(join(prefix, "dense_w"), &self.dense_w);
        f(join(prefix, "dense_b"), &self.dense_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.conv.visit_mut(f);
        f(&mut self.dense_w);
        f(&mut self.dense_b);
    }
}

struct HeadForward {
    input: Tensor,
    act: Tensor,
    pooled: Tensor,
    prob: f64,
}

fn head_forward(
    proposal: &Tensor,
    weighted_query: &Tensor,
    head: &CorrespondenceHead,
) -> Result<HeadForward> {
    proposal.expect_same_dims("correspondence_score", weighted_query)?;
    let input = Tensor::concat_channels(proposal, weighted_query)?;
    let act = conv2d(&input, &head.conv, Padding::SameZero)?.map(math::tanh);
    let pooled = avg_pool_spatial(&act)?;
    head.dense_w
        .expect_same_dims("correspondence_score", &pooled)?;
    let logit = pooled.dot(&head.dense_w)? + head.dense_b.data()[0];
    Ok(HeadForward {
        input,
        act,
        pooled,
        prob: math::sigmoid(logit),
    })
}

/// Probability that the proposal and the weighted query correspond.
pub fn correspondence_score(
    proposal: &Tensor,
    weighted_query: &Tensor,
    head: &CorrespondenceHead,
) -> Result<f64> {
    Ok(head_forward(proposal, weighted_query, head)?.prob)
}

/// VJP of [`correspondence_score`] for cotangent `grad` of the probability:
/// `(grad_proposal, grad_weighted_query, grad_head)`.
pub fn correspondence_score_backward(
    proposal: &Tensor,
    weighted_query: &Tensor,
    head: &CorrespondenceHead,
    grad: f64,
) -> Result<(Tensor, Tensor, CorrespondenceHead)> {
    let fwd = head_forward(proposal, weighted_query, head)?;
    let dlogit = grad * fwd.prob * (1.0 - fwd.prob);
    let mut gh = head.zeros_like();
    gh.dense_b.data_mut()[0] = dlogit;
    gh.dense_w = fwd.pooled.scale(dlogit);
    let dpooled = head.dense_w.scale(dlogit);
    let dact = avg_pool_spatial_backward(fwd.act.dims(), &dpooled)?;
    let dz = fwd.act.zip_map(&dact, |a, g| g * (1.0 - a * a))?;
    let cg = conv2d_backward(&fwd.input, &head.conv, Padding::SameZero, &dz)?;
    gh.conv = cg.params;
    let c = proposal.dims()[2];
    let mut parts = cg.input.split_channels(&[c, c])?;
    let gq = parts.pop().expect("two parts");
    let gp = parts.pop().expect("two parts");
    Ok((gp, gq, gh))
}
