//! Bilinear resampling with zero fill outside the map, and backward warping
//! of a map by a dense flow field.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// A continuous `(y, x)` location in pixel units; integers hit pixel centres.
pub type Coord = (f64, f64);

struct Taps {
    y0: isize,
    x0: isize,
    fy: f64,
    fx: f64,
}

#[inline]
fn taps(y: f64, x: f64) -> Taps {
    let yf = math::floor(y);
    let xf = math::floor(x);
    Taps {
        y0: yf as isize,
        x0: xf as isize,
        fy: y - yf,
        fx: x - xf,
    }
}

#[inline]
fn pixel_offset(h: usize, w: usize, y: isize, x: isize) -> Option<usize> {
    if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
        None
    } else {
        Some(y as usize * w + x as usize)
    }
}

#[inline]
fn corners(t: &Taps) -> [(isize, isize, f64); 4] {
    [
        (t.y0, t.x0, (1.0 - t.fy) * (1.0 - t.fx)),
        (t.y0, t.x0 + 1, (1.0 - t.fy) * t.fx),
        (t.y0 + 1, t.x0, t.fy * (1.0 - t.fx)),
        (t.y0 + 1, t.x0 + 1, t.fy * t.fx),
    ]
}

/// Samples `map` (`[H,W,C]`) at each coordinate, returning `[len, C]`.
///
/// Pixels outside the map read as zero, so a coordinate whose whole
/// neighbourhood is outside yields zero.
pub fn bilinear_sample(map: &Tensor, coords: &[Coord]) -> Result<Tensor> {
    let (h, w, c) = map.hwc()?;
    if coords.is_empty() {
        return Err(Error::invalid("bilinear_sample", "no coordinates"));
    }
    let src = map.data();
    let mut out = vec![0.0; coords.len() * c];
    for (n, &(y, x)) in coords.iter().enumerate() {
        sample_into(src, h, w, c, y, x, &mut out[n * c..(n + 1) * c]);
    }
    Tensor::new(vec![coords.len(), c], out)
}

#[inline]
fn sample_into(src: &[f64], h: usize, w: usize, c: usize, y: f64, x: f64, dst: &mut [f64]) {
    let t = taps(y, x);
    for (py, px, wt) in corners(&t) {
        if let Some(off) = pixel_offset(h, w, py, px) {
            if wt != 0.0 {
                for (d, &s) in dst.iter_mut().zip(&src[off * c..(off + 1) * c]) {
                    *d += wt * s;
                }
            }
        }
    }
}

/// Accumulates the VJP of one sample into `grad_map` and returns the
/// gradient with respect to the sampled coordinate.
#[inline]
fn sample_backward_into(
    src: &[f64],
    h: usize,
    w: usize,
    c: usize,
    y: f64,
    x: f64,
    g: &[f64],
    grad_map: &mut [f64],
) -> Coord {
    let t = taps(y, x);
    let (mut gy, mut gx) = (0.0, 0.0);
    // d weight / d y and d weight / d x for each corner, same order as `corners`
    let dwy = [-(1.0 - t.fx), -t.fx, 1.0 - t.fx, t.fx];
    let dwx = [-(1.0 - t.fy), 1.0 - t.fy, -t.fy, t.fy];
    for (k, (py, px, wt)) in corners(&t).into_iter().enumerate() {
        if let Some(off) = pixel_offset(h, w, py, px) {
            let pix = &src[off * c..(off + 1) * c];
            let gm = &mut grad_map[off * c..(off + 1) * c];
            let mut dotv = 0.0;
            for ch in 0..c {
                gm[ch] += wt * g[ch];
                dotv += pix[ch] * g[ch];
            }
            gy += dwy[k] * dotv;
            gx += dwx[k] * dotv;
        }
    }
    (gy, gx)
}

/// VJP of [`bilinear_sample`]: gradients for the map and for each coordinate.
pub fn bilinear_sample_backward(
    map: &Tensor,
    coords: &[Coord],
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<Coord>)> {
    let (h, w, c) = map.hwc()?;
    grad_out.expect_dims("bilinear_sample_backward", &[coords.len(), c])?;
    let src = map.data();
    let go = grad_out.data();
    let mut gmap = vec![0.0; src.len()];
    let gcoords = coords
        .iter()
        .enumerate()
        .map(|(n, &(y, x))| {
            sample_backward_into(src, h, w, c, y, x, &go[n * c..(n + 1) * c], &mut gmap)
        })
        .collect();
    Ok((Tensor::new(map.dims().to_vec(), gmap)?, gcoords))
}

/// Backward warp: `out[y, x] = sample(map, (y - flow_y, x - flow_x))`.
///
/// `flow` is `[H,W,2]` holding `(dy, dx)` per output pixel.
pub fn warp_by_flow(map: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let (h, w, c) = map.hwc()?;
    flow.expect_dims("warp_by_flow", &[h, w, 2])?;
    let src = map.data();
    let f = flow.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let sy = y as f64 - f[2 * p];
            let sx = x as f64 - f[2 * p + 1];
            sample_into(src, h, w, c, sy, sx, &mut out[p * c..(p + 1) * c]);
        }
    }
    Tensor::new(map.dims().to_vec(), out)
}

/// VJP of [`warp_by_flow`]: `(grad_map, grad_flow)`.
pub fn warp_by_flow_backward(
    map: &Tensor,
    flow: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (h, w, c) = map.hwc()?;
    flow.expect_dims("warp_by_flow_backward", &[h, w, 2])?;
    grad_out.expect_same_dims("warp_by_flow_backward", map)?;
    let src = map.data();
    let f = flow.data();
    let go = grad_out.data();
    let mut gmap = vec![0.0; src.len()];
    let mut gflow = vec![0.0; f.len()];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let sy = y as f64 - f[2 * p];
            let sx = x as f64 - f[2 * p + 1];
            let (gy, gx) =
                sample_backward_into(src, h, w, c, sy, sx, &go[p * c..(p + 1) * c], &mut gmap);
            gflow[2 * p] = -gy;
            gflow[2 * p + 1] = -gx;
        }
    }
    Ok((
        Tensor::new(map.dims().to_vec(), gmap)?,
        Tensor::new(flow.dims().to_vec(), gflow)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Tensor {
        Tensor::from_fn(&[3, 4, 2], |i| i as f64 * 0.5 - 3.0)
    }

    #[test]
    fn lattice_points_are_exact() {
        let m = ramp();
        for y in 0..3 {
            for x in 0..4 {
                let s = bilinear_sample(&m, &[(y as f64, x as f64)]).unwrap();
                assert_eq!(s.data(), &[m.at3(y, x, 0), m.at3(y, x, 1)]);
            }
        }
    }

    #[test]
    fn midpoint_is_linear() {
        let m = Tensor::new(vec![1, 2, 1], vec![0.0, 2.0]).unwrap();
        assert_eq!(bilinear_sample(&m, &[(0.0, 0.5)]).unwrap().data(), &[1.0]);
    }

    #[test]
    fn far_outside_reads_zero() {
        let m = Tensor::full(&[3, 3, 1], 5.0);
        assert_eq!(
            bilinear_sample(&m, &[(-10.0, -10.0)]).unwrap().data(),
            &[0.0]
        );
        // half a pixel outside blends with the zero fill
        assert_eq!(bilinear_sample(&m, &[(-0.5, 1.0)]).unwrap().data(), &[2.5]);
    }

    #[test]
    fn zero_flow_is_identity() {
        let m = ramp();
        let out = warp_by_flow(&m, &Tensor::zeros(&[3, 4, 2])).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn constant_flow_shifts_with_zero_fill() {
        let m = ramp();
        let flow = Tensor::from_fn(&[3, 4, 2], |i| if i % 2 == 1 { 1.0 } else { 0.0 });
        let out = warp_by_flow(&m, &flow).unwrap();
        for y in 0..3 {
            assert_eq!(out.at3(y, 0, 0), 0.0);
            for x in 1..4 {
                assert_eq!(out.at3(y, x, 1), m.at3(y, x - 1, 1));
            }
        }
    }
}
