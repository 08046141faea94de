//! Direct 2-D convolution over `[H,W,C]` maps.
//!
//! Every output element is accumulated in the fixed order `(ky, kx, c_in)`
//! starting from zero, and the bias is added last. Results are therefore
//! bitwise reproducible.

use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Padding {
    /// Zero padding that preserves the spatial size. Even kernels put the
    /// extra row/column of padding at the bottom/right.
    SameZero,
    Valid,
}

/// Kernel `[kh, kw, c_in, c_out]` and bias `[c_out]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn new(kernel: Tensor, bias: Tensor) -> Result<Self> {
        let p = ConvParams { kernel, bias };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(kh: usize, kw: usize, c_in: usize, c_out: usize) -> Self {
        ConvParams {
            kernel: Tensor::zeros(&[kh, kw, c_in, c_out]),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    /// 1×1 kernel mapping channel `i` to channel `i`.
    pub fn identity(channels: usize) -> Self {
        let mut p = Self::zeros(1, 1, channels, channels);
        for c in 0..channels {
            p.kernel.data_mut()[c * channels + c] = 1.0;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let kd = self.kernel.dims();
        if kd.len() != 4 {
            return Err(Error::shape("conv2d", "kernel rank", 4, kd.len()));
        }
        self.bias.expect_dims("conv2d", &[kd[3]])
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        let d = self.kernel.dims();
        (d[0], d[1])
    }

    pub fn c_in(&self) -> usize {
        self.kernel.dims()[2]
    }

    pub fn c_out(&self) -> usize {
        self.kernel.dims()[3]
    }

    pub fn zeros_like(&self) -> Self {
        ConvParams {
            kernel: Tensor::zeros_like(&self.kernel),
            bias: Tensor::zeros_like(&self.bias),
        }
    }
}

/// Gradients of [`conv2d`] with respect to each argument.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub params: ConvParams,
}

struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

fn geometry(input: &Tensor, params: &ConvParams, padding: Padding) -> Result<Geometry> {
    params.validate()?;
    let (h, w, cin) = input.hwc()?;
    let (kh, kw) = params.kernel_size();
    if params.c_in() != cin {
        return Err(Error::shape("conv2d", "input channels", params.c_in(), cin));
    }
    let (oh, ow, pad_top, pad_left) = match padding {
        Padding::SameZero => (h, w, (kh - 1) / 2, (kw - 1) / 2),
        Padding::Valid => {
            if kh > h {
                return Err(Error::shape("conv2d", "height", kh, h));
            }
            if kw > w {
                return Err(Error::shape("conv2d", "width", kw, w));
            }
            (h - kh + 1, w - kw + 1, 0, 0)
        }
    };
    Ok(Geometry {
        h,
        w,
        cin,
        kh,
        kw,
        cout: params.c_out(),
        oh,
        ow,
        pad_top,
        pad_left,
    })
}

/// Output columns `ox` whose tap `kx` lands inside the input.
fn tap_columns(g: &Geometry, kx: usize) -> core::ops::Range<usize> {
    let lo = g.pad_left.saturating_sub(kx);
    let hi = (g.w + g.pad_left).saturating_sub(kx).min(g.ow);
    lo..hi.max(lo)
}

pub fn conv2d(input: &Tensor, params: &ConvParams, padding: Padding) -> Result<Tensor> {
    let g = geometry(input, params, padding)?;
    let src = input.data();
    let ker = params.kernel.data();
    let bias = params.bias.data();
    let (cin, cout) = (g.cin, g.cout);
    let mut out = vec![0.0; g.oh * g.ow * cout];
    // Per output element the taps are summed in (ky, kx, ci) order, then
    // the bias is added.
    for oy in 0..g.oh {
        let row = &mut out[oy * g.ow * cout..(oy + 1) * g.ow * cout];
        for ky in 0..g.kh {
            let Some(iy) = (oy + ky).checked_sub(g.pad_top).filter(|&v| v < g.h) else {
                continue;
            };
            for kx in 0..g.kw {
                let kbase = (ky * g.kw + kx) * cin;
                let tap = &ker[kbase * cout..(kbase + cin) * cout];
                for ox in tap_columns(&g, kx) {
                    let ix = ox + kx - g.pad_left;
                    let pix = &src[(iy * g.w + ix) * cin..][..cin];
                    let acc = &mut row[ox * cout..(ox + 1) * cout];
                    for (&v, krow) in pix.iter().zip(tap.chunks_exact(cout)) {
                        for (a, &k) in acc.iter_mut().zip(krow) {
                            *a += v * k;
                        }
                    }
                }
            }
        }
        for acc in row.chunks_exact_mut(cout) {
            for (a, &b) in acc.iter_mut().zip(bias) {
                *a += b;
            }
        }
    }
    Tensor::new(vec![g.oh, g.ow, cout], out)
}

/// Vector–Jacobian product of [`conv2d`] for the output cotangent `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    params: &ConvParams,
    padding: Padding,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let g = geometry(input, params, padding)?;
    grad_out.expect_dims("conv2d_backward", &[g.oh, g.ow, g.cout])?;
    let src = input.data();
    let ker = params.kernel.data();
    let go = grad_out.data();
    let (cin, cout) = (g.cin, g.cout);
    let mut gin = vec![0.0; src.len()];
    let mut gker = vec![0.0; ker.len()];
    let mut gbias = vec![0.0; cout];
    for gpix in go.chunks_exact(cout) {
        for (b, &v) in gbias.iter_mut().zip(gpix) {
            *b += v;
        }
    }
    for oy in 0..g.oh {
        for ky in 0..g.kh {
            let Some(iy) = (oy + ky).checked_sub(g.pad_top).filter(|&v| v < g.h) else {
                continue;
            };
            for kx in 0..g.kw {
                let kbase = (ky * g.kw + kx) * cin;
                let tap = &ker[kbase * cout..(kbase + cin) * cout];
                let gtap = &mut gker[kbase * cout..(kbase + cin) * cout];
                for ox in tap_columns(&g, kx) {
                    let ix = ox + kx - g.pad_left;
                    let in_off = (iy * g.w + ix) * cin;
                    let gpix = &go[(oy * g.ow + ox) * cout..][..cout];
                    let pix = &src[in_off..in_off + cin];
                    let gi = &mut gin[in_off..in_off + cin];
                    for (((&v, gv), krow), gkrow) in pix
                        .iter()
                        .zip(gi.iter_mut())
                        .zip(tap.chunks_exact(cout))
                        .zip(gtap.chunks_exact_mut(cout))
                    {
                        let mut acc = 0.0;
                        for ((gk, &k), &gp) in gkrow.iter_mut().zip(krow).zip(gpix) {
                            *gk += v * gp;
                            acc += k * gp;
                        }
                        *gv += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.dims().to_vec(), gin)?,
        params: ConvParams {
            kernel: Tensor::new(params.kernel.dims().to_vec(), gker)?,
            bias: Tensor::new(vec![cout], gbias)?,
        },
    })
}
