use alloc::string::String;

use rand::Rng;

use crate::conv::{conv2d, conv2d_backward, ConvParams, Padding};
use crate::error::Result;
use crate::math;
use crate::params::{join, ParamSet};
use crate::tensor::Tensor;

/// 1×1 projections around a recurrent cell: the input is projected from `C`
/// down to the cell's `Cb` channels, and the hidden state is projected back
/// up to `C`. With `skip`, the exported representation is `x + up(h)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bottleneck {
    pub down: ConvParams,
    pub up: ConvParams,
    pub skip: bool,
}

impl Bottleneck {
    pub fn random<R: Rng>(channels: usize, reduced: usize, skip: bool, rng: &mut R) -> Self {
        let mut down = ConvParams::zeros(1, 1, channels, reduced);
        let mut up = ConvParams::zeros(1, 1, reduced, channels);
        let bd = 1.0 / math::sqrt(channels as f64);
        let bu = 1.0 / math::sqrt(reduced as f64);
        for v in down.kernel.data_mut() {
            *v = rng.random_range(-bd..bd);
        }
        for v in up.kernel.data_mut() {
            *v = rng.random_range(-bu..bu);
        }
        Bottleneck { down, up, skip }
    }

    pub fn project_in(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.down, Padding::SameZero)
    }

    pub fn project_out(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let up = conv2d(h, &self.up, Padding::SameZero)?;
        if self.skip {
            x.add(&up)
        } else {
            Ok(up)
        }
    }

    /// VJP of [`Bottleneck::project_out`]: `(grad_x, grad_h, grads)`; only
    /// the `up` part of `grads` is populated.
    pub fn project_out_backward(
        &self,
        x: &Tensor,
        h: &Tensor,
        grad: &Tensor,
    ) -> Result<(Tensor, Tensor, Bottleneck)> {
        let g = conv2d_backward(h, &self.up, Padding::SameZero, grad)?;
        let gx = if self.skip {
            grad.clone()
        } else {
            Tensor::zeros_like(x)
        };
        let mut grads = self.zeros_like();
        grads.up = g.params;
        Ok((gx, g.input, grads))
    }

    /// VJP of [`Bottleneck::project_in`], accumulated into `grads.down`.
    pub fn project_in_backward(
        &self,
        x: &Tensor,
        grad: &Tensor,
        grads: &mut Bottleneck,
    ) -> Result<Tensor> {
        let g = conv2d_backward(x, &self.down, Padding::SameZero, grad)?;
        grads.down = g.params;
        Ok(g.input)
    }
}

impl ParamSet for Bottleneck {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.down.visit(&join(prefix, "down"), f);
        self.up.visit(&join(prefix, "up"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.down.visit_mut(f);
        self.up.visit_mut(f);
    }
}
