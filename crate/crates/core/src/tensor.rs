//! Dense row-major `f64` tensors.
//!
//! Spatial maps use the layout `[height, width, channels]` with channels as
//! the innermost axis. Leading batch or time axes are allowed where an
//! operation says so.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("tensor", "dimensions must be positive"));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape("tensor", "data length", expected, data.len()));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.dims)
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// `(height, width, channels)` of a rank-3 map.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape("tensor", "rank", 3, self.dims.len())),
        }
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", "element count", self.data.len(), n));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    #[inline]
    pub fn at3(&self, y: usize, x: usize, c: usize) -> f64 {
        let (w, ch) = (self.dims[1], self.dims[2]);
        self.data[(y * w + x) * ch + c]
    }

    #[inline]
    pub fn at3_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f64 {
        let (w, ch) = (self.dims[1], self.dims[2]);
        &mut self.data[(y * w + x) * ch + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_dims("zip_map", other)?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.expect_same_dims("axpy", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.axpy(1.0, other)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.data.len() != other.data.len() {
            return Err(Error::shape(
                "dot",
                "length",
                self.data.len(),
                other.data.len(),
            ));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_dims(&self, op: &'static str, dims: &[usize]) -> Result<()> {
        if self.dims.len() != dims.len() {
            return Err(Error::shape(op, "rank", dims.len(), self.dims.len()));
        }
        for (axis, (&a, &b)) in AXIS_NAMES.iter().zip(self.dims.iter().zip(dims)) {
            if a != b {
                return Err(Error::shape(op, axis, b, a));
            }
        }
        Ok(())
    }

    pub fn expect_same_dims(&self, op: &'static str, other: &Tensor) -> Result<()> {
        other.expect_dims(op, &self.dims)
    }

    /// Concatenates two maps `[H,W,Ca]`, `[H,W,Cb]` into `[H,W,Ca+Cb]`.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::concat_many(&[a, b])
    }

    pub fn concat_many(parts: &[&Tensor]) -> Result<Tensor> {
        let (h, w, _) = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?
            .hwc()?;
        let mut total = 0;
        for p in parts {
            let (ph, pw, pc) = p.hwc()?;
            if ph != h {
                return Err(Error::shape("concat", "height", h, ph));
            }
            if pw != w {
                return Err(Error::shape("concat", "width", w, pw));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(h * w * total);
        for px in 0..h * w {
            for p in parts {
                let c = p.dims[2];
                data.extend_from_slice(&p.data[px * c..(px + 1) * c]);
            }
        }
        Ok(Tensor {
            dims: vec![h, w, total],
            data,
        })
    }

    /// Splits `[H,W,C]` into consecutive channel blocks of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor>> {
        let (h, w, c) = self.hwc()?;
        let total: usize = sizes.iter().sum();
        if total != c {
            return Err(Error::shape("split_channels", "channels", c, total));
        }
        let mut out: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&s| Vec::with_capacity(h * w * s))
            .collect();
        for px in 0..h * w {
            let mut off = px * c;
            for (buf, &s) in out.iter_mut().zip(sizes) {
                buf.extend_from_slice(&self.data[off..off + s]);
                off += s;
            }
        }
        Ok(out
            .into_iter()
            .zip(sizes)
            .map(|(data, &s)| Tensor {
                dims: vec![h, w, s],
                data,
            })
            .collect())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack", "no inputs"))?;
        let mut dims = vec![parts.len()];
        dims.extend_from_slice(&first.dims);
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            p.expect_same_dims("stack", first)?;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { dims, data })
    }

    /// Inverse of [`Tensor::stack`].
    pub fn unstack(&self) -> Vec<Tensor> {
        let inner = &self.dims[1..];
        let n: usize = inner.iter().product();
        self.data
            .chunks(n)
            .map(|chunk| Tensor {
                dims: inner.to_vec(),
                data: chunk.to_vec(),
            })
            .collect()
    }
}

const AXIS_NAMES: [&str; 6] = ["axis 0", "axis 1", "axis 2", "axis 3", "axis 4", "axis 5"];
