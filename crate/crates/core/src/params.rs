//! Named parameter collections, used for gradients, optimizers and
//! checkpoints.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::conv::ConvParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A fixed, ordered collection of named tensors. Gradients of a parameter
/// set are represented by a value of the same type.
pub trait ParamSet: Clone {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.push(t.clone()));
        out
    }

    /// Replaces every tensor, in visiting order.
    fn load_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        let mut it = tensors.iter();
        let mut err = None;
        self.visit_mut(&mut |t| match it.next() {
            Some(src) if err.is_none() => {
                if let Err(e) = src.expect_same_dims("load_tensors", t) {
                    err = Some(e);
                } else {
                    *t = src.clone();
                }
            }
            Some(_) => {}
            None => {
                err.get_or_insert(Error::invalid("load_tensors", "too few tensors"));
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if it.next().is_some() {
            return Err(Error::invalid("load_tensors", "too many tensors"));
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |t| t.data_mut().fill(0.0));
        z
    }

    fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    /// `self += alpha * other`; both must have the same structure.
    fn axpy(&mut self, alpha: f64, other: &Self) {
        let src = other.tensors();
        let mut it = src.iter();
        self.visit_mut(&mut |t| {
            if let Some(o) = it.next() {
                for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                    *a += alpha * b;
                }
            }
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, t| ok &= t.is_finite());
        ok
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

impl ParamSet for ConvParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "kernel"), &self.kernel);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.kernel);
        f(&mut self.bias);
    }
}

impl ParamSet for Tensor {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(String::from(prefix), self);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(self);
    }
}

impl<P: ParamSet> ParamSet for Option<P> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        if let Some(p) = self {
            p.visit_mut(f);
        }
    }
}
