//! Forward/backward contract and a central-difference checker.
//!
//! The checker draws a random output cotangent `v` and, for each argument, a
//! random probe direction `u`. It compares the analytic directional
//! derivative `<vjp(v), u>` against `<f(x + eps u) - f(x - eps u), v> / 2eps`.
//! The step actually applied is the rounded difference between the two
//! perturbed points, so both sides see the same displacement.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An operation exposing a forward pass and a vector–Jacobian product for
/// every argument.
pub trait Differentiable {
    fn name(&self) -> &str;

    fn forward(&self, args: &[Tensor]) -> Result<Tensor>;

    /// One cotangent per argument, each shaped like that argument.
    fn vjp(&self, args: &[Tensor], cotangent: &Tensor) -> Result<Vec<Tensor>>;
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradReport {
    pub op_name: String,
    pub epsilon: f64,
    pub max_rel_error: f64,
    /// Argument with the largest error.
    pub argument_index: usize,
    pub per_argument: Vec<f64>,
}

pub const REL_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR)
}

fn random_like(t: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(t.dims(), |_| rng.random_range(-1.0..1.0))
}

pub fn finite_diff_check(
    op: &dyn Differentiable,
    point: &[Tensor],
    epsilon: f64,
    seed: u64,
) -> Result<GradReport> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(
            "finite_diff_check",
            "epsilon must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = op.forward(point)?;
    let cot = random_like(&out, &mut rng);
    let grads = op.vjp(point, &cot)?;
    if grads.len() != point.len() {
        return Err(Error::shape(
            "finite_diff_check",
            "gradient count",
            point.len(),
            grads.len(),
        ));
    }
    let non_finite = |what: String| Error::NonFinite {
        op: "finite_diff_check",
        what,
    };

    let mut per_argument = Vec::with_capacity(point.len());
    for (k, (arg, grad)) in point.iter().zip(&grads).enumerate() {
        grad.expect_same_dims("finite_diff_check", arg)?;
        if !grad.is_finite() {
            return Err(non_finite(format!(
                "analytic gradient of argument {k} of {}",
                op.name()
            )));
        }
        let dir = random_like(arg, &mut rng);
        let mut plus = point.to_vec();
        let mut minus = point.to_vec();
        plus[k] = arg.zip_map(&dir, |x, u| x + epsilon * u)?;
        minus[k] = arg.zip_map(&dir, |x, u| x - epsilon * u)?;
        let step = plus[k].sub(&minus[k])?;

        let f_plus = op.forward(&plus)?;
        let f_minus = op.forward(&minus)?;
        let numeric: f64 = f_plus
            .data()
            .iter()
            .zip(f_minus.data())
            .zip(cot.data())
            .map(|((&p, &m), &v)| (p - m) * v)
            .sum::<f64>()
            / (2.0 * epsilon);
        let analytic: f64 = grad
            .data()
            .iter()
            .zip(step.data())
            .map(|(&g, &s)| g * s)
            .sum::<f64>()
            / (2.0 * epsilon);
        if !numeric.is_finite() {
            return Err(non_finite(format!(
                "numeric gradient of argument {k} of {}",
                op.name()
            )));
        }
        per_argument.push(relative_error(analytic, numeric));
    }

    let (argument_index, max_rel_error) =
        per_argument
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, 0.0),
                |best, (i, e)| if e > best.1 { (i, e) } else { best },
            );
    Ok(GradReport {
        op_name: String::from(op.name()),
        epsilon,
        max_rel_error,
        argument_index,
        per_argument,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    struct Identity;

    impl Differentiable for Identity {
        fn name(&self) -> &str {
            "identity"
        }
        fn forward(&self, args: &[Tensor]) -> Result<Tensor> {
            Ok(args[0].clone())
        }
        fn vjp(&self, _args: &[Tensor], cot: &Tensor) -> Result<Vec<Tensor>> {
            Ok(vec![cot.clone()])
        }
    }

    struct Broken;

    impl Differentiable for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn forward(&self, args: &[Tensor]) -> Result<Tensor> {
            Ok(args[0].map(|v| v * v))
        }
        fn vjp(&self, args: &[Tensor], cot: &Tensor) -> Result<Vec<Tensor>> {
            Ok(vec![args[0].zip_map(cot, |x, g| x * g)?])
        }
    }

    struct NanGrad;

    impl Differentiable for NanGrad {
        fn name(&self) -> &str {
            "nan"
        }
        fn forward(&self, args: &[Tensor]) -> Result<Tensor> {
            Ok(args[0].clone())
        }
        fn vjp(&self, _args: &[Tensor], cot: &Tensor) -> Result<Vec<Tensor>> {
            Ok(vec![cot.map(|_| f64::NAN)])
        }
    }

    #[test]
    fn identity_is_exact() {
        for seed in 0..10 {
            let x = Tensor::from_fn(&[3, 4], |i| i as f64 * 1.37 - 5.0);
            let r = finite_diff_check(&Identity, &[x], 1e-5, seed).unwrap();
            assert_eq!(r.max_rel_error, 0.0);
        }
    }

    #[test]
    fn wrong_backward_is_caught() {
        let x = Tensor::from_fn(&[5], |i| i as f64 + 1.0);
        let r = finite_diff_check(&Broken, &[x], 1e-5, 3).unwrap();
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn non_finite_gradient_names_argument() {
        let err = finite_diff_check(&NanGrad, &[Tensor::zeros(&[2])], 1e-5, 0).unwrap_err();
        match err {
            Error::NonFinite { what, .. } => assert!(what.contains("argument 0")),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_epsilon() {
        assert!(finite_diff_check(&Identity, &[Tensor::zeros(&[2])], 0.0, 0).is_err());
    }
}
