//! Polyharmonic spline interpolation in the plane.
//!
//! `s(x, y) = Σ wᵢ φ(‖(x, y) − pᵢ‖) + v₁x + v₂y + v₃`, fitted by solving
//!
//! ```text
//! [ A + λI  B ] [w]   [values]
//! [ Bᵀ      0 ] [v] = [  0   ]
//! ```
//!
//! with `Aᵢⱼ = φ(‖pᵢ − pⱼ‖)` and `B` rows `(xᵢ, yᵢ, 1)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::linalg::Lu;
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Radial basis order: `φ₁(r) = r` or `φ₂(r) = r² log r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "u32", into = "u32"))]
pub enum RbfOrder {
    Linear,
    #[default]
    ThinPlate,
}

impl TryFrom<u32> for RbfOrder {
    type Error = Error;

    fn try_from(order: u32) -> Result<Self> {
        match order {
            1 => Ok(RbfOrder::Linear),
            2 => Ok(RbfOrder::ThinPlate),
            k => Err(Error::invalid("rbf", format!("unsupported order {k}"))),
        }
    }
}

impl From<RbfOrder> for u32 {
    fn from(o: RbfOrder) -> u32 {
        match o {
            RbfOrder::Linear => 1,
            RbfOrder::ThinPlate => 2,
        }
    }
}

impl RbfOrder {
    /// φ as a function of the squared distance.
    #[inline]
    pub fn phi_sq(self, r2: f64) -> f64 {
        match self {
            RbfOrder::Linear => math::sqrt(r2),
            RbfOrder::ThinPlate => {
                if r2 == 0.0 {
                    0.0
                } else {
                    0.5 * r2 * math::ln(r2)
                }
            }
        }
    }

    /// `∇ᵤ φ(‖u‖) = g · u`; returns the scalar `g`. Zero at the origin.
    #[inline]
    pub fn grad_factor_sq(self, r2: f64) -> f64 {
        if r2 == 0.0 {
            return 0.0;
        }
        match self {
            RbfOrder::Linear => 1.0 / math::sqrt(r2),
            RbfOrder::ThinPlate => math::ln(r2) + 1.0,
        }
    }
}

/// `φ_order(r)`; `order` must be 1 or 2 and `r` non-negative.
pub fn rbf(r: f64, order: u32) -> Result<f64> {
    let kind = RbfOrder::try_from(order)?;
    if !(r >= 0.0) {
        return Err(Error::invalid("rbf", "radius must be non-negative"));
    }
    Ok(kind.phi_sq(r * r))
}

#[inline]
fn dist_sq(a: Point, b: Point) -> f64 {
    let (dx, dy) = (a.x - b.x, a.y - b.y);
    dx * dx + dy * dy
}

/// Fitted spline for one scalar channel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplineInterpolant {
    pub sites: Vec<Point>,
    pub weights: Vec<f64>,
    /// `(v₁, v₂, v₃)`: coefficients of `x`, `y` and the constant.
    pub affine: [f64; 3],
    pub order: RbfOrder,
}

impl SplineInterpolant {
    pub fn eval(&self, q: Point) -> f64 {
        let mut s = 0.0;
        for (p, w) in self.sites.iter().zip(&self.weights) {
            s += w * self.order.phi_sq(dist_sq(q, *p));
        }
        s + self.affine[0] * q.x + self.affine[1] * q.y + self.affine[2]
    }

    /// Packed solution vector `[w; v]`.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut z = self.weights.clone();
        z.extend_from_slice(&self.affine);
        z
    }
}

pub fn eval_interpolant(interp: &SplineInterpolant, queries: &[Point]) -> Vec<f64> {
    queries.iter().map(|&q| interp.eval(q)).collect()
}

/// The factored interpolation system for a fixed set of sites, reusable
/// across value channels.
#[derive(Debug, Clone)]
pub struct SplineSystem {
    sites: Vec<Point>,
    order: RbfOrder,
    regularization: f64,
    lu: Lu,
}

const PIVOT_TOL: f64 = 1e-13;

impl SplineSystem {
    pub fn new(sites: &[Point], order: RbfOrder, regularization: f64) -> Result<Self> {
        validate_sites(sites)?;
        if !(regularization >= 0.0) {
            return Err(Error::invalid(
                "solve_interpolant",
                "regularization must be >= 0",
            ));
        }
        let n = sites.len();
        let m = n + 3;
        let mut a = vec![0.0; m * m];
        for i in 0..n {
            for j in 0..n {
                a[i * m + j] = order.phi_sq(dist_sq(sites[i], sites[j]));
            }
            a[i * m + i] += regularization;
            let b = [sites[i].x, sites[i].y, 1.0];
            for (k, &bk) in b.iter().enumerate() {
                a[i * m + n + k] = bk;
                a[(n + k) * m + i] = bk;
            }
        }
        let lu = Lu::factor(a, m, PIVOT_TOL)?;
        Ok(SplineSystem {
            sites: sites.to_vec(),
            order,
            regularization,
            lu,
        })
    }

    pub fn sites(&self) -> &[Point] {
        &self.sites
    }

    pub fn order(&self) -> RbfOrder {
        self.order
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn fit(&self, values: &[f64]) -> Result<SplineInterpolant> {
        let n = self.sites.len();
        if values.len() != n {
            return Err(Error::shape("solve_interpolant", "values", n, values.len()));
        }
        let mut rhs = values.to_vec();
        rhs.extend_from_slice(&[0.0; 3]);
        let z = self.lu.solve(&rhs);
        Ok(SplineInterpolant {
            sites: self.sites.clone(),
            weights: z[..n].to_vec(),
            affine: [z[n], z[n + 1], z[n + 2]],
            order: self.order,
        })
    }

    /// Back-propagates cotangents of several fitted channels through the
    /// linear solve.
    ///
    /// `grad_coeffs[c]` is dL/d[w; v] for channel `c` (length `n + 3`) and
    /// `coeffs[c]` the corresponding solution. Returns the site gradient
    /// (summed over channels) and the value gradient per channel.
    pub fn backward_solve(
        &self,
        coeffs: &[Vec<f64>],
        grad_coeffs: &[Vec<f64>],
    ) -> (Vec<Point>, Vec<Vec<f64>>) {
        let n = self.sites.len();
        let mut gsites = vec![Point::default(); n];
        let mut gvalues = Vec::with_capacity(coeffs.len());
        for (z, gz) in coeffs.iter().zip(grad_coeffs) {
            // M is symmetric, but the transposed solve keeps this correct for
            // any future non-symmetric variant.
            let adj = self.lu.solve_transpose(gz);
            // dL/dM = -adj zᵀ; fold the symmetric pairs (i,j),(j,i).
            for k in 0..n {
                let pk = self.sites[k];
                let (mut gx, mut gy) = (0.0, 0.0);
                for j in 0..n {
                    if j == k {
                        continue;
                    }
                    let pj = self.sites[j];
                    let (ux, uy) = (pk.x - pj.x, pk.y - pj.y);
                    let f = self.order.grad_factor_sq(ux * ux + uy * uy);
                    let gm = -(adj[k] * z[j] + adj[j] * z[k]);
                    gx += gm * f * ux;
                    gy += gm * f * uy;
                }
                gx += -(adj[k] * z[n] + adj[n] * z[k]);
                gy += -(adj[k] * z[n + 1] + adj[n + 1] * z[k]);
                gsites[k].x += gx;
                gsites[k].y += gy;
            }
            gvalues.push(adj[..n].to_vec());
        }
        (gsites, gvalues)
    }
}

fn validate_sites(sites: &[Point]) -> Result<()> {
    let n = sites.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("need at least 3 sites, got {n}")));
    }
    if sites.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::Degenerate("non-finite site".into()));
    }
    let extent = sites
        .iter()
        .fold(0.0f64, |m, p| m.max(p.x.abs()).max(p.y.abs()))
        .max(1.0);
    let dup_tol = (1e-12 * extent) * (1e-12 * extent);
    for i in 0..n {
        for j in i + 1..n {
            if dist_sq(sites[i], sites[j]) <= dup_tol {
                return Err(Error::Degenerate(format!("duplicate sites {i} and {j}")));
            }
        }
    }
    let p0 = sites[0];
    let p1 = sites[1];
    let (ax, ay) = (p1.x - p0.x, p1.y - p0.y);
    let len = math::sqrt(ax * ax + ay * ay);
    let collinear = sites[2..].iter().all(|p| {
        let cross = ax * (p.y - p0.y) - ay * (p.x - p0.x);
        cross.abs() <= 1e-12 * len * extent
    });
    if collinear {
        return Err(Error::Degenerate("sites are collinear".into()));
    }
    Ok(())
}

pub fn solve_interpolant(
    sites: &[Point],
    values: &[f64],
    order: RbfOrder,
    regularization: f64,
) -> Result<SplineInterpolant> {
    SplineSystem::new(sites, order, regularization)?.fit(values)
}

/// Evaluates several channels that share sites at every query point and,
/// when `grads` is given, accumulates the evaluation VJP.
pub(crate) struct MultiEval<'a> {
    pub sites: &'a [Point],
    pub order: RbfOrder,
    pub coeffs: &'a [Vec<f64>],
}

impl MultiEval<'_> {
    pub fn eval(&self, queries: &[Point]) -> Vec<Vec<f64>> {
        let n = self.sites.len();
        let mut out = vec![vec![0.0; queries.len()]; self.coeffs.len()];
        for (qi, &q) in queries.iter().enumerate() {
            let mut acc = vec![0.0; self.coeffs.len()];
            for (i, &p) in self.sites.iter().enumerate() {
                let phi = self.order.phi_sq(dist_sq(q, p));
                for (a, z) in acc.iter_mut().zip(self.coeffs) {
                    *a += z[i] * phi;
                }
            }
            for (c, z) in self.coeffs.iter().enumerate() {
                out[c][qi] = acc[c] + z[n] * q.x + z[n + 1] * q.y + z[n + 2];
            }
        }
        out
    }

    /// Given dL/ds at each query per channel, returns dL/d[w; v] per channel
    /// and the direct (evaluation-path) gradient with respect to the sites.
    pub fn backward(&self, queries: &[Point], grads: &[&[f64]]) -> (Vec<Vec<f64>>, Vec<Point>) {
        let n = self.sites.len();
        let mut gcoef = vec![vec![0.0; n + 3]; self.coeffs.len()];
        let mut gsites = vec![Point::default(); n];
        for (qi, &q) in queries.iter().enumerate() {
            for (i, &p) in self.sites.iter().enumerate() {
                let (ux, uy) = (q.x - p.x, q.y - p.y);
                let r2 = ux * ux + uy * uy;
                let phi = self.order.phi_sq(r2);
                let f = self.order.grad_factor_sq(r2);
                let mut wg = 0.0;
                for (c, z) in self.coeffs.iter().enumerate() {
                    let g = grads[c][qi];
                    gcoef[c][i] += g * phi;
                    wg += g * z[i];
                }
                // s depends on p through φ(‖q − p‖): d/dp = −∇φ(q − p)
                gsites[i].x -= wg * f * ux;
                gsites[i].y -= wg * f * uy;
            }
            for (c, gc) in gcoef.iter_mut().enumerate() {
                let g = grads[c][qi];
                gc[n] += g * q.x;
                gc[n + 1] += g * q.y;
                gc[n + 2] += g;
            }
        }
        (gcoef, gsites)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: f64 = core::f64::consts::E;

    #[test]
    fn rbf_values() {
        assert_eq!(rbf(0.0, 2).unwrap(), 0.0);
        assert_eq!(rbf(1.0, 2).unwrap(), 0.0);
        assert!((rbf(E, 2).unwrap() - E * E).abs() < 1e-12);
        assert_eq!(rbf(2.5, 1).unwrap(), 2.5);
        assert!(rbf(1.0, 3).is_err());
        assert!(rbf(-1.0, 1).is_err());
    }

    fn triangle() -> Vec<Point> {
        vec![
            Point::new(0.0, 0.0),
            Point::new(3.0, 1.0),
            Point::new(1.0, 4.0),
        ]
    }

    #[test]
    fn zero_values_give_zero_solution() {
        let s = solve_interpolant(&triangle(), &[0.0; 3], RbfOrder::ThinPlate, 0.0).unwrap();
        assert!(s.weights.iter().all(|&w| w == 0.0));
        assert_eq!(s.affine, [0.0; 3]);
        assert_eq!(s.eval(Point::new(7.0, -2.0)), 0.0);
    }

    #[test]
    fn affine_data_is_reproduced() {
        let sites = triangle();
        let values: Vec<f64> = sites.iter().map(|p| 2.0 * p.x + 1.0).collect();
        for order in [RbfOrder::Linear, RbfOrder::ThinPlate] {
            let s = solve_interpolant(&sites, &values, order, 0.0).unwrap();
            assert!(s.weights.iter().all(|w| w.abs() < 1e-12));
            assert!((s.affine[0] - 2.0).abs() < 1e-12);
            assert!(s.affine[1].abs() < 1e-12);
            assert!((s.affine[2] - 1.0).abs() < 1e-12);
            assert!((s.eval(Point::new(10.0, -4.0)) - 21.0).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_sites_are_named() {
        let dup = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 0.0),
        ];
        let err = solve_interpolant(&dup, &[0.0; 3], RbfOrder::ThinPlate, 0.0).unwrap_err();
        assert!(format!("{err}").contains("duplicate"));
        let line = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0),
            Point::new(5.0, 5.0),
        ];
        let err = solve_interpolant(&line, &[0.0; 4], RbfOrder::ThinPlate, 0.0).unwrap_err();
        assert!(format!("{err}").contains("collinear"));
        let two = [Point::new(0.0, 0.0), Point::new(1.0, 0.0)];
        assert!(solve_interpolant(&two, &[0.0; 2], RbfOrder::Linear, 0.0).is_err());
    }

    #[test]
    fn side_conditions_hold() {
        let sites = vec![
            Point::new(0.3, 0.1),
            Point::new(4.0, 0.7),
            Point::new(2.2, 3.9),
            Point::new(5.1, 5.3),
            Point::new(0.9, 6.2),
        ];
        let values = [1.0, -2.0, 0.5, 3.0, -1.5];
        let s = solve_interpolant(&sites, &values, RbfOrder::ThinPlate, 0.0).unwrap();
        let sw: f64 = s.weights.iter().sum();
        let swx: f64 = s.weights.iter().zip(&sites).map(|(w, p)| w * p.x).sum();
        let swy: f64 = s.weights.iter().zip(&sites).map(|(w, p)| w * p.y).sum();
        assert!(sw.abs() < 1e-8 && swx.abs() < 1e-8 && swy.abs() < 1e-8);
        for (p, v) in sites.iter().zip(&values) {
            assert!((s.eval(*p) - v).abs() < 1e-8);
        }
    }
}
