//! Sparse warping of feature maps from control-point displacements.
//!
//! The displacement of every control point is interpolated into a dense flow
//! with one polyharmonic spline per axis, and the map is backward-warped by
//! that flow. With data sites at the destinations `pᵢ + dᵢ`, the output at
//! each destination reads the input at its source.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::interp::{MultiEval, Point, RbfOrder, SplineSystem};
use crate::error::{Error, Result};
use crate::sample::{warp_by_flow, warp_by_flow_backward};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { dx: 0.0, dy: 0.0 };

    pub const fn new(dx: f64, dy: f64) -> Self {
        Displacement { dx, dy }
    }
}

/// Interior control points with their displacements, plus boundary points
/// pinned to zero displacement.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControlPointSet {
    interior: Vec<Point>,
    boundary: Vec<Point>,
    displacements: Vec<Displacement>,
}

impl ControlPointSet {
    pub fn new(
        interior: Vec<Point>,
        boundary: Vec<Point>,
        displacements: Vec<Displacement>,
    ) -> Result<Self> {
        if interior.len() != displacements.len() {
            return Err(Error::shape(
                "control_points",
                "displacements",
                interior.len(),
                displacements.len(),
            ));
        }
        let all: Vec<Point> = interior.iter().chain(&boundary).copied().collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if all[i] == all[j] {
                    return Err(Error::invalid(
                        "control_points",
                        format!("point ({}, {}) appears twice", all[i].x, all[i].y),
                    ));
                }
            }
        }
        Ok(ControlPointSet {
            interior,
            boundary,
            displacements,
        })
    }

    /// Interior points on the intersections of `lines_y` horizontal and
    /// `lines_x` vertical lines spread evenly over an `h × w` map, row-major.
    /// Line `k` of `n` sits at `(k + 1) · size / (n + 1)` (integer division).
    pub fn grid_points(h: usize, w: usize, lines_y: usize, lines_x: usize) -> Result<Vec<Point>> {
        if lines_y == 0 || lines_x == 0 {
            return Err(Error::invalid(
                "control_points",
                "grid needs at least one line per axis",
            ));
        }
        if lines_y >= h || lines_x >= w {
            return Err(Error::invalid(
                "control_points",
                format!("{lines_y}x{lines_x} grid lines do not fit a {h}x{w} map"),
            ));
        }
        let mut pts = Vec::with_capacity(lines_y * lines_x);
        for i in 0..lines_y {
            let y = (i + 1) * h / (lines_y + 1);
            for j in 0..lines_x {
                let x = (j + 1) * w / (lines_x + 1);
                pts.push(Point::new(x as f64, y as f64));
            }
        }
        Ok(pts)
    }

    /// Four corners and four edge midpoints of an `h × w` map.
    pub fn boundary_points(h: usize, w: usize) -> Vec<Point> {
        let (ym, xm) = ((h - 1) as f64, (w - 1) as f64);
        let (yc, xc) = (ym / 2.0, xm / 2.0);
        vec![
            Point::new(0.0, 0.0),
            Point::new(xm, 0.0),
            Point::new(0.0, ym),
            Point::new(xm, ym),
            Point::new(xc, 0.0),
            Point::new(0.0, yc),
            Point::new(xm, yc),
            Point::new(xc, ym),
        ]
    }

    /// Grid interior points with zero displacement, optionally with the
    /// default boundary points.
    pub fn grid(
        h: usize,
        w: usize,
        lines_y: usize,
        lines_x: usize,
        with_boundary: bool,
    ) -> Result<Self> {
        let interior = Self::grid_points(h, w, lines_y, lines_x)?;
        let boundary = if with_boundary {
            Self::boundary_points(h, w)
        } else {
            Vec::new()
        };
        let n = interior.len();
        Self::new(interior, boundary, vec![Displacement::ZERO; n])
    }

    pub fn interior(&self) -> &[Point] {
        &self.interior
    }

    pub fn boundary(&self) -> &[Point] {
        &self.boundary
    }

    pub fn displacements(&self) -> &[Displacement] {
        &self.displacements
    }

    pub fn with_displacements(&self, displacements: Vec<Displacement>) -> Result<Self> {
        if displacements.len() != self.interior.len() {
            return Err(Error::shape(
                "control_points",
                "displacements",
                self.interior.len(),
                displacements.len(),
            ));
        }
        Ok(ControlPointSet {
            interior: self.interior.clone(),
            boundary: self.boundary.clone(),
            displacements,
        })
    }

    /// `(x + dx, y + dy)` for each interior point.
    pub fn destinations(&self) -> Vec<Point> {
        self.interior
            .iter()
            .zip(&self.displacements)
            .map(|(p, d)| Point::new(p.x + d.dx, p.y + d.dy))
            .collect()
    }
}

/// Where the interpolation data sites for interior points sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SiteMode {
    /// Sites at `p + d`; the warp moves each source exactly onto its
    /// destination.
    #[default]
    Destination,
    /// Sites at the fixed source locations (approximation).
    Source,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WarpConfig {
    pub order: RbfOrder,
    pub regularization: f64,
    pub site_mode: SiteMode,
}

impl Default for WarpConfig {
    fn default() -> Self {
        WarpConfig {
            order: RbfOrder::ThinPlate,
            regularization: 1e-10,
            site_mode: SiteMode::Destination,
        }
    }
}

impl WarpConfig {
    pub fn exact(order: RbfOrder) -> Self {
        WarpConfig {
            order,
            regularization: 0.0,
            site_mode: SiteMode::Destination,
        }
    }
}

/// Dense `(dy, dx)` displacement per pixel, `[H, W, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub flow: Tensor,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        FlowField {
            flow: Tensor::zeros(&[h, w, 2]),
        }
    }

    pub fn uniform(h: usize, w: usize, dy: f64, dx: f64) -> Self {
        FlowField {
            flow: Tensor::from_fn(&[h, w, 2], |i| if i % 2 == 0 { dy } else { dx }),
        }
    }

    /// `(dy, dx)` at pixel `(y, x)`.
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        (self.flow.at3(y, x, 0), self.flow.at3(y, x, 1))
    }
}

fn pixel_grid(h: usize, w: usize) -> Vec<Point> {
    let mut q = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            q.push(Point::new(x as f64, y as f64));
        }
    }
    q
}

/// A solved warp for one control-point configuration on an `h × w` map.
/// Holds what the backward pass needs.
#[derive(Debug, Clone)]
pub struct SparseWarp {
    h: usize,
    w: usize,
    n_interior: usize,
    site_mode: SiteMode,
    system: SplineSystem,
    /// `[w; v]` for the dx channel then the dy channel.
    coeffs: Vec<Vec<f64>>,
    flow: FlowField,
}

impl SparseWarp {
    pub fn plan(cps: &ControlPointSet, h: usize, w: usize, cfg: &WarpConfig) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::invalid("dense_flow", "empty map"));
        }
        if cps
            .displacements
            .iter()
            .any(|d| !d.dx.is_finite() || !d.dy.is_finite())
        {
            return Err(Error::NonFinite {
                op: "sparse_warp",
                what: "displacement".into(),
            });
        }
        let mut sites = match cfg.site_mode {
            SiteMode::Destination => cps.destinations(),
            SiteMode::Source => cps.interior.clone(),
        };
        sites.extend_from_slice(&cps.boundary);
        let nb = cps.boundary.len();
        let mut vx: Vec<f64> = cps.displacements.iter().map(|d| d.dx).collect();
        let mut vy: Vec<f64> = cps.displacements.iter().map(|d| d.dy).collect();
        vx.extend(core::iter::repeat_n(0.0, nb));
        vy.extend(core::iter::repeat_n(0.0, nb));

        let system = SplineSystem::new(&sites, cfg.order, cfg.regularization)?;
        let coeffs = vec![
            system.fit(&vx)?.coefficients(),
            system.fit(&vy)?.coefficients(),
        ];
        let queries = pixel_grid(h, w);
        let vals = MultiEval {
            sites: system.sites(),
            order: cfg.order,
            coeffs: &coeffs,
        }
        .eval(&queries);
        let mut flow = Vec::with_capacity(2 * h * w);
        for q in 0..h * w {
            flow.push(vals[1][q]);
            flow.push(vals[0][q]);
        }
        Ok(SparseWarp {
            h,
            w,
            n_interior: cps.interior.len(),
            site_mode: cfg.site_mode,
            system,
            coeffs,
            flow: FlowField {
                flow: Tensor::new(vec![h, w, 2], flow)?,
            },
        })
    }

    pub fn flow(&self) -> &FlowField {
        &self.flow
    }

    pub fn into_flow(self) -> FlowField {
        self.flow
    }

    pub fn apply(&self, map: &Tensor) -> Result<Tensor> {
        let (h, w, _) = map.hwc()?;
        if (h, w) != (self.h, self.w) {
            return Err(Error::shape("sparse_warp", "height", self.h, h));
        }
        warp_by_flow(map, &self.flow.flow)
    }

    /// VJP of [`SparseWarp::apply`]: `(grad_map, grad_flow)`.
    pub fn apply_backward(&self, map: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
        warp_by_flow_backward(map, &self.flow.flow, grad_out)
    }

    /// Pulls a dense-flow cotangent `[H, W, 2]` back to the interior
    /// displacements, through both the evaluation and the linear solve.
    pub fn backward_flow(&self, grad_flow: &Tensor) -> Result<Vec<Displacement>> {
        grad_flow.expect_dims("sparse_warp_backward", &[self.h, self.w, 2])?;
        let g = grad_flow.data();
        let gdx: Vec<f64> = g.iter().skip(1).step_by(2).copied().collect();
        let gdy: Vec<f64> = g.iter().step_by(2).copied().collect();
        let queries = pixel_grid(self.h, self.w);
        let (gcoef, gsites_eval) = MultiEval {
            sites: self.system.sites(),
            order: self.system.order(),
            coeffs: &self.coeffs,
        }
        .backward(&queries, &[&gdx, &gdy]);
        let (gsites_solve, gvalues) = self.system.backward_solve(&self.coeffs, &gcoef);
        Ok((0..self.n_interior)
            .map(|i| {
                let mut d = Displacement::new(gvalues[0][i], gvalues[1][i]);
                if self.site_mode == SiteMode::Destination {
                    d.dx += gsites_eval[i].x + gsites_solve[i].x;
                    d.dy += gsites_eval[i].y + gsites_solve[i].y;
                }
                d
            })
            .collect())
    }
}

pub fn dense_flow(
    cps: &ControlPointSet,
    h: usize,
    w: usize,
    cfg: &WarpConfig,
) -> Result<FlowField> {
    Ok(SparseWarp::plan(cps, h, w, cfg)?.into_flow())
}

pub fn sparse_warp(map: &Tensor, cps: &ControlPointSet, cfg: &WarpConfig) -> Result<Tensor> {
    let (h, w, _) = map.hwc()?;
    SparseWarp::plan(cps, h, w, cfg)?.apply(map)
}

/// VJP of [`sparse_warp`] with respect to the map and the interior
/// displacements.
pub fn sparse_warp_backward(
    map: &Tensor,
    cps: &ControlPointSet,
    cfg: &WarpConfig,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<Displacement>)> {
    let (h, w, _) = map.hwc()?;
    let plan = SparseWarp::plan(cps, h, w, cfg)?;
    let (gmap, gflow) = plan.apply_backward(map, grad_out)?;
    Ok((gmap, plan.backward_flow(&gflow)?))
}
