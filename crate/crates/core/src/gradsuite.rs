//! Registry of differentiable operations at small fixed shapes, checked
//! against central differences.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::{activation, activation_backward, Activation};
use crate::bench::{bce_with_logits, derive_seed};
use crate::cells::{Bottleneck, Cell, CellState, ConvLstmParams, TrajLstmParams, WarpLstmParams};
use crate::conv::{conv2d, conv2d_backward, ConvParams, Padding};
use crate::error::Result;
use crate::geom::BBox;
use crate::gradcheck::{finite_diff_check, Differentiable, GradReport};
use crate::matching::{
    attention_pool, attention_pool_backward, avg_pool_spatial, avg_pool_spatial_backward,
    correspondence_score, correspondence_score_backward, roi_pool, roi_pool_backward,
    AttentionParams, CorrespondenceHead,
};
use crate::params::ParamSet;
use crate::sample::{
    bilinear_sample, bilinear_sample_backward, warp_by_flow, warp_by_flow_backward, Coord,
};
use crate::spline::{
    sparse_warp, sparse_warp_backward, ControlPointSet, Displacement, MultiEval, Point, RbfOrder,
    SplineSystem, WarpConfig,
};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-5;
/// Step for smooth operations.
pub const EPSILON: f64 = 1e-5;
/// Step for operations built on bilinear sampling, which is only piecewise
/// smooth: a smaller step keeps the probe off the pixel-lattice kinks.
pub const KINK_EPSILON: f64 = 3e-6;

/// An operation, the point it is checked at and the difference step.
pub struct SuiteEntry {
    pub op: Box<dyn Differentiable>,
    pub point: Vec<Tensor>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SuiteReport {
    pub seed: u64,
    pub tolerance: f64,
    pub results: Vec<GradReport>,
    pub passed: bool,
}

pub fn run_suite(entries: &[SuiteEntry], seed: u64) -> Result<SuiteReport> {
    let results = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            finite_diff_check(
                e.op.as_ref(),
                &e.point,
                e.epsilon,
                derive_seed(seed, 0, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let passed = results.iter().all(|r| r.max_rel_error <= TOLERANCE);
    Ok(SuiteReport {
        seed,
        tolerance: TOLERANCE,
        results,
        passed,
    })
}

pub fn gradcheck_suite(seed: u64) -> Result<SuiteReport> {
    run_suite(&registry(seed)?, seed)
}

fn rand_tensor(dims: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(dims, |_| rng.random_range(-scale..scale))
}

fn entry(op: impl Differentiable + 'static, point: Vec<Tensor>) -> SuiteEntry {
    SuiteEntry {
        op: Box::new(op),
        point,
        epsilon: EPSILON,
    }
}

fn kinked(e: SuiteEntry) -> SuiteEntry {
    with_epsilon(e, KINK_EPSILON)
}

fn with_epsilon(mut e: SuiteEntry, epsilon: f64) -> SuiteEntry {
    e.epsilon = epsilon;
    e
}

/// Every registered operation, with inputs drawn from `seed`.
pub fn registry(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();

    out.push(entry(
        Conv2dOp { corrupt: false },
        vec![
            rand_tensor(&[5, 6, 3], 1.0, r),
            rand_tensor(&[3, 3, 3, 4], 0.5, r),
            rand_tensor(&[4], 0.5, r),
        ],
    ));
    for a in [Activation::Sigmoid, Activation::Tanh] {
        out.push(entry(
            ActivationOp(a),
            vec![rand_tensor(&[4, 4, 2], 2.0, r)],
        ));
    }
    out.push(kinked(entry(
        FlowWarpOp,
        vec![
            rand_tensor(&[6, 7, 2], 1.0, r),
            rand_tensor(&[6, 7, 2], 1.5, r),
        ],
    )));
    let coords = Tensor::from_fn(&[12, 2], |i| {
        if i % 2 == 0 {
            r.random_range(-0.7..5.6)
        } else {
            r.random_range(-0.7..6.6)
        }
    });
    out.push(kinked(entry(
        BilinearOp,
        vec![rand_tensor(&[5, 6, 2], 1.0, r), coords],
    )));

    let sites = Tensor::from_fn(&[7, 2], |_| r.random_range(0.0..10.0));
    let queries: Vec<Point> = (0..9)
        .map(|_| Point::new(r.random_range(0.0..10.0), r.random_range(0.0..10.0)))
        .collect();
    let values = rand_tensor(&[7], 1.0, r);
    for order in [RbfOrder::ThinPlate, RbfOrder::Linear] {
        out.push(entry(
            InterpolantOp {
                order,
                queries: queries.clone(),
            },
            vec![sites.clone(), values.clone()],
        ));
    }

    out.push(kinked(entry(
        SparseWarpOp {
            base: ControlPointSet::grid(12, 12, 3, 3, true)?,
            cfg: WarpConfig::default(),
        },
        vec![
            rand_tensor(&[12, 12, 2], 1.0, r),
            rand_tensor(&[9, 2], 1.5, r),
        ],
    )));

    out.push(entry(AvgPoolOp, vec![rand_tensor(&[4, 5, 3], 1.0, r)]));
    out.push(entry(
        RoiPoolOp {
            bbox: BBox::new(0.13, 0.21, 0.77, 0.86),
            out: (3, 3),
        },
        vec![rand_tensor(&[9, 10, 2], 1.0, r)],
    ));

    let (c, d) = (8, 2);
    let att = AttentionParams::random(c, Some(d), r);
    let mut point: Vec<Tensor> = (0..4).map(|_| rand_tensor(&[3, 3, c], 1.0, r)).collect();
    // b_s shifts every logit equally, so its gradient is exactly zero and a
    // difference quotient for it is pure rounding noise; it stays fixed.
    let mut tensors = att.tensors();
    tensors.pop();
    point.extend(tensors);
    // The proposal only enters through the softmax, where directional
    // derivatives are small; a wider step keeps rounding below tolerance.
    out.push(with_epsilon(
        entry(
            AttentionOp {
                queries: 3,
                template: att,
            },
            point,
        ),
        1e-4,
    ));

    let head = CorrespondenceHead::random(3, 4, 3, r);
    let mut point = vec![
        rand_tensor(&[4, 4, 3], 1.0, r),
        rand_tensor(&[4, 4, 3], 1.0, r),
    ];
    point.extend(head.tensors());
    out.push(entry(HeadOp { template: head }, point));

    out.push(entry(
        BceOp {
            target: Tensor::from_fn(&[3, 4, 1], |_| r.random_range(0.0..1.0)),
        },
        vec![rand_tensor(&[3, 4, 1], 3.0, r)],
    ));

    let (h, w, cx, hid) = (12, 12, 4, 4);
    let base = |r: &mut ChaCha8Rng| {
        let mut b = ConvLstmParams::random(cx, hid, 3, 1.0, r);
        b.gates
            .bias
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += r.random_range(-0.5..0.5));
        b
    };
    let conv = Cell::ConvLstm(base(r));
    let mut warp = WarpLstmParams::from_base(base(r), (3, 3));
    warp.disp.kernel = rand_tensor(warp.disp.kernel.dims(), 0.6, r);
    warp.disp.bias = rand_tensor(&[2], 0.8, r);
    let mut warp_bn = warp.clone();
    warp_bn.base = ConvLstmParams::random(2, 2, 3, 1.0, r);
    warp_bn.disp = ConvParams::new(
        rand_tensor(&[1, 1, 4, 2], 0.6, r),
        rand_tensor(&[2], 0.8, r),
    )?;
    let mut bn = Bottleneck::random(cx, 2, true, r);
    bn.down.bias = rand_tensor(&[2], 0.3, r);
    warp_bn.bottleneck = Some(bn);
    let mut traj = TrajLstmParams::from_base(base(r), 3, 3);
    traj.flow.kernel = rand_tensor(traj.flow.kernel.dims(), 0.3, r);
    traj.flow.bias = rand_tensor(traj.flow.bias.dims(), 1.0, r);
    traj.aggregate.kernel = rand_tensor(traj.aggregate.kernel.dims(), 0.5, r);
    for (name, cell) in [
        ("convlstm_step", conv),
        ("warplstm_step", Cell::WarpLstm(warp)),
        ("warplstm_step_bottleneck", Cell::WarpLstm(warp_bn)),
        ("trajlstm_step", Cell::TrajLstm(traj)),
    ] {
        let k = cell.hidden();
        let mut point = vec![
            rand_tensor(&[h, w, cx], 1.0, r),
            rand_tensor(&[h, w, k], 1.0, r),
            rand_tensor(&[h, w, k], 1.0, r),
        ];
        point.extend(cell.tensors());
        // The trajectory cell samples at several flows per pixel, so kinks
        // sit closer together and need the smallest step.
        let epsilon = match cell {
            Cell::ConvLstm(_) => EPSILON,
            Cell::WarpLstm(_) => KINK_EPSILON,
            Cell::TrajLstm(_) => 3e-7,
        };
        out.push(with_epsilon(
            entry(
                CellOp {
                    name,
                    template: cell,
                },
                point,
            ),
            epsilon,
        ));
    }
    Ok(out)
}

/// A conv2d whose backward is deliberately off by 1%: the suite must flag
/// it.
pub fn corrupted_entry(seed: u64) -> SuiteEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    entry(
        Conv2dOp { corrupt: true },
        vec![
            rand_tensor(&[4, 4, 2], 1.0, r),
            rand_tensor(&[3, 3, 2, 2], 0.5, r),
            rand_tensor(&[2], 0.5, r),
        ],
    )
}

struct Conv2dOp {
    corrupt: bool,
}

impl Differentiable for Conv2dOp {
    fn name(&self) -> &str {
        if self.corrupt {
            "conv2d_corrupted"
        } else {
            "conv2d"
        }
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        conv2d(
            &a[0],
            &ConvParams::new(a[1].clone(), a[2].clone())?,
            Padding::SameZero,
        )
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let r = conv2d_backward(
            &a[0],
            &ConvParams::new(a[1].clone(), a[2].clone())?,
            Padding::SameZero,
            g,
        )?;
        let k = if self.corrupt {
            r.params.kernel.scale(1.01)
        } else {
            r.params.kernel
        };
        Ok(vec![r.input, k, r.params.bias])
    }
}

struct ActivationOp(Activation);

impl Differentiable for ActivationOp {
    fn name(&self) -> &str {
        match self.0 {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        Ok(activation(&a[0], self.0))
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![activation_backward(
            &activation(&a[0], self.0),
            self.0,
            g,
        )?])
    }
}

struct BilinearOp;

fn coords_of(t: &Tensor) -> Vec<Coord> {
    t.data().chunks(2).map(|c| (c[0], c[1])).collect()
}

impl Differentiable for BilinearOp {
    fn name(&self) -> &str {
        "bilinear_sample"
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        bilinear_sample(&a[0], &coords_of(&a[1]))
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let (gm, gc) = bilinear_sample_backward(&a[0], &coords_of(&a[1]), g)?;
        let gc = gc.iter().flat_map(|&(y, x)| [y, x]).collect();
        Ok(vec![gm, Tensor::new(a[1].dims().to_vec(), gc)?])
    }
}

struct FlowWarpOp;

impl Differentiable for FlowWarpOp {
    fn name(&self) -> &str {
        "warp_by_flow"
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        warp_by_flow(&a[0], &a[1])
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let (gm, gf) = warp_by_flow_backward(&a[0], &a[1], g)?;
        Ok(vec![gm, gf])
    }
}

struct InterpolantOp {
    order: RbfOrder,
    queries: Vec<Point>,
}

fn points_of(t: &Tensor) -> Vec<Point> {
    t.data().chunks(2).map(|c| Point::new(c[0], c[1])).collect()
}

impl Differentiable for InterpolantOp {
    fn name(&self) -> &str {
        match self.order {
            RbfOrder::ThinPlate => "interpolant_thin_plate",
            RbfOrder::Linear => "interpolant_linear",
        }
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        let interp = SplineSystem::new(&points_of(&a[0]), self.order, 0.0)?.fit(a[1].data())?;
        let vals = self.queries.iter().map(|&q| interp.eval(q)).collect();
        Tensor::new(vec![self.queries.len()], vals)
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let sites = points_of(&a[0]);
        let sys = SplineSystem::new(&sites, self.order, 0.0)?;
        let coeffs = vec![sys.fit(a[1].data())?.coefficients()];
        let (gcoef, gs_eval) = MultiEval {
            sites: &sites,
            order: self.order,
            coeffs: &coeffs,
        }
        .backward(&self.queries, &[g.data()]);
        let (gs_solve, gvals) = sys.backward_solve(&coeffs, &gcoef);
        let gs = gs_eval
            .iter()
            .zip(&gs_solve)
            .flat_map(|(e, s)| [e.x + s.x, e.y + s.y])
            .collect();
        Ok(vec![
            Tensor::new(a[0].dims().to_vec(), gs)?,
            Tensor::new(a[1].dims().to_vec(), gvals[0].clone())?,
        ])
    }
}

struct SparseWarpOp {
    base: ControlPointSet,
    cfg: WarpConfig,
}

impl SparseWarpOp {
    fn cps(&self, d: &Tensor) -> Result<ControlPointSet> {
        self.base.with_displacements(
            d.data()
                .chunks(2)
                .map(|c| Displacement::new(c[0], c[1]))
                .collect(),
        )
    }
}

impl Differentiable for SparseWarpOp {
    fn name(&self) -> &str {
        "sparse_warp"
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        sparse_warp(&a[0], &self.cps(&a[1])?, &self.cfg)
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let (gm, gd) = sparse_warp_backward(&a[0], &self.cps(&a[1])?, &self.cfg, g)?;
        let gd = gd.iter().flat_map(|d| [d.dx, d.dy]).collect();
        Ok(vec![gm, Tensor::new(a[1].dims().to_vec(), gd)?])
    }
}

struct AvgPoolOp;

impl Differentiable for AvgPoolOp {
    fn name(&self) -> &str {
        "avg_pool_spatial"
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        avg_pool_spatial(&a[0])
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![avg_pool_spatial_backward(a[0].dims(), g)?])
    }
}

struct RoiPoolOp {
    bbox: BBox,
    out: (usize, usize),
}

impl Differentiable for RoiPoolOp {
    fn name(&self) -> &str {
        "roi_pool"
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        roi_pool(&a[0], &self.bbox, self.out)
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![roi_pool_backward(&a[0], &self.bbox, self.out, g)?])
    }
}

struct AttentionOp {
    queries: usize,
    template: AttentionParams,
}

impl AttentionOp {
    fn params(&self, a: &[Tensor]) -> Result<AttentionParams> {
        let mut p = self.template.clone();
        let mut tensors = a[self.queries + 1..].to_vec();
        tensors.push(self.template.b_s.clone());
        p.load_tensors(&tensors)?;
        Ok(p)
    }
}

impl Differentiable for AttentionOp {
    fn name(&self) -> &str {
        "attention_pool"
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        attention_pool(&a[..self.queries], &a[self.queries], &self.params(a)?)
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let r = attention_pool_backward(&a[..self.queries], &a[self.queries], &self.params(a)?, g)?;
        let mut out = r.query;
        out.push(r.proposal);
        let mut tensors = r.params.tensors();
        tensors.pop();
        out.extend(tensors);
        Ok(out)
    }
}

struct HeadOp {
    template: CorrespondenceHead,
}

impl HeadOp {
    fn head(&self, a: &[Tensor]) -> Result<CorrespondenceHead> {
        let mut p = self.template.clone();
        p.load_tensors(&a[2..])?;
        Ok(p)
    }
}

impl Differentiable for HeadOp {
    fn name(&self) -> &str {
        "correspondence_head"
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(correspondence_score(
            &a[0],
            &a[1],
            &self.head(a)?,
        )?))
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let (gp, gq, gh) =
            correspondence_score_backward(&a[0], &a[1], &self.head(a)?, g.data()[0])?;
        let mut out = vec![gp, gq];
        out.extend(gh.tensors());
        Ok(out)
    }
}

struct BceOp {
    target: Tensor,
}

impl Differentiable for BceOp {
    fn name(&self) -> &str {
        "bce_with_logits"
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(bce_with_logits(&a[0], &self.target)?.0))
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![bce_with_logits(&a[0], &self.target)?
            .1
            .scale(g.data()[0])])
    }
}

/// One recurrent step as a function of `[x, h_prev, c_prev, params...]`,
/// returning the channel concatenation `[output, h, c]`.
struct CellOp {
    name: &'static str,
    template: Cell,
}

impl CellOp {
    fn cell(&self, a: &[Tensor]) -> Result<Cell> {
        let mut c = self.template.clone();
        c.load_tensors(&a[3..])?;
        Ok(c)
    }
}

impl Differentiable for CellOp {
    fn name(&self) -> &str {
        self.name
    }
    fn forward(&self, a: &[Tensor]) -> Result<Tensor> {
        let prev = CellState {
            h: a[1].clone(),
            c: a[2].clone(),
        };
        let (out, _) = self.cell(a)?.forward(&a[0], &prev)?;
        Tensor::concat_many(&[&out.output, &out.state.h, &out.state.c])
    }
    fn vjp(&self, a: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let cell = self.cell(a)?;
        let prev = CellState {
            h: a[1].clone(),
            c: a[2].clone(),
        };
        let (out, cache) = cell.forward(&a[0], &prev)?;
        let oc = out.output.dims()[2];
        let hid = cell.hidden();
        let parts = g.split_channels(&[oc, hid, hid])?;
        let sg = cell.backward(&cache, &parts[0], &parts[1], &parts[2])?;
        let mut res = vec![sg.x, sg.h_prev, sg.c_prev];
        res.extend(sg.params.tensors());
        Ok(res)
    }
}

/// Names of every registered operation, in report order.
pub fn registered_names() -> Vec<String> {
    registry(0)
        .map(|r| r.iter().map(|e| String::from(e.op.name())).collect())
        .unwrap_or_default()
}
