//! Warped control-grid lines for plotting.

use std::io::Write;

use anyhow::Result;
use warpcell_core::bench::{aux_for, Model, Sequence};
use warpcell_core::spline::FlowField;

/// One vertex of a warped grid line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridVertex {
    pub t: usize,
    pub line: usize,
    /// `'h'` for rows, `'v'` for columns.
    pub orientation: char,
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

/// Maps a regular lattice of `lines` rows and columns through each step's
/// flow: vertex `q` goes to `q + flow(q)`. Steps without a learned flow
/// (non-warping cells) keep the lattice unchanged.
pub fn warped_grid(model: &Model, seq: &Sequence, lines: usize) -> Result<Vec<GridVertex>> {
    let roll = model.rollout(&seq.frames, &aux_for(seq))?;
    let (h, w, _) = seq.frames[0].hwc()?;
    let mut out = Vec::new();
    for (t, flow) in roll.flows.iter().enumerate() {
        let zero;
        let flow = match flow {
            Some(f) => f,
            None => {
                zero = FlowField::zeros(h, w);
                &zero
            }
        };
        for line in 0..lines {
            let y = (line + 1) * h / (lines + 1);
            for x in 0..w {
                let (dy, dx) = flow.at(y, x);
                out.push(GridVertex {
                    t,
                    line,
                    orientation: 'h',
                    index: x,
                    x: x as f64 + dx,
                    y: y as f64 + dy,
                });
            }
        }
        for line in 0..lines {
            let x = (line + 1) * w / (lines + 1);
            for y in 0..h {
                let (dy, dx) = flow.at(y, x);
                out.push(GridVertex {
                    t,
                    line,
                    orientation: 'v',
                    index: y,
                    x: x as f64 + dx,
                    y: y as f64 + dy,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_grid_csv<W: Write>(w: W, vertices: &[GridVertex]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "line", "orientation", "index", "x", "y"])?;
    for v in vertices {
        wr.write_record([
            v.t.to_string(),
            v.line.to_string(),
            v.orientation.to_string(),
            v.index.to_string(),
            v.x.to_string(),
            v.y.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
