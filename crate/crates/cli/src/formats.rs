//! `.ten` tensor files and the control-point text format.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use warpcell_core::spline::{ControlPointSet, Displacement, Point};
use warpcell_core::Tensor;

/// Writes `dims: d0 d1 ... dk\n` followed by the data as little-endian f64.
pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    let dims: Vec<String> = t.dims().iter().map(|d| d.to_string()).collect();
    writeln!(w, "dims: {}", dims.join(" "))?;
    let mut blob = Vec::with_capacity(8 * t.len());
    for v in t.data() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&blob)?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: R) -> Result<Tensor> {
    let mut r = BufReader::new(r);
    let mut header = Vec::new();
    r.read_until(b'\n', &mut header)?;
    let header = std::str::from_utf8(&header).context("tensor header is not UTF-8")?;
    let Some(rest) = header.trim_end_matches('\n').strip_prefix("dims:") else {
        bail!("tensor header must start with `dims:`");
    };
    let dims = rest
        .split_whitespace()
        .map(|d| {
            d.parse::<usize>()
                .with_context(|| format!("bad dimension {d:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    ensure!(!dims.is_empty(), "tensor header lists no dimensions");
    let n: usize = dims.iter().product();
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    ensure!(
        blob.len() == 8 * n,
        "tensor blob has {} bytes, dims {:?} need {}",
        blob.len(),
        dims,
        8 * n
    );
    let data = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Tensor::new(dims, data)?)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_tensor(std::io::BufWriter::new(f), t)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_tensor(f).with_context(|| format!("reading {}", path.display()))
}

/// One line per point: `x y dx dy interior|boundary`.
pub fn write_control_points<W: Write>(mut w: W, cps: &ControlPointSet) -> Result<()> {
    for (p, d) in cps.interior().iter().zip(cps.displacements()) {
        writeln!(w, "{} {} {} {} interior", p.x, p.y, d.dx, d.dy)?;
    }
    for p in cps.boundary() {
        writeln!(w, "{} {} 0 0 boundary", p.x, p.y)?;
    }
    Ok(())
}

pub fn read_control_points<R: Read>(r: R) -> Result<ControlPointSet> {
    let (mut interior, mut boundary, mut disp) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        ensure!(f.len() == 5, "line {}: expected `x y dx dy kind`", i + 1);
        let num = |s: &str| {
            s.parse::<f64>()
                .with_context(|| format!("line {}: bad number {s:?}", i + 1))
        };
        let (x, y, dx, dy) = (num(f[0])?, num(f[1])?, num(f[2])?, num(f[3])?);
        match f[4] {
            "interior" => {
                interior.push(Point::new(x, y));
                disp.push(Displacement::new(dx, dy));
            }
            "boundary" => {
                ensure!(
                    dx == 0.0 && dy == 0.0,
                    "line {}: boundary points cannot move",
                    i + 1
                );
                boundary.push(Point::new(x, y));
            }
            k => bail!("line {}: unknown point kind {k:?}", i + 1),
        }
    }
    Ok(ControlPointSet::new(interior, boundary, disp)?)
}
