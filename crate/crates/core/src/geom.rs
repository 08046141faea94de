use crate::error::{Error, Result};

/// Axis-aligned box `(ymin, xmin, ymax, xmax)`. Normalized boxes live in
/// `[0, 1]`; [`iou`] works in any consistent unit.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BBox {
    pub ymin: f64,
    pub xmin: f64,
    pub ymax: f64,
    pub xmax: f64,
}

impl BBox {
    pub const fn new(ymin: f64, xmin: f64, ymax: f64, xmax: f64) -> Self {
        BBox {
            ymin,
            xmin,
            ymax,
            xmax,
        }
    }

    /// Checked constructor for normalized boxes.
    pub fn normalized(ymin: f64, xmin: f64, ymax: f64, xmax: f64) -> Result<Self> {
        let b = BBox::new(ymin, xmin, ymax, xmax);
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok =
            |lo: f64, hi: f64| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi;
        if !ok(self.ymin, self.ymax) || !ok(self.xmin, self.xmax) {
            return Err(Error::invalid(
                "box",
                "coordinates must satisfy 0 <= min <= max <= 1",
            ));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.ymax - self.ymin).max(0.0) * (self.xmax - self.xmin).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.ymin + self.ymax) / 2.0, (self.xmin + self.xmax) / 2.0)
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let inter = ih * iw;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
