//! CSV annotation and detection tables.

use std::io::{Read, Write};

use anyhow::{anyhow, bail, Context, Result};
use warpcell_core::tubelet::{AnnotationRow, CombinedLabel, Detection, GroundTruth};
use warpcell_core::BBox;

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, line: u64) -> Result<&'a str> {
    rec.get(i)
        .ok_or_else(|| anyhow!("line {line}: missing field {}", i + 1))
}

fn parse<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    i: usize,
    line: u64,
    what: &str,
) -> Result<T> {
    let s = field(rec, i, line)?;
    s.parse()
        .map_err(|_| anyhow!("line {line}: bad {what} {s:?}"))
}

fn coord(rec: &csv::StringRecord, i: usize, line: u64, what: &str) -> Result<f64> {
    let v: f64 = parse(rec, i, line, what)?;
    if !(0.0..=1.0).contains(&v) {
        bail!("line {line}: {what} {v} outside [0, 1]");
    }
    Ok(v)
}

/// Parses `video_id,t,x1,y1,x2,y2,action_id,person_id` rows with normalized
/// coordinates. A leading header line starting with `video_id` is skipped.
pub fn parse_annotations<R: Read>(r: R) -> Result<Vec<AnnotationRow>> {
    let mut out = Vec::new();
    for rec in reader(r).records() {
        let rec = rec.context("malformed CSV")?;
        let line = rec.position().map_or(0, |p| p.line());
        if line == 1 && rec.get(0) == Some("video_id") {
            continue;
        }
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 8 {
            bail!("line {line}: expected 8 fields, found {}", rec.len());
        }
        let x1 = coord(&rec, 2, line, "x1")?;
        let y1 = coord(&rec, 3, line, "y1")?;
        let x2 = coord(&rec, 4, line, "x2")?;
        let y2 = coord(&rec, 5, line, "y2")?;
        if x1 > x2 || y1 > y2 {
            bail!("line {line}: box corners inverted (x1={x1}, x2={x2}, y1={y1}, y2={y2})");
        }
        out.push(AnnotationRow {
            video_id: field(&rec, 0, line)?.to_string(),
            t: parse(&rec, 1, line, "timestamp")?,
            bbox: BBox::new(y1, x1, y2, x2),
            action_id: parse(&rec, 6, line, "action id")?,
            person_id: parse(&rec, 7, line, "person id")?,
        });
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(w: W, rows: &[AnnotationRow]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for r in rows {
        let b = r.bbox;
        wr.write_record([
            r.video_id.clone(),
            r.t.to_string(),
            b.xmin.to_string(),
            b.ymin.to_string(),
            b.xmax.to_string(),
            b.ymax.to_string(),
            r.action_id.to_string(),
            r.person_id.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Ground truth for frame mAP: one entry per annotated box, labeled with
/// the box's combined label.
pub fn ground_truth_from_annotations(rows: &[AnnotationRow]) -> Result<Vec<GroundTruth>> {
    let tubelets = warpcell_core::tubelet::link_tubelets(rows)?;
    Ok(tubelets
        .iter()
        .flat_map(|t| {
            t.frames.iter().map(|&(time, bbox)| GroundTruth {
                video_id: t.video_id.clone(),
                t: time,
                bbox,
                label: t.label.clone(),
            })
        })
        .collect())
}

/// Parses `video_id,t,ymin,xmin,ymax,xmax,score,label_hash` rows, where the
/// label is the combined label written as ids joined by `+`.
pub fn parse_detections<R: Read>(r: R) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for rec in reader(r).records() {
        let rec = rec.context("malformed CSV")?;
        let line = rec.position().map_or(0, |p| p.line());
        if line == 1 && rec.get(0) == Some("video_id") {
            continue;
        }
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 8 {
            bail!("line {line}: expected 8 fields, found {}", rec.len());
        }
        let bbox = BBox::new(
            coord(&rec, 2, line, "ymin")?,
            coord(&rec, 3, line, "xmin")?,
            coord(&rec, 4, line, "ymax")?,
            coord(&rec, 5, line, "xmax")?,
        );
        bbox.validate().with_context(|| format!("line {line}"))?;
        let score: f64 = parse(&rec, 6, line, "score")?;
        if !score.is_finite() {
            bail!("line {line}: score must be finite");
        }
        let label: CombinedLabel = field(&rec, 7, line)?
            .parse()
            .with_context(|| format!("line {line}: bad label"))?;
        out.push(Detection {
            video_id: field(&rec, 0, line)?.to_string(),
            t: parse(&rec, 1, line, "timestamp")?,
            bbox,
            score,
            label,
        });
    }
    Ok(out)
}

pub fn write_detections<W: Write>(w: W, dets: &[Detection]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for d in dets {
        let b = d.bbox;
        wr.write_record([
            d.video_id.clone(),
            d.t.to_string(),
            b.ymin.to_string(),
            b.xmin.to_string(),
            b.ymax.to_string(),
            b.xmax.to_string(),
            d.score.to_string(),
            d.label.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file() {
        assert!(parse_annotations(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn one_row() {
        let rows = parse_annotations(&b"vid_1,902,0.1,0.2,0.5,0.9,12,3\n"[..]).unwrap();
        assert_eq!(
            rows,
            vec![AnnotationRow {
                video_id: "vid_1".into(),
                t: 902,
                bbox: BBox::new(0.2, 0.1, 0.9, 0.5),
                action_id: 12,
                person_id: 3,
            }]
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_annotations(&b"v,1,0.1,0.2,0.5,0.9,12,3\nv,2,0.6,0.2,0.5,0.9,12,3\n"[..])
            .unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = parse_annotations(&b"v,1,0.1,0.2,1.5,0.9,12,3\n"[..]).unwrap_err();
        assert!(e.to_string().contains("outside"), "{e}");
        let e = parse_annotations(&b"v,1,0.1,0.2,0.5\n"[..]).unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
    }

    #[test]
    fn detections_round_trip() {
        let d = vec![Detection {
            video_id: "v".into(),
            t: 4,
            bbox: BBox::new(0.1, 0.2, 0.3, 0.4),
            score: 0.75,
            label: "80+12".parse().unwrap(),
        }];
        let mut buf = Vec::new();
        write_detections(&mut buf, &d).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "v,4,0.1,0.2,0.3,0.4,0.75,12+80\n"
        );
        assert_eq!(parse_detections(&buf[..]).unwrap(), d);
    }
}
