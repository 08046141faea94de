//! Dataset reorganization for tubelet re-localization: linking per-second
//! annotations into tubelets, splitting by combined label, removing
//! held-out frames from training data, pairing queries with reference
//! windows, and frame-level mAP.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{iou, BBox};

/// One labeled box: `(video, t, person)` plus a single action id.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnnotationRow {
    pub video_id: String,
    pub t: u32,
    pub bbox: BBox,
    pub action_id: u32,
    pub person_id: u32,
}

/// Sorted, duplicate-free set of action ids jointly annotated on one box.
/// Displayed as ids joined by `+`, e.g. `12+80`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(into = "String", try_from = "String"))]
pub struct CombinedLabel(Vec<u32>);

impl CombinedLabel {
    pub fn new<I: IntoIterator<Item = u32>>(ids: I) -> Result<Self> {
        let set: BTreeSet<u32> = ids.into_iter().collect();
        if set.is_empty() {
            return Err(Error::invalid(
                "combined_label",
                "label set must be nonempty",
            ));
        }
        Ok(CombinedLabel(set.into_iter().collect()))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }
}

impl fmt::Display for CombinedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

impl FromStr for CombinedLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ids = s
            .split('+')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Data(format!("bad label id {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        CombinedLabel::new(ids)
    }
}

impl From<CombinedLabel> for String {
    fn from(l: CombinedLabel) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for CombinedLabel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tubelet {
    pub video_id: String,
    pub person_id: u32,
    pub label: CombinedLabel,
    /// `(t, box)` with `t` increasing by exactly one per entry.
    pub frames: Vec<(u32, BBox)>,
}

impl Tubelet {
    pub fn start(&self) -> u32 {
        self.frames[0].0
    }

    pub fn end(&self) -> u32 {
        self.frames[self.frames.len() - 1].0
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid("tubelet", "no frames"));
        }
        for w in self.frames.windows(2) {
            if w[1].0 != w[0].0 + 1 {
                return Err(Error::invalid(
                    "tubelet",
                    "frames must be consecutive seconds",
                ));
            }
        }
        Ok(())
    }

    fn sort_key(&self) -> (&str, u32, u32) {
        (&self.video_id, self.person_id, self.start())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Detection {
    pub video_id: String,
    pub t: u32,
    pub bbox: BBox,
    pub score: f64,
    pub label: CombinedLabel,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundTruth {
    pub video_id: String,
    pub t: u32,
    pub bbox: BBox,
    pub label: CombinedLabel,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairSpec {
    pub query: Tubelet,
    /// Reference video the window is cut from.
    pub reference_video: String,
    /// Inclusive `(t_start, t_end)`.
    pub window: (u32, u32),
    pub targets: Vec<Tubelet>,
}

/// Groups rows by `(video, t, person)`, then chains boxes of the same
/// person over consecutive seconds while the label set stays identical.
/// Output is sorted by `(video, person, start)`.
pub fn link_tubelets(rows: &[AnnotationRow]) -> Result<Vec<Tubelet>> {
    let mut boxes: BTreeMap<(&str, u32, u32), (BBox, BTreeSet<u32>)> = BTreeMap::new();
    for r in rows {
        r.bbox.validate()?;
        let key = (r.video_id.as_str(), r.person_id, r.t);
        match boxes.get_mut(&key) {
            Some((b, labels)) => {
                if *b != r.bbox {
                    return Err(Error::Data(format!(
                        "conflicting boxes for video {} person {} at t={}",
                        r.video_id, r.person_id, r.t
                    )));
                }
                labels.insert(r.action_id);
            }
            None => {
                boxes.insert(key, (r.bbox, BTreeSet::from([r.action_id])));
            }
        }
    }

    let mut out: Vec<Tubelet> = Vec::new();
    for ((video, person, t), (bbox, labels)) in boxes {
        let label = CombinedLabel(labels.into_iter().collect());
        if let Some(last) = out.last_mut() {
            if last.video_id == video
                && last.person_id == person
                && last.end() + 1 == t
                && last.label == label
            {
                last.frames.push((t, bbox));
                continue;
            }
        }
        out.push(Tubelet {
            video_id: video.to_string(),
            person_id: person,
            label,
            frames: alloc::vec![(t, bbox)],
        });
    }
    Ok(out)
}

/// How qualifying labels are distributed over validation and test.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SplitSpec {
    /// Seeded shuffle of the qualifying labels, cut by fraction. Whatever
    /// is not assigned to val/test goes to train.
    Fractions { val: f64, test: f64 },
    /// Label lists used as given.
    Explicit {
        train: Vec<CombinedLabel>,
        val: Vec<CombinedLabel>,
        test: Vec<CombinedLabel>,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Split {
    pub train_labels: Vec<CombinedLabel>,
    pub val_labels: Vec<CombinedLabel>,
    pub test_labels: Vec<CombinedLabel>,
    /// Labels with a single tubelet: no pair can be formed.
    pub dropped_labels: Vec<CombinedLabel>,
    pub train: Vec<Tubelet>,
    pub val: Vec<Tubelet>,
    pub test: Vec<Tubelet>,
    pub seed: u64,
}

/// Partitions tubelets by combined label. Labels with at least
/// `min_samples` tubelets are eligible for val/test; the remaining labels
/// with two or more tubelets train, single-sample labels are dropped.
pub fn split_by_combined_label(
    tubelets: &[Tubelet],
    min_samples: usize,
    spec: &SplitSpec,
    seed: u64,
) -> Result<Split> {
    if min_samples < 2 {
        return Err(Error::invalid("split", "min_samples must be >= 2"));
    }
    let mut counts: BTreeMap<&CombinedLabel, usize> = BTreeMap::new();
    for t in tubelets {
        *counts.entry(&t.label).or_default() += 1;
    }
    let qualifying: Vec<&CombinedLabel> = counts
        .iter()
        .filter(|(_, &n)| n >= min_samples)
        .map(|(l, _)| *l)
        .collect();

    let mut assign: BTreeMap<CombinedLabel, u8> = BTreeMap::new();
    match spec {
        SplitSpec::Fractions { val, test } => {
            let ok = |f: f64| (0.0..=1.0).contains(&f);
            if !ok(*val) || !ok(*test) || val + test > 1.0 {
                return Err(Error::invalid(
                    "split",
                    "fractions must lie in [0,1] and sum to at most 1",
                ));
            }
            let mut order = qualifying.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n = order.len() as f64;
            let n_val = libm::round(val * n) as usize;
            let n_test = (libm::round(test * n) as usize).min(order.len() - n_val);
            for (i, l) in order.into_iter().enumerate() {
                let s = if i < n_val {
                    1
                } else if i < n_val + n_test {
                    2
                } else {
                    0
                };
                assign.insert(l.clone(), s);
            }
        }
        SplitSpec::Explicit { train, val, test } => {
            for (s, list) in [(0u8, train), (1, val), (2, test)] {
                for l in list {
                    if assign.insert(l.clone(), s).is_some_and(|prev| prev != s) {
                        return Err(Error::invalid(
                            "split",
                            format!("label {l} appears in more than one list"),
                        ));
                    }
                }
            }
            // val/test eligibility requires enough samples
            assign.retain(|l, s| *s == 0 || counts.get(l).is_some_and(|&n| n >= min_samples));
            for l in &qualifying {
                assign.entry((*l).clone()).or_insert(0);
            }
        }
    }

    let mut split = Split {
        seed,
        ..Split::default()
    };
    for (l, &n) in &counts {
        match assign.get(*l) {
            Some(0) | None if n >= 2 => split.train_labels.push((*l).clone()),
            Some(1) => split.val_labels.push((*l).clone()),
            Some(2) => split.test_labels.push((*l).clone()),
            _ => split.dropped_labels.push((*l).clone()),
        }
    }
    for t in tubelets {
        let bucket = if split.val_labels.binary_search(&t.label).is_ok() {
            &mut split.val
        } else if split.test_labels.binary_search(&t.label).is_ok() {
            &mut split.test
        } else if split.train_labels.binary_search(&t.label).is_ok() {
            &mut split.train
        } else {
            continue;
        };
        bucket.push(t.clone());
    }
    Ok(split)
}

/// Deletes every `(video, t)` frame covered by a held-out tubelet from the
/// training tubelets, splitting them at the gaps.
pub fn remove_training_overlap(train: &[Tubelet], heldout: &[Tubelet]) -> Vec<Tubelet> {
    let covered: BTreeSet<(&str, u32)> = heldout
        .iter()
        .flat_map(|h| h.frames.iter().map(move |(t, _)| (h.video_id.as_str(), *t)))
        .collect();
    let mut out = Vec::new();
    for tub in train {
        let mut run: Vec<(u32, BBox)> = Vec::new();
        for &(t, b) in &tub.frames {
            if covered.contains(&(tub.video_id.as_str(), t)) {
                flush(tub, &mut run, &mut out);
            } else {
                run.push((t, b));
            }
        }
        flush(tub, &mut run, &mut out);
    }
    out
}

fn flush(proto: &Tubelet, run: &mut Vec<(u32, BBox)>, out: &mut Vec<Tubelet>) {
    if !run.is_empty() {
        out.push(Tubelet {
            video_id: proto.video_id.clone(),
            person_id: proto.person_id,
            label: proto.label.clone(),
            frames: core::mem::take(run),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PairMode {
    /// Seeded random target per query (training).
    Random,
    /// Query `k` pairs with tubelet `k+1` (cyclically) in canonical order.
    #[default]
    Fixed,
}

/// First and last annotated second of each video.
pub fn video_bounds(rows: &[AnnotationRow]) -> BTreeMap<String, (u32, u32)> {
    let mut b: BTreeMap<String, (u32, u32)> = BTreeMap::new();
    for r in rows {
        b.entry(r.video_id.clone())
            .and_modify(|(lo, hi)| {
                *lo = (*lo).min(r.t);
                *hi = (*hi).max(r.t);
            })
            .or_insert((r.t, r.t));
    }
    b
}

/// Pairs every tubelet of one combined label with a reference window
/// around another tubelet of that label. The window pads the target span by
/// `pad` seconds each side, clamped to `bounds` when the video is listed
/// there. Every other same-label tubelet of the reference video lying
/// fully inside the window is a target.
pub fn make_pairs(
    tubelets: &[Tubelet],
    pad: u32,
    seed: u64,
    mode: PairMode,
    bounds: &BTreeMap<String, (u32, u32)>,
) -> Result<Vec<PairSpec>> {
    let Some(first) = tubelets.first() else {
        return Err(Error::invalid("make_pairs", "no tubelets given"));
    };
    if tubelets.iter().any(|t| t.label != first.label) {
        return Err(Error::invalid(
            "make_pairs",
            "tubelets must share one combined label",
        ));
    }
    if tubelets.len() < 2 {
        return Err(Error::invalid(
            "make_pairs",
            format!("label {}: no pair can be formed", first.label),
        ));
    }
    for t in tubelets {
        t.validate()?;
    }
    let mut sorted: Vec<&Tubelet> = tubelets.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let n = sorted.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let j = match mode {
            PairMode::Fixed => (k + 1) % n,
            PairMode::Random => {
                let r = rng.random_range(0..n - 1);
                if r >= k {
                    r + 1
                } else {
                    r
                }
            }
        };
        let target = sorted[j];
        let mut lo = target.start().saturating_sub(pad);
        let mut hi = target.end().saturating_add(pad);
        if let Some(&(vlo, vhi)) = bounds.get(&target.video_id) {
            lo = lo.max(vlo);
            hi = hi.min(vhi);
        }
        let targets = sorted
            .iter()
            .enumerate()
            .filter(|&(i, t)| {
                i != k && t.video_id == target.video_id && t.start() >= lo && t.end() <= hi
            })
            .map(|(_, t)| (*t).clone())
            .collect();
        out.push(PairSpec {
            query: sorted[k].clone(),
            reference_video: target.video_id.clone(),
            window: (lo, hi),
            targets,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MapReport {
    /// Keyed by the combined label's display form.
    pub per_label_ap: BTreeMap<String, f64>,
    #[cfg_attr(feature = "serde", serde(rename = "mAP"))]
    pub map: f64,
}

/// All-point interpolated average precision from a ranked list of
/// true/false positive flags.
pub fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut rec = Vec::with_capacity(hits.len() + 2);
    let mut prec = Vec::with_capacity(hits.len() + 2);
    rec.push(0.0);
    prec.push(0.0);
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        rec.push(tp as f64 / num_gt as f64);
        prec.push(tp as f64 / (i + 1) as f64);
    }
    rec.push(1.0);
    prec.push(0.0);
    for i in (0..prec.len() - 1).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..rec.len() {
        if rec[i] != rec[i - 1] {
            ap += (rec[i] - rec[i - 1]) * prec[i];
        }
    }
    ap
}

/// Frame-level mAP at `iou_threshold`. Detections are ranked per label by
/// score (stable), each claims the unmatched ground truth with the highest
/// IoU at or above the threshold in the same `(video, t)`. The mean runs
/// over labels with ground truth; labels with only detections report 0.
pub fn frame_map(
    detections: &[Detection],
    ground_truth: &[GroundTruth],
    iou_threshold: f64,
) -> Result<MapReport> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::invalid(
            "frame_map",
            "iou_threshold must lie in (0,1)",
        ));
    }
    if let Some(d) = detections.iter().find(|d| !d.score.is_finite()) {
        return Err(Error::NonFinite {
            op: "frame_map",
            what: format!("score of detection in {} at t={}", d.video_id, d.t),
        });
    }
    let mut gt_by_label: BTreeMap<&CombinedLabel, BTreeMap<(&str, u32), Vec<BBox>>> =
        BTreeMap::new();
    for g in ground_truth {
        gt_by_label
            .entry(&g.label)
            .or_default()
            .entry((g.video_id.as_str(), g.t))
            .or_default()
            .push(g.bbox);
    }
    let mut det_by_label: BTreeMap<&CombinedLabel, Vec<&Detection>> = BTreeMap::new();
    for d in detections {
        det_by_label.entry(&d.label).or_default().push(d);
    }
    let labels: BTreeSet<&CombinedLabel> = gt_by_label
        .keys()
        .chain(det_by_label.keys())
        .copied()
        .collect();

    let mut per_label_ap = BTreeMap::new();
    let (mut sum, mut count) = (0.0, 0usize);
    for label in labels {
        let empty = BTreeMap::new();
        let gts = gt_by_label.get(label).unwrap_or(&empty);
        let num_gt: usize = gts.values().map(Vec::len).sum();
        let mut dets = det_by_label.get(label).cloned().unwrap_or_default();
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut used: BTreeMap<(&str, u32), Vec<bool>> = gts
            .iter()
            .map(|(k, v)| (*k, alloc::vec![false; v.len()]))
            .collect();
        let hits: Vec<bool> = dets
            .iter()
            .map(|d| {
                let key = (d.video_id.as_str(), d.t);
                let Some(cands) = gts.get(&key) else {
                    return false;
                };
                let taken = used.get_mut(&key).expect("same keys");
                let mut best: Option<(usize, f64)> = None;
                for (i, g) in cands.iter().enumerate() {
                    let v = iou(&d.bbox, g);
                    if !taken[i] && v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((i, v));
                    }
                }
                match best {
                    Some((i, _)) => {
                        taken[i] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect();
        let ap = average_precision(&hits, num_gt);
        if num_gt > 0 {
            sum += ap;
            count += 1;
        }
        per_label_ap.insert(label.to_string(), ap);
    }
    Ok(MapReport {
        per_label_ap,
        map: if count == 0 { 0.0 } else { sum / count as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn row(video: &str, t: u32, person: u32, action: u32) -> AnnotationRow {
        AnnotationRow {
            video_id: video.into(),
            t,
            bbox: BBox::new(0.1, 0.1, 0.5, 0.5),
            action_id: action,
            person_id: person,
        }
    }

    fn tub(video: &str, person: u32, label: &[u32], start: u32, len: u32) -> Tubelet {
        Tubelet {
            video_id: video.into(),
            person_id: person,
            label: CombinedLabel::new(label.iter().copied()).unwrap(),
            frames: (start..start + len)
                .map(|t| (t, BBox::new(0.1, 0.1, 0.5, 0.5)))
                .collect(),
        }
    }

    #[test]
    fn linking_rules() {
        let same = [
            row("v", 0, 1, 1),
            row("v", 0, 1, 2),
            row("v", 1, 1, 2),
            row("v", 1, 1, 1),
        ];
        let t = link_tubelets(&same).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].len(), 2);
        assert_eq!(t[0].label.to_string(), "1+2");

        let changed = [row("v", 0, 1, 1), row("v", 0, 1, 2), row("v", 1, 1, 1)];
        let t = link_tubelets(&changed).unwrap();
        assert_eq!(t.iter().map(Tubelet::len).collect::<Vec<_>>(), vec![1, 1]);

        let gap = [row("v", 0, 1, 1), row("v", 2, 1, 1)];
        assert_eq!(link_tubelets(&gap).unwrap().len(), 2);
    }

    #[test]
    fn conflicting_boxes_rejected() {
        let mut b = row("v", 0, 1, 2);
        b.bbox = BBox::new(0.2, 0.1, 0.5, 0.5);
        assert!(matches!(
            link_tubelets(&[row("v", 0, 1, 1), b]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn label_text_round_trip() {
        let l: CombinedLabel = "80+12+12".parse().unwrap();
        assert_eq!(l.ids(), &[12, 80]);
        assert_eq!(l.to_string(), "12+80");
        assert!("".parse::<CombinedLabel>().is_err());
    }

    #[test]
    fn overlap_removal() {
        let train = [tub("v", 1, &[1], 0, 5)];
        assert_eq!(
            remove_training_overlap(&train, &[tub("v", 2, &[9], 10, 3)]),
            train.to_vec()
        );
        assert!(remove_training_overlap(&train, &[tub("v", 2, &[9], 0, 5)]).is_empty());
        let parts = remove_training_overlap(&train, &[tub("v", 2, &[9], 2, 1)]);
        assert_eq!(
            parts.iter().map(Tubelet::len).collect::<Vec<_>>(),
            vec![2, 2]
        );
        assert_eq!(parts[1].start(), 3);
        // other videos are untouched
        assert_eq!(
            remove_training_overlap(&train, &[tub("w", 2, &[9], 0, 5)]).len(),
            1
        );
    }

    #[test]
    fn pairing() {
        let a = tub("a", 1, &[3], 0, 2);
        let b = tub("b", 1, &[3], 4, 3);
        let bounds = BTreeMap::new();
        let p = make_pairs(&[a.clone(), b.clone()], 1, 0, PairMode::Fixed, &bounds).unwrap();
        assert_eq!(p[0].query, a);
        assert_eq!(p[0].targets, vec![b.clone()]);
        assert_eq!(p[0].window, (3, 7));
        assert_eq!(p[1].targets, vec![a.clone()]);
        assert_eq!(p[1].window, (0, 2));

        let r = make_pairs(&[a.clone(), b.clone()], 1, 5, PairMode::Random, &bounds).unwrap();
        assert_eq!(r[0].targets, vec![b.clone()]);

        let clamp = BTreeMap::from([("b".to_string(), (4u32, 6u32))]);
        assert_eq!(
            make_pairs(&[a.clone(), b.clone()], 1, 0, PairMode::Fixed, &clamp).unwrap()[0].window,
            (4, 6)
        );

        let b2 = tub("b", 2, &[3], 5, 2);
        let p = make_pairs(
            &[a.clone(), b.clone(), b2.clone()],
            1,
            0,
            PairMode::Fixed,
            &bounds,
        )
        .unwrap();
        assert_eq!(p[0].targets, vec![b, b2]);

        assert!(make_pairs(&[a], 1, 0, PairMode::Fixed, &bounds).is_err());
    }

    #[test]
    fn split_rules() {
        let mut ts = Vec::new();
        for i in 0..4 {
            ts.push(tub("v", i, &[1], 0, 1));
        }
        ts.push(tub("v", 9, &[2], 0, 1));
        ts.push(tub("v", 10, &[2], 0, 1));
        ts.push(tub("v", 11, &[3], 0, 1));
        let spec = SplitSpec::Fractions {
            val: 1.0,
            test: 0.0,
        };
        let s = split_by_combined_label(&ts, 3, &spec, 7).unwrap();
        assert_eq!(s.val_labels, vec![CombinedLabel::new([1]).unwrap()]);
        assert_eq!(s.train_labels, vec![CombinedLabel::new([2]).unwrap()]);
        assert_eq!(s.dropped_labels, vec![CombinedLabel::new([3]).unwrap()]);
        assert_eq!(s.val.len(), 4);
        assert_eq!(s.train.len(), 2);
        assert_eq!(s, split_by_combined_label(&ts, 3, &spec, 7).unwrap());

        let l1 = CombinedLabel::new([1]).unwrap();
        let l2 = CombinedLabel::new([2]).unwrap();
        let overlap = SplitSpec::Explicit {
            train: vec![],
            val: vec![l1.clone()],
            test: vec![l1.clone()],
        };
        assert!(split_by_combined_label(&ts, 3, &overlap, 0).is_err());
        // label 2 lacks samples for test
        let explicit = SplitSpec::Explicit {
            train: vec![],
            val: vec![],
            test: vec![l1.clone(), l2.clone()],
        };
        let s = split_by_combined_label(&ts, 3, &explicit, 0).unwrap();
        assert_eq!(s.test_labels, vec![l1]);
        assert_eq!(s.train_labels, vec![l2]);
        assert!(split_by_combined_label(&ts, 1, &explicit, 0).is_err());
    }

    fn det(score: f64, b: BBox) -> Detection {
        Detection {
            video_id: "v".into(),
            t: 0,
            bbox: b,
            score,
            label: CombinedLabel::new([1]).unwrap(),
        }
    }

    #[test]
    fn map_hand_cases() {
        let g = BBox::new(0.0, 0.0, 0.5, 0.5);
        let gt = [GroundTruth {
            video_id: "v".into(),
            t: 0,
            bbox: g,
            label: CombinedLabel::new([1]).unwrap(),
        }];
        assert_eq!(frame_map(&[det(0.9, g)], &gt, 0.5).unwrap().map, 1.0);
        // IoU 0.4: 0.5x0.2 intersection over 0.25
        let low = BBox::new(0.0, 0.0, 0.5, 0.2);
        assert!((iou(&low, &g) - 0.4).abs() < 1e-12);
        assert_eq!(frame_map(&[det(0.9, low)], &gt, 0.5).unwrap().map, 0.0);
        let far = BBox::new(0.6, 0.6, 0.9, 0.9);
        let r = frame_map(&[det(0.9, far), det(0.3, g)], &gt, 0.5).unwrap();
        assert_eq!(r.map, 0.5);
        assert_eq!(r.per_label_ap["1"], 0.5);
        assert!(frame_map(&[], &gt, 1.0).is_err());
    }

    #[test]
    fn label_without_ground_truth_scores_zero() {
        let mut d = det(0.5, BBox::new(0.0, 0.0, 0.5, 0.5));
        d.label = CombinedLabel::new([4]).unwrap();
        let r = frame_map(&[d], &[], 0.5).unwrap();
        assert_eq!(r.per_label_ap["4"], 0.0);
        assert_eq!(r.map, 0.0);
    }
}
