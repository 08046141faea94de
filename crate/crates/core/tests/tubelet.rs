use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpcell_core::tubelet::{
    frame_map, link_tubelets, make_pairs, remove_training_overlap, split_by_combined_label,
    AnnotationRow, CombinedLabel, Detection, GroundTruth, PairMode, SplitSpec, Tubelet,
};
use warpcell_core::{iou, BBox};

/// Random annotations: each (video, t, person) gets one box carrying a
/// nonempty subset of three actions.
fn random_rows(rng: &mut ChaCha8Rng) -> Vec<AnnotationRow> {
    let mut rows = Vec::new();
    for video in ["a", "b"] {
        for person in 0..3u32 {
            for t in 0..12u32 {
                if rng.random_bool(0.25) {
                    continue;
                }
                let y = rng.random_range(0.0..0.5);
                let bbox = BBox::new(y, 0.1, y + 0.3, 0.6);
                let mut any = false;
                for action in 1..=3u32 {
                    if rng.random_bool(0.4) || (action == 3 && !any) {
                        any = true;
                        rows.push(AnnotationRow {
                            video_id: video.into(),
                            t,
                            bbox,
                            action_id: action,
                            person_id: person,
                        });
                    }
                }
            }
        }
    }
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linking_partitions_boxes(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng);
        let tubelets = link_tubelets(&rows).unwrap();
        let boxes: BTreeSet<(String, u32, u32)> =
            rows.iter().map(|r| (r.video_id.clone(), r.t, r.person_id)).collect();
        let mut seen = BTreeSet::new();
        for tb in &tubelets {
            tb.validate().unwrap();
            for &(t, _) in &tb.frames {
                prop_assert!(seen.insert((tb.video_id.clone(), t, tb.person_id)), "box in two tubelets");
            }
        }
        prop_assert_eq!(seen, boxes);
    }

    #[test]
    fn linking_ignores_row_order(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = random_rows(&mut rng);
        let want = link_tubelets(&rows).unwrap();
        rows.shuffle(&mut rng);
        prop_assert_eq!(link_tubelets(&rows).unwrap(), want);
    }

    #[test]
    fn split_is_a_disjoint_cover(seed in 0u64..100_000, min_samples in 2usize..5, split_seed in 0u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tubelets = link_tubelets(&random_rows(&mut rng)).unwrap();
        let spec = SplitSpec::Fractions { val: 0.3, test: 0.3 };
        let split = split_by_combined_label(&tubelets, min_samples, &spec, split_seed).unwrap();
        prop_assert_eq!(&split, &split_by_combined_label(&tubelets, min_samples, &spec, split_seed).unwrap());

        let sets: Vec<BTreeSet<&CombinedLabel>> = [&split.train_labels, &split.val_labels, &split.test_labels]
            .iter()
            .map(|l| l.iter().collect())
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                prop_assert!(sets[i].is_disjoint(&sets[j]));
            }
        }
        let mut counts: BTreeMap<&CombinedLabel, usize> = BTreeMap::new();
        for t in &tubelets {
            *counts.entry(&t.label).or_default() += 1;
        }
        for (label, n) in counts {
            let placed = sets.iter().filter(|s| s.contains(label)).count();
            if n >= min_samples {
                prop_assert_eq!(placed, 1, "qualifying label {} not placed once", label);
            }
            if n < min_samples {
                prop_assert!(!sets[1].contains(label) && !sets[2].contains(label));
            }
        }
        for (tubes, labels) in [(&split.train, &sets[0]), (&split.val, &sets[1]), (&split.test, &sets[2])] {
            prop_assert!(tubes.iter().all(|t| labels.contains(&t.label)));
        }
    }

    #[test]
    fn training_frames_never_overlap_heldout(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tubelets = link_tubelets(&random_rows(&mut rng)).unwrap();
        let split = split_by_combined_label(&tubelets, 2, &SplitSpec::Fractions { val: 0.3, test: 0.3 }, 1).unwrap();
        let heldout: Vec<Tubelet> = split.val.iter().chain(&split.test).cloned().collect();
        let train = remove_training_overlap(&split.train, &heldout);
        let blocked: BTreeSet<(&str, u32)> =
            heldout.iter().flat_map(|t| t.frames.iter().map(move |f| (t.video_id.as_str(), f.0))).collect();
        let before: usize = split.train.iter().map(|t| t.len()).sum();
        let mut kept = 0;
        for t in &train {
            t.validate().unwrap();
            kept += t.len();
            prop_assert!(t.frames.iter().all(|f| !blocked.contains(&(t.video_id.as_str(), f.0))));
        }
        let removed: usize = split
            .train
            .iter()
            .map(|t| t.frames.iter().filter(|f| blocked.contains(&(t.video_id.as_str(), f.0))).count())
            .sum();
        prop_assert_eq!(kept + removed, before);
    }

    #[test]
    fn pair_targets_lie_in_window(seed in 0u64..100_000, pad in 0u32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tubelets = link_tubelets(&random_rows(&mut rng)).unwrap();
        let mut groups: BTreeMap<CombinedLabel, Vec<Tubelet>> = BTreeMap::new();
        for t in tubelets {
            groups.entry(t.label.clone()).or_default().push(t);
        }
        for group in groups.values().filter(|g| g.len() >= 2) {
            for mode in [PairMode::Fixed, PairMode::Random] {
                let pairs = make_pairs(group, pad, seed, mode, &BTreeMap::new()).unwrap();
                prop_assert_eq!(pairs.len(), group.len());
                for p in &pairs {
                    prop_assert!(!p.targets.is_empty());
                    for t in &p.targets {
                        prop_assert!(t.label == p.query.label && t.video_id == p.reference_video);
                        prop_assert!(t.start() >= p.window.0 && t.end() <= p.window.1);
                        prop_assert!(t != &p.query);
                    }
                }
            }
        }
    }
}

// ---- frame mAP against a brute-force evaluator ----

struct Instance {
    dets: Vec<Detection>,
    gts: Vec<GroundTruth>,
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    // Coarse coordinates so that IoU and score ties occur.
    let y = rng.random_range(0..4) as f64 * 0.1;
    let x = rng.random_range(0..4) as f64 * 0.1;
    let s = rng.random_range(2..5) as f64 * 0.1;
    BBox::new(y, x, y + s, x + s)
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let labels: Vec<CombinedLabel> = vec![
        "1".parse().unwrap(),
        "1+2".parse().unwrap(),
        "3".parse().unwrap(),
    ];
    let total = rng.random_range(1..=12);
    let n_gt = rng.random_range(0..=total);
    let key = |rng: &mut ChaCha8Rng| {
        (
            ["v0", "v1"][rng.random_range(0..2)].to_string(),
            rng.random_range(0..2u32),
            labels[rng.random_range(0..3)].clone(),
        )
    };
    let gts = (0..n_gt)
        .map(|_| {
            let (video_id, t, label) = key(rng);
            GroundTruth {
                video_id,
                t,
                bbox: random_box(rng),
                label,
            }
        })
        .collect();
    let dets = (n_gt..total)
        .map(|_| {
            let (video_id, t, label) = key(rng);
            Detection {
                video_id,
                t,
                bbox: random_box(rng),
                score: rng.random_range(0..5) as f64 * 0.2,
                label,
            }
        })
        .collect();
    Instance { dets, gts }
}

/// Flags each detection of `label` in rank order as hit or miss.
fn brute_hits(inst: &Instance, label: &CombinedLabel, thr: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..inst.dets.len())
        .filter(|&i| &inst.dets[i].label == label)
        .collect();
    // Selection sort by score, earlier index first on ties.
    for i in 0..order.len() {
        let mut best = i;
        for j in i + 1..order.len() {
            if inst.dets[order[j]].score > inst.dets[order[best]].score {
                best = j;
            }
        }
        let v = order.remove(best);
        order.insert(i, v);
    }
    let mut used = vec![false; inst.gts.len()];
    order
        .iter()
        .map(|&di| {
            let d = &inst.dets[di];
            let mut pick: Option<(usize, f64)> = None;
            for (gi, g) in inst.gts.iter().enumerate() {
                if used[gi] || &g.label != label || g.video_id != d.video_id || g.t != d.t {
                    continue;
                }
                let o = iou(&d.bbox, &g.bbox);
                if o >= thr && pick.is_none_or(|(_, b)| o > b) {
                    pick = Some((gi, o));
                }
            }
            if let Some((gi, _)) = pick {
                used[gi] = true;
            }
            pick.is_some()
        })
        .collect()
}

/// Sum over true positives of the best precision at any rank at or after it.
fn brute_ap(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let precision: Vec<f64> = (0..hits.len())
        .map(|k| hits[..=k].iter().filter(|&&h| h).count() as f64 / (k + 1) as f64)
        .collect();
    (0..hits.len())
        .filter(|&k| hits[k])
        .map(|k| precision[k..].iter().cloned().fold(0.0, f64::max) / num_gt as f64)
        .sum()
}

fn brute_map(inst: &Instance, thr: f64) -> (BTreeMap<String, f64>, f64) {
    let labels: BTreeSet<CombinedLabel> = inst
        .dets
        .iter()
        .map(|d| d.label.clone())
        .chain(inst.gts.iter().map(|g| g.label.clone()))
        .collect();
    let mut per = BTreeMap::new();
    let mut with_gt = Vec::new();
    for label in labels {
        let num_gt = inst.gts.iter().filter(|g| g.label == label).count();
        let ap = brute_ap(&brute_hits(inst, &label, thr), num_gt);
        if num_gt > 0 {
            with_gt.push(ap);
        }
        per.insert(label.to_string(), ap);
    }
    let map = if with_gt.is_empty() {
        0.0
    } else {
        with_gt.iter().sum::<f64>() / with_gt.len() as f64
    };
    (per, map)
}

#[test]
fn frame_map_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(314);
    for case in 0..200 {
        let inst = random_instance(&mut rng);
        let thr = [0.3, 0.5, 0.7][case % 3];
        let got = frame_map(&inst.dets, &inst.gts, thr).unwrap();
        let (per, map) = brute_map(&inst, thr);
        assert_eq!(
            got.per_label_ap.keys().collect::<Vec<_>>(),
            per.keys().collect::<Vec<_>>(),
            "case {case}"
        );
        for (k, v) in &per {
            assert!(
                (got.per_label_ap[k] - v).abs() <= 1e-10,
                "case {case} label {k}: {} vs {v}",
                got.per_label_ap[k]
            );
        }
        assert!((got.map - map).abs() <= 1e-10, "case {case}");
        assert!((0.0..=1.0).contains(&got.map));
    }
}

#[test]
fn dropping_last_false_positive_never_hurts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    for _ in 0..300 {
        let inst = random_instance(&mut rng);
        let before = frame_map(&inst.dets, &inst.gts, 0.5).unwrap();
        let labels: BTreeSet<CombinedLabel> = inst.dets.iter().map(|d| d.label.clone()).collect();
        for label in labels {
            let hits = brute_hits(&inst, &label, 0.5);
            let Some(last_fp) = hits.iter().rposition(|h| !h) else {
                continue;
            };
            // Recover which detection sits at that rank.
            let mut ranked: Vec<usize> = (0..inst.dets.len())
                .filter(|&i| inst.dets[i].label == label)
                .collect();
            ranked.sort_by(|&a, &b| inst.dets[b].score.total_cmp(&inst.dets[a].score));
            if last_fp != ranked.len() - 1 {
                continue;
            }
            let mut dets = inst.dets.clone();
            dets.remove(ranked[last_fp]);
            let after = frame_map(&dets, &inst.gts, 0.5).unwrap();
            let key = label.to_string();
            let old = before.per_label_ap[&key];
            let new = after.per_label_ap.get(&key).copied().unwrap_or(0.0);
            assert!(new >= old - 1e-12, "{key}: {old} -> {new}");
        }
    }
}
