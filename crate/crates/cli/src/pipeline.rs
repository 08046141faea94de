//! Tubelet preparation pipeline used by the `tubelet` subcommands.

use std::collections::BTreeMap;

use anyhow::Result;
use warpcell_core::tubelet::{
    link_tubelets, make_pairs, remove_training_overlap, split_by_combined_label, video_bounds,
    AnnotationRow, CombinedLabel, PairMode, PairSpec, Split, SplitSpec, Tubelet,
};

/// Pairs within every label group of at least two tubelets; smaller groups
/// are skipped.
pub fn pairs_by_label(
    tubelets: &[Tubelet],
    pad: u32,
    seed: u64,
    mode: PairMode,
    bounds: &BTreeMap<String, (u32, u32)>,
) -> Result<Vec<PairSpec>> {
    let mut groups: BTreeMap<&CombinedLabel, Vec<Tubelet>> = BTreeMap::new();
    for t in tubelets {
        groups.entry(&t.label).or_default().push(t.clone());
    }
    let mut out = Vec::new();
    for group in groups.values().filter(|g| g.len() >= 2) {
        out.extend(make_pairs(group, pad, seed, mode, bounds)?);
    }
    Ok(out)
}

pub struct PipelineOutput {
    pub tubelets: Vec<Tubelet>,
    pub split: Split,
    pub pairs: Vec<PairSpec>,
}

/// link → split → training-overlap removal → pairing of the training set.
pub fn run_pipeline(
    rows: &[AnnotationRow],
    min_samples: usize,
    spec: &SplitSpec,
    pad: u32,
    seed: u64,
) -> Result<PipelineOutput> {
    let tubelets = link_tubelets(rows)?;
    let mut split = split_by_combined_label(&tubelets, min_samples, spec, seed)?;
    let heldout: Vec<Tubelet> = split.val.iter().chain(&split.test).cloned().collect();
    split.train = remove_training_overlap(&split.train, &heldout);
    let pairs = pairs_by_label(
        &split.train,
        pad,
        seed,
        PairMode::Fixed,
        &video_bounds(rows),
    )?;
    Ok(PipelineOutput {
        tubelets,
        split,
        pairs,
    })
}
