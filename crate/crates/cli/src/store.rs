//! Checkpoint and dataset directories.
//!
//! A checkpoint holds `config.json` (the training configuration),
//! `losses.json`, and one `.ten` file per parameter listed in
//! `manifest.txt` as `name file` lines. A dataset holds `dataset.json`
//! with per-sequence ground truth and `seqNNN/tNN.ten` frames.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use warpcell_core::bench::{generate_set, Model, Sequence, SynthConfig, TrainConfig, STREAM_EVAL};
use warpcell_core::{BBox, ParamSet};

use crate::formats::{load_tensor, save_tensor};

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub losses: Vec<f64>,
}

fn file_name(param: &str) -> String {
    format!("{}.ten", param.replace('/', "."))
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("config.json"), &ckpt.config)?;
    write_json(&dir.join("losses.json"), &ckpt.losses)?;
    let mut manifest = String::new();
    for (name, t) in ckpt.model.named_tensors() {
        let file = file_name(&name);
        save_tensor(&dir.join(&file), &t)?;
        manifest.push_str(&format!("{name} {file}\n"));
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Rebuilds the model skeleton from the stored configuration and loads the
/// parameters named in the manifest, which must match it exactly.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let config: TrainConfig = read_json(&dir.join("config.json"))?;
    let losses: Vec<f64> = read_json(&dir.join("losses.json"))?;
    let mut model = config.init_model()?;
    let manifest = fs::read_to_string(dir.join("manifest.txt")).context("reading manifest.txt")?;
    let expected: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut tensors = Vec::new();
    for (i, line) in manifest
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
    {
        let Some((name, file)) = line.split_once(' ') else {
            bail!("manifest line {}: expected `name file`", i + 1);
        };
        ensure!(
            expected.get(i).is_some_and(|e| e == name),
            "manifest line {}: parameter {name:?} does not match the configured model",
            i + 1
        );
        tensors.push(load_tensor(&dir.join(file.trim()))?);
    }
    ensure!(
        tensors.len() == expected.len(),
        "manifest lists {} parameters, model has {}",
        tensors.len(),
        expected.len()
    );
    model.load_tensors(&tensors)?;
    Ok(Checkpoint {
        config,
        model,
        losses,
    })
}

/// Input of `synth-gen`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub synth: SynthConfig,
    pub count: usize,
    /// Seed stream; the default matches the evaluation stream of a training
    /// run with the same seed.
    pub stream: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            synth: SynthConfig::default(),
            count: 32,
            stream: STREAM_EVAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SequenceMeta {
    dir: String,
    frames: usize,
    centers: Vec<(f64, f64)>,
    boxes: Vec<BBox>,
    occluded: Vec<bool>,
    displacements: Vec<(f64, f64)>,
    speed: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    config: DatasetConfig,
    sequences: Vec<SequenceMeta>,
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Sequence>> {
    Ok(generate_set(&cfg.synth, cfg.stream, cfg.count)?)
}

pub fn save_dataset(dir: &Path, cfg: &DatasetConfig, seqs: &[Sequence]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut sequences = Vec::with_capacity(seqs.len());
    for (i, s) in seqs.iter().enumerate() {
        let name = format!("seq{i:03}");
        let sub = dir.join(&name);
        fs::create_dir_all(&sub)?;
        for (t, f) in s.frames.iter().enumerate() {
            save_tensor(&sub.join(format!("t{t:02}.ten")), f)?;
        }
        sequences.push(SequenceMeta {
            dir: name,
            frames: s.frames.len(),
            centers: s.centers.clone(),
            boxes: s.boxes.clone(),
            occluded: s.occluded.clone(),
            displacements: s.displacements.clone(),
            speed: s.speed,
        });
    }
    write_json(
        &dir.join("dataset.json"),
        &DatasetMeta {
            config: cfg.clone(),
            sequences,
        },
    )
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sequence>> {
    let meta: DatasetMeta = read_json(&dir.join("dataset.json"))?;
    meta.sequences
        .into_iter()
        .map(|m| {
            let frames = (0..m.frames)
                .map(|t| load_tensor(&dir.join(&m.dir).join(format!("t{t:02}.ten"))))
                .collect::<Result<Vec<_>>>()?;
            ensure!(
                [
                    m.centers.len(),
                    m.boxes.len(),
                    m.occluded.len(),
                    m.displacements.len()
                ]
                .iter()
                .all(|&n| n == frames.len()),
                "{}: ground truth length does not match {} frames",
                m.dir,
                frames.len()
            );
            Ok(Sequence {
                frames,
                centers: m.centers,
                boxes: m.boxes,
                occluded: m.occluded,
                displacements: m.displacements,
                speed: m.speed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = TrainConfig::default();
        let model = config.init_model().unwrap();
        let ckpt = Checkpoint {
            config,
            model: model.clone(),
            losses: vec![1.5, 0.25],
        };
        save_checkpoint(dir.path(), &ckpt).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.losses, vec![1.5, 0.25]);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = DatasetConfig {
            count: 2,
            ..Default::default()
        };
        cfg.synth.length = 3;
        cfg.synth.occlusion = None;
        let seqs = generate_dataset(&cfg).unwrap();
        save_dataset(dir.path(), &cfg, &seqs).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), seqs);
    }
}
