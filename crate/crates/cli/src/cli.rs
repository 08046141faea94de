//! Command-line definitions and their implementations.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use warpcell_core::bench::{evaluate, train, TrainConfig};
use warpcell_core::gradsuite::{corrupted_entry, registry, run_suite};
use warpcell_core::tubelet::{
    frame_map, link_tubelets, remove_training_overlap, split_by_combined_label, video_bounds,
    PairMode, Split, SplitSpec, Tubelet,
};

use crate::pipeline::pairs_by_label;
use crate::store::{
    generate_dataset, load_checkpoint, load_dataset, read_json, save_checkpoint, save_dataset,
    write_json, Checkpoint, DatasetConfig,
};
use crate::tables::{ground_truth_from_annotations, parse_annotations, parse_detections};
use crate::viz::{warped_grid, write_grid_csv};

#[derive(Debug, Parser)]
#[command(
    name = "warpcell",
    version,
    about = "Warp LSTM benchmark and tubelet tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Finite-difference check of every differentiable op; exits 1 on failure.
    Gradcheck {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Adds an op with a deliberately wrong backward pass.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Generate a synthetic moving-object dataset.
    SynthGen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a localization model and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Print the loss every N iterations (0 = silent).
        #[arg(long, default_value_t = 50)]
        log_every: usize,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Tubelet linking, splitting, pairing and frame mAP.
    #[command(subcommand)]
    Tubelet(TubeletCommand),
    /// Write warped grid lines of a checkpoint's flow as CSV.
    WarpViz {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sequence of the dataset to visualize.
        #[arg(long, default_value_t = 0)]
        seq: usize,
        /// Grid lines per axis.
        #[arg(long, default_value_t = 9)]
        lines: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum TubeletCommand {
    /// Annotation CSV → tubelets JSON.
    Link(InOut),
    /// Tubelets JSON → split JSON (train overlap with val/test removed).
    Split {
        #[command(flatten)]
        io: InOut,
        #[arg(long, default_value_t = 2)]
        min_samples: usize,
        #[arg(long, default_value_t = 0.15)]
        val: f64,
        #[arg(long, default_value_t = 0.15)]
        test: f64,
        /// JSON split specification; overrides --val/--test.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tubelets or split JSON → query/reference pairs JSON.
    Pairs {
        #[command(flatten)]
        io: InOut,
        /// Which part of a split file to pair.
        #[arg(long, value_enum, default_value_t = Subset::Train)]
        subset: Subset,
        #[arg(long, default_value_t = 0)]
        pad: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        random: bool,
        /// Annotation CSV whose per-video time range clamps the windows.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Detection CSV + annotation CSV → frame mAP report JSON.
    Map {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
}

#[derive(Debug, Args)]
pub struct InOut {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Subset {
    Train,
    Val,
    Test,
}

/// Runs a command; `Ok(false)` means it completed but reports failure.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gradcheck {
            seed,
            report,
            inject_fault,
        } => {
            let mut entries = registry(seed)?;
            if inject_fault {
                entries.push(corrupted_entry(seed));
            }
            let rep = run_suite(&entries, seed)?;
            if let Some(path) = report {
                write_json(&path, &rep)?;
            }
            let stdout = io::stdout();
            serde_json::to_writer_pretty(stdout.lock(), &rep)?;
            println!();
            Ok(rep.passed)
        }
        Command::SynthGen { config, out } => {
            let cfg: DatasetConfig = optional_json(config.as_deref())?;
            let seqs = generate_dataset(&cfg)?;
            save_dataset(&out, &cfg, &seqs)?;
            Ok(true)
        }
        Command::Train {
            config,
            out,
            log_every,
        } => {
            let cfg: TrainConfig = optional_json(config.as_deref())?;
            let result = train(&cfg, &mut |it, loss| {
                if log_every > 0 && it % log_every == 0 {
                    eprintln!("iteration {it}: loss {loss:.6}");
                }
            })?;
            save_checkpoint(
                &out,
                &Checkpoint {
                    config: cfg,
                    model: result.model,
                    losses: result.losses,
                },
            )?;
            Ok(true)
        }
        Command::Eval { ckpt, data, report } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let seqs = load_dataset(&data)?;
            let rep = evaluate(&ckpt.model, &seqs, ckpt.config.synth.box_size)?;
            write_json(&report, &rep)?;
            Ok(true)
        }
        Command::WarpViz {
            ckpt,
            data,
            out,
            seq,
            lines,
        } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let seqs = load_dataset(&data)?;
            let Some(s) = seqs.get(seq) else {
                bail!(
                    "dataset has {} sequences, asked for index {seq}",
                    seqs.len()
                );
            };
            let verts = warped_grid(&ckpt.model, s, lines)?;
            write_grid_csv(create(&out)?, &verts)?;
            Ok(true)
        }
        Command::Tubelet(cmd) => run_tubelet(cmd).map(|()| true),
    }
}

fn run_tubelet(cmd: TubeletCommand) -> Result<()> {
    match cmd {
        TubeletCommand::Link(io) => {
            let rows = parse_annotations(open(&io.input)?)?;
            write_json(&io.out, &link_tubelets(&rows)?)
        }
        TubeletCommand::Split {
            io,
            min_samples,
            val,
            test,
            spec,
            seed,
        } => {
            let tubelets: Vec<Tubelet> = read_json(&io.input)?;
            let spec = match spec {
                Some(p) => read_json(&p)?,
                None => SplitSpec::Fractions { val, test },
            };
            let mut split = split_by_combined_label(&tubelets, min_samples, &spec, seed)?;
            let heldout: Vec<Tubelet> = split.val.iter().chain(&split.test).cloned().collect();
            split.train = remove_training_overlap(&split.train, &heldout);
            write_json(&io.out, &split)
        }
        TubeletCommand::Pairs {
            io,
            subset,
            pad,
            seed,
            random,
            annotations,
        } => {
            let tubelets = read_tubelets_or_split(&io.input, subset)?;
            let bounds = match annotations {
                Some(p) => video_bounds(&parse_annotations(open(&p)?)?),
                None => Default::default(),
            };
            let mode = if random {
                PairMode::Random
            } else {
                PairMode::Fixed
            };
            write_json(
                &io.out,
                &pairs_by_label(&tubelets, pad, seed, mode, &bounds)?,
            )
        }
        TubeletCommand::Map { io, gt, iou } => {
            let dets = parse_detections(open(&io.input)?)?;
            let gts = ground_truth_from_annotations(&parse_annotations(open(&gt)?)?)?;
            write_json(&io.out, &frame_map(&dets, &gts, iou)?)
        }
    }
}

fn read_tubelets_or_split(path: &Path, subset: Subset) -> Result<Vec<Tubelet>> {
    let value: serde_json::Value = read_json(path)?;
    if value.is_array() {
        return Ok(serde_json::from_value(value)?);
    }
    let split: Split = serde_json::from_value(value)
        .with_context(|| format!("{}: not tubelets or a split", path.display()))?;
    Ok(match subset {
        Subset::Train => split.train,
        Subset::Val => split.val,
        Subset::Test => split.test,
    })
}

fn optional_json<T: Default + for<'de> serde::Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn create(path: &Path) -> Result<impl Write> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}
