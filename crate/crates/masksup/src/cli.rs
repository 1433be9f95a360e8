//! `masksup` command-line interface.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
//! during training.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use masksup_core::data::DatasetSplit;
use masksup_core::maskgen::{apply_mask, generate_mask};
use masksup_core::metrics::{evaluate, robustness_curve};

use crate::checkpoint::load_checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::dataset::write_image_mask_dir;
use crate::error::{Error, Result};
use crate::imageio::{save_mask, save_rgb};
use crate::plots::{grouped_bars, line_plot, robustness_plot};
use crate::records::{read_curve, read_log, write_curve, write_metrics, LogRecord};
use crate::run::{load_data, read_summary, train_run, LOG_FILE};

#[derive(Debug, Parser)]
#[command(name = "masksup", version, about = "Masked supervised segmentation training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Binary,
    Multiclass,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model in a new run directory.
    Train {
        /// Flat TOML config; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        regime: Option<String>,
        #[arg(long)]
        output_root: Option<PathBuf>,
        /// Any config key, as `key=value`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluate a checkpoint and write its metrics report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Defaults to `eval_<split>.toml` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset keys overriding the checkpoint's config, as `key=value`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Write sample masks and masked images.
    PreviewMasks {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "high")]
        regime: String,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Config keys for the dataset and mask generator, as `key=value`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// mIoU of a checkpoint under masked corruption at several coverages.
    Robustness {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.7")]
        coverages: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Defaults to the checkpoint's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Loss curves, grouped mIoU bars and robustness overlays from run directories.
    Plots {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a synthetic dataset as an image/mask directory.
    SynthData {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        ambiguity: f64,
        #[arg(long, default_value_t = 6)]
        num_classes: usize,
        #[arg(long, default_value_t = 3.0)]
        imbalance: f64,
    },
}

fn parse_sets(sets: &[String]) -> Result<Vec<(String, String)>> {
    sets.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                .ok_or_else(|| Error::BadValue { key: s.clone(), reason: "expected KEY=VALUE".into() })
        })
        .collect()
}

fn split_samples(data: &DatasetSplit, split: SplitName) -> Vec<masksup_core::data::Sample> {
    match split {
        SplitName::Train => data.train.clone(),
        SplitName::Val => data.val.clone(),
        SplitName::Test => data.test.clone(),
        SplitName::All => data.all().cloned().collect(),
    }
}

fn split_label(split: SplitName) -> &'static str {
    match split {
        SplitName::Train => "train",
        SplitName::Val => "val",
        SplitName::Test => "test",
        SplitName::All => "all",
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_owned)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

fn cmd_train(
    config: Option<&Path>,
    flags: Vec<(&str, Option<String>)>,
    sets: &[String],
) -> Result<()> {
    let mut overrides = parse_sets(sets)?;
    overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_owned(), v))));
    let cfg = match config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None => RunConfig::with_overrides("", &overrides)?,
    };
    let (dir, summary) = train_run(&cfg)?;
    println!("run directory: {}", dir.display());
    println!(
        "best epoch {} | {} mIoU {:.4} | params {}",
        summary.best_epoch, summary.eval_split, summary.test_miou, summary.params
    );
    Ok(())
}

fn cmd_eval(checkpoint: &Path, split: SplitName, out: Option<PathBuf>, sets: &[String]) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let cfg = RunConfig::with_overrides(&ck.config.to_toml(), &parse_sets(sets)?)?;
    let data = load_data(&cfg.data, cfg.train.ignore_label)?;
    let report = evaluate(&ck.net, &split_samples(&data, split), cfg.train.ignore_label)?;
    for (k, iou) in report.per_class_iou.iter().enumerate() {
        match iou {
            Some(v) => println!("class {k}: IoU {v:.4}"),
            None => println!("class {k}: undefined"),
        }
    }
    println!("mIoU {:.4} | pixel accuracy {:.4} | params {}", report.miou, report.pixel_accuracy, report.params);
    let out = out.unwrap_or_else(|| parent_dir(checkpoint).join(format!("eval_{}.toml", split_label(split))));
    write_metrics(&report, &out)
}

fn cmd_preview(out_dir: &Path, regime: &str, count: usize, seed: u64, sets: &[String]) -> Result<()> {
    let mut overrides = parse_sets(sets)?;
    overrides.push(("regime".into(), regime.to_owned()));
    let cfg = RunConfig::with_overrides("", &overrides)?;
    let data = load_data(&cfg.data, cfg.train.ignore_label)?;
    create_dir(out_dir)?;
    let samples: Vec<_> = data.all().take(count).collect();
    for (i, s) in samples.iter().enumerate() {
        let (h, w, _) = s.image.dims();
        let mask = generate_mask(h, w, &cfg.train.regime, &cfg.train.mask, seed.wrapping_add(i as u64))?;
        save_mask(&mask, &out_dir.join(format!("mask-{i:03}.png")))?;
        save_rgb(&apply_mask(&s.image, &mask)?, &out_dir.join(format!("masked-{i:03}.png")))?;
        println!("mask-{i:03}.png masked fraction {:.3}", mask.masked_fraction());
    }
    Ok(())
}

fn cmd_robustness(
    checkpoint: &Path,
    coverages: &[f64],
    seed: u64,
    split: SplitName,
    out_dir: Option<PathBuf>,
    sets: &[String],
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let cfg = RunConfig::with_overrides(&ck.config.to_toml(), &parse_sets(sets)?)?;
    let data = load_data(&cfg.data, cfg.train.ignore_label)?;
    let samples = split_samples(&data, split);
    let curve = robustness_curve(&ck.net, &samples, coverages, &cfg.train.mask, seed, cfg.train.ignore_label)?;
    let out_dir = out_dir.unwrap_or_else(|| parent_dir(checkpoint));
    create_dir(&out_dir)?;
    let csv = out_dir.join("robustness.csv");
    write_curve(&curve, &csv)?;
    let rows = read_curve(&csv)?;
    robustness_plot(&out_dir.join("robustness.svg"), &[(cfg.train.mode.name().to_owned(), rows)])?;
    for p in &curve {
        println!("coverage {:.2}: mIoU {:.4}", p.coverage, p.report.miou);
    }
    Ok(())
}

fn cmd_plots(runs: &[PathBuf], out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    // dataset -> mode -> test mIoU of each seed
    let mut groups: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut curves = Vec::new();
    for run in runs {
        let summary = read_summary(run)?;
        let name = run.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned());
        let log = read_log(&run.join(LOG_FILE))?;
        let mut series: Vec<(String, Vec<(f64, f64)>)> =
            ["seg", "context", "tasksim", "total"].iter().map(|n| ((*n).to_owned(), Vec::new())).collect();
        for r in &log {
            if let LogRecord::Step { step, seg, context, tasksim, total, .. } = *r {
                for (s, v) in series.iter_mut().zip([seg, context, tasksim, total]) {
                    s.1.push((step as f64, v));
                }
            }
        }
        line_plot(&out_dir.join(format!("loss-{name}.svg")), &format!("losses: {name}"), "step", "loss", &series)?;
        groups.entry(summary.dataset.clone()).or_default().entry(summary.mode.clone()).or_default().push(summary.test_miou);
        let csv = run.join("robustness.csv");
        if csv.is_file() {
            curves.push((format!("{} (seed {})", summary.mode, summary.seed), read_curve(&csv)?));
        }
    }
    let order = ["baseline", "cb", "masksup"];
    for (dataset, modes) in &groups {
        let mut bars: Vec<(String, f64)> =
            modes.iter().map(|(m, v)| (m.clone(), v.iter().sum::<f64>() / v.len() as f64)).collect();
        bars.sort_by_key(|(m, _)| order.iter().position(|o| o == m).unwrap_or(order.len()));
        grouped_bars(
            &out_dir.join(format!("miou-{dataset}.svg")),
            &format!("test mIoU: {dataset}"),
            &[(dataset.clone(), bars)],
        )?;
    }
    if !curves.is_empty() {
        robustness_plot(&out_dir.join("robustness.svg"), &curves)?;
    }
    println!("wrote figures for {} runs to {}", runs.len(), out_dir.display());
    Ok(())
}

fn cmd_synth(kind: SynthKind, out: &Path, source: DataSource) -> Result<()> {
    let data = load_data(&source, None)?;
    write_image_mask_dir(&data, out)?;
    println!(
        "{} dataset: {}/{}/{} samples, class frequencies {:?}",
        match kind {
            SynthKind::Binary => "binary",
            SynthKind::Multiclass => "multiclass",
        },
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.class_frequencies
    );
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, mode, seed, epochs, batch_size, learning_rate, regime, output_root, sets } => {
            let flags = vec![
                ("mode", mode.map(|m| format!("{m:?}"))),
                ("seed", seed.map(|v| v.to_string())),
                ("epochs", epochs.map(|v| v.to_string())),
                ("batch_size", batch_size.map(|v| v.to_string())),
                ("learning_rate", learning_rate.map(|v| format!("{v:?}"))),
                ("regime", regime.map(|r| format!("{r:?}"))),
                ("output_root", output_root.map(|p| format!("{:?}", p.to_string_lossy()))),
            ];
            cmd_train(config.as_deref(), flags, &sets)
        }
        Command::Eval { checkpoint, split, out, sets } => cmd_eval(&checkpoint, split, out, &sets),
        Command::PreviewMasks { out_dir, regime, count, seed, sets } => {
            cmd_preview(&out_dir, &format!("{regime:?}"), count, seed, &sets)
        }
        Command::Robustness { checkpoint, coverages, seed, split, out_dir, sets } => {
            cmd_robustness(&checkpoint, &coverages, seed, split, out_dir, &sets)
        }
        Command::Plots { runs, out_dir } => cmd_plots(&runs, &out_dir),
        Command::SynthData { kind, out, n, size, seed, ambiguity, num_classes, imbalance } => {
            let source = match kind {
                SynthKind::Binary => DataSource::Binary { n, size, ambiguity, seed },
                SynthKind::Multiclass => DataSource::Multiclass { n, size, num_classes, imbalance, seed },
            };
            cmd_synth(kind, &out, source)
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sets_parse() {
        let got = parse_sets(&["a=1".into(), "b = x".into()]).unwrap();
        assert_eq!(got, vec![("a".into(), "1".into()), ("b".into(), "x".into())]);
        assert!(parse_sets(&["novalue".into()]).is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["masksup", "frobnicate"]), 2);
        assert_eq!(run(["masksup", "eval"]), 2);
    }
}
