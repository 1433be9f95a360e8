//! Run directories: data loading, training with logs and checkpoints, and
//! the final summary.
//!
//! A run directory holds `config.toml`, `train_log.jsonl`, `best.ckpt`,
//! `last.ckpt`, `checkpoints/step-*.ckpt` (when enabled),
//! `test_metrics.toml` and `summary.toml`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use masksup_core::data::{synth_binary_shapes, synth_multiclass_scenes, DatasetSplit};
use masksup_core::metrics::evaluate;
use masksup_core::trainer::{train_with, EpochRecord, StepRecord, TrainObserver};
use masksup_core::UNet;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::dataset::load_image_mask_dir;
use crate::error::{Error, Result};
use crate::records::{write_metrics, LogRecord, LogWriter};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TEST_METRICS_FILE: &str = "test_metrics.toml";
pub const SUMMARY_FILE: &str = "summary.toml";

pub fn load_data(source: &DataSource, ignore_label: Option<u8>) -> Result<DatasetSplit> {
    Ok(match source {
        DataSource::Binary { n, size, ambiguity, seed } => synth_binary_shapes(*n, *size, *ambiguity, *seed)?,
        DataSource::Multiclass { n, size, num_classes, imbalance, seed } => {
            synth_multiclass_scenes(*n, *size, *num_classes, *imbalance, *seed)?
        }
        DataSource::Dir { root, num_classes } => load_image_mask_dir(root, *num_classes, ignore_label)?,
    })
}

/// Result of a finished run, also written to `summary.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub dataset: String,
    pub seed: u64,
    pub config_hash: String,
    pub epochs: usize,
    pub steps: usize,
    pub best_epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_val_miou: Option<f64>,
    pub best_checkpoint: PathBuf,
    pub epoch_seconds: Vec<f64>,
    /// Split the final metrics were computed on (`test`, or `val` if test is empty).
    pub eval_split: String,
    pub test_miou: f64,
    pub params: usize,
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    toml::from_str(&text).map_err(|e| Error::Parse { path, reason: e.to_string() })
}

/// Creates `<root>/<mode>-<config hash>-<unix seconds>`, adding a counter
/// suffix if that name is taken.
pub fn create_run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let root = &cfg.output_root;
    fs::create_dir_all(root).map_err(Error::io(root))?;
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let base = format!("{}-{}-{secs}", cfg.train.mode.name(), cfg.hash());
    for i in 0.. {
        let name = if i == 0 { base.clone() } else { format!("{base}-{i}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::Io { path: dir, source: e }),
        }
    }
    unreachable!()
}

struct RunObserver<'a> {
    dir: &'a Path,
    cfg: &'a RunConfig,
    log: LogWriter,
    started: Instant,
    last_step: usize,
    epoch_seconds: Vec<f64>,
    error: Option<Error>,
}

impl RunObserver<'_> {
    fn keep(&mut self, r: Result<()>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }
}

impl TrainObserver for RunObserver<'_> {
    fn on_step(&mut self, record: &StepRecord) {
        self.last_step = record.step + 1;
        let r = self.log.write(&record.into());
        self.keep(r);
    }

    fn on_epoch(&mut self, record: &EpochRecord, net: &UNet<f32>, is_best: bool) {
        let seconds = self.started.elapsed().as_secs_f64();
        self.started = Instant::now();
        self.epoch_seconds.push(seconds);
        let line = LogRecord::Epoch {
            epoch: record.epoch,
            train_total: record.train_loss.total,
            val_miou: record.val.as_ref().map(|v| v.miou),
            seconds,
        };
        let r = self.log.write(&line).and_then(|()| self.log.flush());
        self.keep(r);
        if is_best {
            let r = save_checkpoint(net, self.cfg, self.last_step, &self.dir.join(BEST_CHECKPOINT));
            self.keep(r);
        }
    }

    fn on_checkpoint(&mut self, step: usize, net: &UNet<f32>) {
        let dir = self.dir.join("checkpoints");
        let r = fs::create_dir_all(&dir)
            .map_err(Error::io(&dir))
            .and_then(|()| save_checkpoint(net, self.cfg, step, &dir.join(format!("step-{step:07}.ckpt"))));
        self.keep(r);
    }
}

/// Trains in a fresh run directory and returns its path and summary.
///
/// On a numeric failure the log written so far is kept and the error is
/// returned.
pub fn train_run(cfg: &RunConfig) -> Result<(PathBuf, Summary)> {
    let data = load_data(&cfg.data, cfg.train.ignore_label)?;
    let dir = create_run_dir(cfg)?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_toml()).map_err(Error::io(&config_path))?;

    let mut obs = RunObserver {
        dir: &dir,
        cfg,
        log: LogWriter::create(&dir.join(LOG_FILE))?,
        started: Instant::now(),
        last_step: 0,
        epoch_seconds: Vec::new(),
        error: None,
    };
    let outcome = train_with(&cfg.train, &data, &mut obs);
    obs.log.flush()?;
    let outcome = outcome?;
    if let Some(e) = obs.error {
        return Err(e);
    }
    save_checkpoint(&outcome.last, cfg, obs.last_step, &dir.join(LAST_CHECKPOINT))?;

    let (eval_split, samples) = if data.test.is_empty() { ("val", &data.val) } else { ("test", &data.test) };
    let metrics = evaluate(&outcome.best, samples, cfg.train.ignore_label)?;
    write_metrics(&metrics, &dir.join(TEST_METRICS_FILE))?;

    let summary = Summary {
        mode: cfg.train.mode.name().to_owned(),
        dataset: cfg.data.name(),
        seed: cfg.train.seed,
        config_hash: cfg.hash(),
        epochs: cfg.train.epochs,
        steps: outcome.report.steps.len(),
        best_epoch: outcome.report.best_epoch,
        best_val_miou: outcome.report.best_val_miou,
        best_checkpoint: dir.join(BEST_CHECKPOINT),
        epoch_seconds: obs.epoch_seconds,
        eval_split: eval_split.to_owned(),
        test_miou: metrics.miou,
        params: metrics.params,
    };
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, toml::to_string(&summary).expect("summary serializes")).map_err(Error::io(&path))?;
    Ok((dir, summary))
}
