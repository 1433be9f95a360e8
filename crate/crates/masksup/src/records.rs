//! Training logs, metric reports and robustness curves on disk.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use masksup_core::metrics::RobustnessPoint;
use masksup_core::trainer::StepRecord;
use masksup_core::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of `train_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step { epoch: usize, step: usize, seg: f64, context: f64, tasksim: f64, total: f64 },
    Epoch { epoch: usize, train_total: f64, val_miou: Option<f64>, seconds: f64 },
}

impl From<&StepRecord> for LogRecord {
    fn from(r: &StepRecord) -> Self {
        LogRecord::Step {
            epoch: r.epoch,
            step: r.step,
            seg: r.loss.seg,
            context: r.loss.context,
            tasksim: r.loss.tasksim,
            total: r.loss.total,
        }
    }
}

pub struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(Error::io(path))?;
        Ok(Self { path: path.to_owned(), out: BufWriter::new(file) })
    }

    pub fn write(&mut self, record: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("log record serializes");
        writeln!(self.out, "{line}").map_err(Error::io(&self.path))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(Error::io(&self.path))
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { path: path.to_owned(), reason: format!("line {}: {e}", i + 1) })?;
        out.push(record);
    }
    Ok(out)
}

/// [`MetricsReport`] as a flat key-value file. Undefined class IoUs are
/// written as `nan`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricsFile {
    miou: f64,
    pixel_accuracy: f64,
    params: usize,
    num_images: usize,
    per_class_iou: Vec<f64>,
}

pub fn metrics_to_string(report: &MetricsReport) -> String {
    let file = MetricsFile {
        miou: report.miou,
        pixel_accuracy: report.pixel_accuracy,
        params: report.params,
        num_images: report.num_images,
        per_class_iou: report.per_class_iou.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
    };
    toml::to_string(&file).expect("metrics serialize")
}

pub fn metrics_from_str(text: &str, path: &Path) -> Result<MetricsReport> {
    let f: MetricsFile =
        toml::from_str(text).map_err(|e| Error::Parse { path: path.to_owned(), reason: e.to_string() })?;
    Ok(MetricsReport {
        per_class_iou: f.per_class_iou.into_iter().map(|v| if v.is_nan() { None } else { Some(v) }).collect(),
        miou: f.miou,
        pixel_accuracy: f.pixel_accuracy,
        params: f.params,
        num_images: f.num_images,
    })
}

pub fn write_metrics(report: &MetricsReport, path: &Path) -> Result<()> {
    fs::write(path, metrics_to_string(report)).map_err(Error::io(path))
}

pub fn read_metrics(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    metrics_from_str(&text, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub coverage: f64,
    pub miou: f64,
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse { path: path.to_owned(), reason: e.to_string() }
}

/// Writes a `coverage,miou` CSV with a header row.
pub fn write_curve(points: &[RobustnessPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    for p in points {
        w.serialize(CurveRow { coverage: p.coverage, miou: p.report.miou }).map_err(csv_error(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    r.deserialize().map(|row| row.map_err(csv_error(path))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip_with_undefined_class() {
        let r = MetricsReport {
            per_class_iou: vec![Some(0.5), None, Some(1.0)],
            miou: 0.75,
            pixel_accuracy: 0.9,
            params: 1234,
            num_images: 7,
        };
        let text = metrics_to_string(&r);
        assert!(text.contains("miou = 0.75"));
        assert!(text.contains("params = 1234"));
        assert_eq!(metrics_from_str(&text, Path::new("m")).unwrap(), r);
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let records = vec![
            LogRecord::Step { epoch: 0, step: 0, seg: 1.0, context: 0.5, tasksim: 0.25, total: 1.75 },
            LogRecord::Epoch { epoch: 0, train_total: 1.75, val_miou: None, seconds: 0.1 },
        ];
        let mut w = LogWriter::create(&path).unwrap();
        for r in &records {
            w.write(r).unwrap();
        }
        w.flush().unwrap();
        assert_eq!(read_log(&path).unwrap(), records);
        let first = fs::read_to_string(&path).unwrap();
        assert!(first.starts_with(r#"{"kind":"step","epoch":0,"step":0,"seg":1.0"#));
    }
}
