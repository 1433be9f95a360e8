//! Flat TOML run configuration.
//!
//! Every [`TrainConfig`] field has a key, plus the dataset source and the
//! output root. Unset keys take their defaults; command-line overrides are
//! applied on top of the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use masksup_core::maskgen::{CoverageBand, MaskGenConfig, MaskRegime, RegimeKind};
use masksup_core::trainer::{Mode, TrainConfig};
use masksup_core::{LossWeights, UNetConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Where samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Binary { n: usize, size: usize, ambiguity: f64, seed: u64 },
    Multiclass { n: usize, size: usize, num_classes: usize, imbalance: f64, seed: u64 },
    Dir { root: PathBuf, num_classes: usize },
}

impl DataSource {
    pub fn num_classes(&self) -> usize {
        match self {
            DataSource::Binary { .. } => 2,
            DataSource::Multiclass { num_classes, .. } | DataSource::Dir { num_classes, .. } => *num_classes,
        }
    }

    pub fn name(&self) -> String {
        match self {
            DataSource::Binary { ambiguity, .. } => format!("binary-a{ambiguity}"),
            DataSource::Multiclass { num_classes, imbalance, .. } => format!("multiclass-k{num_classes}-i{imbalance}"),
            DataSource::Dir { root, .. } => {
                root.file_name().map_or_else(|| "dir".to_owned(), |n| n.to_string_lossy().into_owned())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    pub output_root: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Flat {
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    regime: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    convs_per_block: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    norm_groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ignore_label: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    context_masked_pixels_only: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_strokes_min: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_strokes_max: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_stroke_width_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_stroke_width_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_holes_min: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_holes_max: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_hole_radius_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_hole_radius_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_max_attempts: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ambiguity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    imbalance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_root: Option<PathBuf>,
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "mode",
    "alpha1",
    "alpha2",
    "alpha3",
    "regime",
    "band_low",
    "band_high",
    "epochs",
    "batch_size",
    "learning_rate",
    "seed",
    "checkpoint_every",
    "base_width",
    "depth",
    "convs_per_block",
    "norm_groups",
    "ignore_label",
    "context_masked_pixels_only",
    "mask_strokes_min",
    "mask_strokes_max",
    "mask_stroke_width_min",
    "mask_stroke_width_max",
    "mask_holes_min",
    "mask_holes_max",
    "mask_hole_radius_min",
    "mask_hole_radius_max",
    "mask_max_attempts",
    "dataset",
    "data_dir",
    "data_n",
    "data_size",
    "data_seed",
    "ambiguity",
    "num_classes",
    "imbalance",
    "output_root",
];

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::BadValue { key: key.to_owned(), reason: reason.into() }
}

/// Parses an override value as a TOML scalar, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_table(toml::Table::new()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text` and applies `overrides` (key, raw value) on top.
    pub fn with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Parse { path: "config".into(), reason: e.to_string() })?;
        for (k, v) in overrides {
            table.insert(k.clone(), parse_value(v));
        }
        Self::from_table(table)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::with_overrides(&text, overrides).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse { path: path.to_owned(), reason },
            other => other,
        })
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        if let Some(key) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::UnknownKey(key.clone()));
        }
        for (key, value) in &table {
            toml::Value::Table(toml::Table::from_iter([(key.clone(), value.clone())]))
                .try_into::<Flat>()
                .map_err(|e| bad(key, e.message().to_owned()))?;
        }
        let f: Flat = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse { path: "config".into(), reason: e.to_string() })?;
        Self::from_flat(f)
    }

    fn from_flat(f: Flat) -> Result<Self> {
        let mode_name = f.mode.as_deref().unwrap_or("masksup");
        let mode = Mode::parse(mode_name).ok_or_else(|| bad("mode", format!("unknown mode `{mode_name}`")))?;
        let dw = mode.default_weights();
        let weights = LossWeights {
            alpha1: f.alpha1.unwrap_or(dw.alpha1),
            alpha2: f.alpha2.unwrap_or(dw.alpha2),
            alpha3: f.alpha3.unwrap_or(dw.alpha3),
        };

        let base = match f.regime.as_deref().unwrap_or("high") {
            "high" => MaskRegime::high(),
            "low" => MaskRegime::low(),
            other => return Err(bad("regime", format!("expected `high` or `low`, got `{other}`"))),
        };
        let band = CoverageBand::new(f.band_low.unwrap_or(base.band.low), f.band_high.unwrap_or(base.band.high))
            .map_err(|e| bad("band_low", e.to_string()))?;
        let regime = MaskRegime::new(base.kind, band).map_err(|e| bad("regime", e.to_string()))?;

        let dm = MaskGenConfig::default();
        let mask = MaskGenConfig {
            num_strokes_range: (
                f.mask_strokes_min.unwrap_or(dm.num_strokes_range.0),
                f.mask_strokes_max.unwrap_or(dm.num_strokes_range.1),
            ),
            stroke_width_range: (
                f.mask_stroke_width_min.unwrap_or(dm.stroke_width_range.0),
                f.mask_stroke_width_max.unwrap_or(dm.stroke_width_range.1),
            ),
            num_holes_range: (
                f.mask_holes_min.unwrap_or(dm.num_holes_range.0),
                f.mask_holes_max.unwrap_or(dm.num_holes_range.1),
            ),
            hole_radius_range: (
                f.mask_hole_radius_min.unwrap_or(dm.hole_radius_range.0),
                f.mask_hole_radius_max.unwrap_or(dm.hole_radius_range.1),
            ),
            max_resample_attempts: f.mask_max_attempts.unwrap_or(dm.max_resample_attempts),
        };

        let data = match f.dataset.as_deref().unwrap_or("binary") {
            "binary" => DataSource::Binary {
                n: f.data_n.unwrap_or(200),
                size: f.data_size.unwrap_or(64),
                ambiguity: f.ambiguity.unwrap_or(0.3),
                seed: f.data_seed.unwrap_or(0),
            },
            "multiclass" => DataSource::Multiclass {
                n: f.data_n.unwrap_or(300),
                size: f.data_size.unwrap_or(64),
                num_classes: f.num_classes.unwrap_or(6),
                imbalance: f.imbalance.unwrap_or(3.0),
                seed: f.data_seed.unwrap_or(0),
            },
            "dir" => DataSource::Dir {
                root: f.data_dir.clone().ok_or_else(|| bad("data_dir", "required when dataset = \"dir\""))?,
                num_classes: f.num_classes.ok_or_else(|| bad("num_classes", "required when dataset = \"dir\""))?,
            },
            other => return Err(bad("dataset", format!("expected binary, multiclass or dir, got `{other}`"))),
        };

        let db = UNetConfig::default();
        let backbone = UNetConfig {
            in_channels: 3,
            num_classes: data.num_classes(),
            base_width: f.base_width.unwrap_or(db.base_width),
            depth: f.depth.unwrap_or(db.depth),
            convs_per_block: f.convs_per_block.unwrap_or(db.convs_per_block),
            norm_groups: f.norm_groups.unwrap_or(db.norm_groups),
        };

        let dt = TrainConfig::for_mode(mode);
        let train = TrainConfig {
            mode,
            weights,
            regime,
            mask,
            epochs: f.epochs.unwrap_or(dt.epochs),
            batch_size: f.batch_size.unwrap_or(dt.batch_size),
            learning_rate: f.learning_rate.unwrap_or(dt.learning_rate),
            seed: f.seed.unwrap_or(dt.seed),
            checkpoint_every: f.checkpoint_every.unwrap_or(dt.checkpoint_every),
            backbone,
            ignore_label: f.ignore_label,
            context_masked_pixels_only: f.context_masked_pixels_only.unwrap_or(false),
        };
        train.validate()?;
        Ok(Self { train, data, output_root: f.output_root.unwrap_or_else(|| PathBuf::from("runs")) })
    }

    fn to_flat(&self) -> Flat {
        let t = &self.train;
        let m = &t.mask;
        let mut f = Flat {
            mode: Some(t.mode.name().to_owned()),
            alpha1: Some(t.weights.alpha1),
            alpha2: Some(t.weights.alpha2),
            alpha3: Some(t.weights.alpha3),
            regime: Some(if t.regime.kind == RegimeKind::Low { "low" } else { "high" }.to_owned()),
            band_low: Some(t.regime.band.low),
            band_high: Some(t.regime.band.high),
            epochs: Some(t.epochs),
            batch_size: Some(t.batch_size),
            learning_rate: Some(t.learning_rate),
            seed: Some(t.seed),
            checkpoint_every: Some(t.checkpoint_every),
            base_width: Some(t.backbone.base_width),
            depth: Some(t.backbone.depth),
            convs_per_block: Some(t.backbone.convs_per_block),
            norm_groups: Some(t.backbone.norm_groups),
            ignore_label: t.ignore_label,
            context_masked_pixels_only: Some(t.context_masked_pixels_only),
            mask_strokes_min: Some(m.num_strokes_range.0),
            mask_strokes_max: Some(m.num_strokes_range.1),
            mask_stroke_width_min: Some(m.stroke_width_range.0),
            mask_stroke_width_max: Some(m.stroke_width_range.1),
            mask_holes_min: Some(m.num_holes_range.0),
            mask_holes_max: Some(m.num_holes_range.1),
            mask_hole_radius_min: Some(m.hole_radius_range.0),
            mask_hole_radius_max: Some(m.hole_radius_range.1),
            mask_max_attempts: Some(m.max_resample_attempts),
            output_root: Some(self.output_root.clone()),
            ..Flat::default()
        };
        match &self.data {
            DataSource::Binary { n, size, ambiguity, seed } => {
                f.dataset = Some("binary".into());
                (f.data_n, f.data_size, f.ambiguity, f.data_seed) = (Some(*n), Some(*size), Some(*ambiguity), Some(*seed));
            }
            DataSource::Multiclass { n, size, num_classes, imbalance, seed } => {
                f.dataset = Some("multiclass".into());
                (f.data_n, f.data_size, f.data_seed) = (Some(*n), Some(*size), Some(*seed));
                (f.num_classes, f.imbalance) = (Some(*num_classes), Some(*imbalance));
            }
            DataSource::Dir { root, num_classes } => {
                f.dataset = Some("dir".into());
                (f.data_dir, f.num_classes) = (Some(root.clone()), Some(*num_classes));
            }
        }
        f
    }

    /// Canonical text with every key spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_flat()).expect("flat config serializes")
    }

    /// Short hex digest of [`to_toml`](Self::to_toml).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..6].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}
