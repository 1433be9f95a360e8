//! Training loop for the baseline, context-branch and full MaskSup arms,
//! plus single-pass inference.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_with_grad, total_loss_with_grad, LossBundle, LossOptions, LossWeights};
use crate::maskgen::{apply_mask, generate_mask, MaskGenConfig, MaskRegime};
use crate::metrics::{evaluate, MetricsReport};
use crate::nn::{SegmentationModel, SiameseNet, UNet, UNetConfig};
use crate::rng::{derive_seed, hash_str, rng_from_seed};
use crate::tensor::{ImageTensor, Label, LabelMap, Scalar};

/// Which loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Segmentation loss only; no masked branch.
    Baseline,
    /// Segmentation plus context-branch loss.
    ContextBranch,
    /// All three terms.
    MaskSup,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::ContextBranch, Mode::MaskSup];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::ContextBranch => "cb",
            Mode::MaskSup => "masksup",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Some(Mode::Baseline),
            "cb" | "context" | "context_branch" => Some(Mode::ContextBranch),
            "masksup" => Some(Mode::MaskSup),
            _ => None,
        }
    }

    pub fn default_weights(self) -> LossWeights {
        match self {
            Mode::Baseline => LossWeights { alpha1: 1.0, alpha2: 0.0, alpha3: 0.0 },
            Mode::ContextBranch => LossWeights { alpha1: 1.0, alpha2: 1.0, alpha3: 0.0 },
            Mode::MaskSup => LossWeights::default(),
        }
    }

    pub fn uses_masked_branch(self) -> bool {
        self != Mode::Baseline
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub weights: LossWeights,
    pub regime: MaskRegime,
    pub mask: MaskGenConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Emit a checkpoint every this many optimizer steps; 0 disables.
    pub checkpoint_every: usize,
    pub backbone: UNetConfig,
    pub ignore_label: Option<Label>,
    pub context_masked_pixels_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_mode(Mode::MaskSup)
    }
}

impl TrainConfig {
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            mode,
            weights: mode.default_weights(),
            regime: MaskRegime::high(),
            mask: MaskGenConfig::default(),
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            checkpoint_every: 0,
            backbone: UNetConfig::default(),
            ignore_label: None,
            context_masked_pixels_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.weights.validate()?;
        let w = self.weights;
        let consistent = match self.mode {
            Mode::Baseline => w.alpha2 == 0.0 && w.alpha3 == 0.0,
            Mode::ContextBranch => w.alpha2 > 0.0 && w.alpha3 == 0.0,
            Mode::MaskSup => w.alpha2 > 0.0 && w.alpha3 > 0.0,
        };
        if !consistent {
            return bad(alloc::format!(
                "weights ({}, {}, {}) are inconsistent with mode {}",
                w.alpha1,
                w.alpha2,
                w.alpha3,
                self.mode.name()
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(alloc::format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        self.mask.validate()?;
        self.backbone.validate()?;
        MaskRegime::new(self.regime.kind, self.regime.band)?;
        Ok(())
    }

    fn loss_options(&self) -> LossOptions {
        LossOptions {
            ignore_label: self.ignore_label,
            context_masked_pixels_only: self.context_masked_pixels_only,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let lr = (self.learning_rate * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * *m / (v.sqrt() + eps);
        }
    }
}

/// Loss of one optimizer step (means over the batch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBundle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the epoch's step losses.
    pub train_loss: LossBundle,
    /// `None` when the split has no validation samples.
    pub val: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_miou: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation mIoU (the last epoch
    /// when there is no validation split).
    pub best: UNet<f32>,
    pub last: UNet<f32>,
    pub report: TrainReport,
}

/// Hooks for logging and checkpointing from the training loop.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_epoch(&mut self, _record: &EpochRecord, _net: &UNet<f32>, _is_best: bool) {}
    fn on_checkpoint(&mut self, _step: usize, _net: &UNet<f32>) {}
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Seed of the training mask drawn for `sample_id` at (`epoch`, in-epoch `step`).
pub fn mask_seed(seed: u64, epoch: usize, step: usize, sample_id: &str) -> u64 {
    derive_seed(&[seed, 0x3A5C, epoch as u64, step as u64, hash_str(sample_id)])
}

/// Training mask for one sample visit.
pub fn training_mask(cfg: &TrainConfig, epoch: usize, step: usize, sample_id: &str, h: usize, w: usize) -> Result<crate::maskgen::HoleMask> {
    generate_mask(h, w, &cfg.regime, &cfg.mask, mask_seed(cfg.seed, epoch, step, sample_id))
}

pub fn train(cfg: &TrainConfig, data: &DatasetSplit) -> Result<TrainOutcome> {
    train_with(cfg, data, &mut NoObserver)
}

/// Runs `cfg.epochs` epochs over `data.train`, one optimizer step per batch.
///
/// In the two-branch modes every sample gets a fresh mask per step. The
/// baseline runs a single forward pass per sample and never draws a mask.
pub fn train_with<O: TrainObserver + ?Sized>(
    cfg: &TrainConfig,
    data: &DatasetSplit,
    observer: &mut O,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.backbone.num_classes != data.num_classes {
        return Err(Error::InvalidConfig(alloc::format!(
            "backbone has {} classes, dataset has {}",
            cfg.backbone.num_classes,
            data.num_classes
        )));
    }
    let mut net = SiameseNet::new(UNet::<f32>::new(cfg.backbone, cfg.seed)?);
    let n_params = net.parameter_count();
    let mut adam = Adam::new(n_params, cfg.learning_rate);
    let mut grads = vec![0.0f32; n_params];
    let opts = cfg.loss_options();
    let w = cfg.weights;

    let mut report = TrainReport::default();
    let mut best: Option<(f64, UNet<f32>)> = None;
    let mut global_step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(&[cfg.seed, 0x5F, epoch as u64])));
        let mut epoch_sum = [0.0f64; 3];
        let mut epoch_steps = 0usize;

        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.fill(0.0);
            let scale = 1.0 / batch.len() as f32;
            let mut sum = [0.0f64; 3];
            for &i in batch {
                let sample = &data.train[i];
                let (h, wd, _) = sample.image.dims();
                if cfg.mode.uses_masked_branch() {
                    let mask = training_mask(cfg, epoch, step, &sample.id, h, wd)?;
                    let masked = apply_mask(&sample.image, &mask)?;
                    let pass = net.forward_pair(&sample.image, &masked)?;
                    let mut g = total_loss_with_grad(&pass.clean, &pass.masked, &sample.label, w, opts, Some(&mask))?;
                    g.clean.iter_mut().chain(g.masked.iter_mut()).for_each(|v| *v *= scale);
                    net.backward_pair(&pass, &g.clean, &g.masked, &mut grads);
                    sum[0] += g.bundle.seg;
                    sum[1] += g.bundle.context;
                    sum[2] += g.bundle.tasksim;
                } else {
                    let (logits, trace) = net.backbone().forward_train(&sample.image)?;
                    let (v, mut g) = cross_entropy_with_grad(&logits, &sample.label, opts.ignore_label, None)?;
                    let s = scale * w.alpha1 as f32;
                    g.iter_mut().for_each(|x| *x *= s);
                    net.backbone().backward(&trace, &g, &mut grads);
                    sum[0] += v.to_f64();
                }
            }
            let m = batch.len() as f64;
            let loss = LossBundle::new(sum[0] / m, sum[1] / m, sum[2] / m, w);
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, step: global_step });
            }
            adam.step(net.backbone_mut().params_mut().values_mut(), &grads);

            let record = StepRecord { epoch, step: global_step, loss };
            observer.on_step(&record);
            report.steps.push(record);
            for (a, b) in epoch_sum.iter_mut().zip(sum) {
                *a += b / m;
            }
            epoch_steps += 1;
            global_step += 1;
            if cfg.checkpoint_every > 0 && global_step % cfg.checkpoint_every == 0 {
                observer.on_checkpoint(global_step, net.backbone());
            }
        }

        let k = epoch_steps as f64;
        let train_loss = LossBundle::new(epoch_sum[0] / k, epoch_sum[1] / k, epoch_sum[2] / k, w);
        let val = if data.val.is_empty() {
            None
        } else {
            Some(evaluate(net.backbone(), &data.val, cfg.ignore_label)?)
        };
        let score = val.as_ref().map_or(f64::NEG_INFINITY, |r| r.miou);
        let is_best = match &best {
            None => true,
            // Without validation data the latest epoch wins.
            Some((b, _)) => score > *b || val.is_none(),
        };
        if is_best {
            best = Some((score, net.backbone().clone()));
            report.best_epoch = epoch;
            report.best_val_miou = val.as_ref().map(|r| r.miou);
        }
        let record = EpochRecord { epoch, train_loss, val };
        observer.on_epoch(&record, net.backbone(), is_best);
        report.epochs.push(record);
    }

    let last = net.into_backbone();
    let best = best.map(|(_, n)| n).unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { best, last, report })
}

/// Class map from one unmasked forward pass; ties go to the lowest class.
pub fn infer<T: Scalar, M: SegmentationModel<T> + ?Sized>(model: &M, image: &ImageTensor) -> Result<LabelMap> {
    Ok(model.forward(image)?.argmax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_binary_shapes;
    use crate::nn::Instrumented;
    use crate::tensor::LogitsMap;

    struct Fixed(LogitsMap<f32>);

    impl SegmentationModel<f32> for Fixed {
        fn num_classes(&self) -> usize {
            self.0.classes()
        }
        fn forward(&self, _image: &ImageTensor) -> Result<LogitsMap<f32>> {
            Ok(self.0.clone())
        }
        fn parameter_count(&self) -> usize {
            0
        }
    }

    fn tiny_cfg(mode: Mode) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            backbone: UNetConfig { base_width: 4, depth: 2, ..UNetConfig::default() },
            ..TrainConfig::for_mode(mode)
        }
    }

    #[test]
    fn argmax_examples() {
        let img = ImageTensor::zeros(2, 2, 3);
        let strict = Fixed(LogitsMap::new(2, 2, 3, [vec![0.0; 4], vec![1.0; 4], vec![5.0; 4]].concat()).unwrap());
        assert_eq!(infer(&strict, &img).unwrap(), LabelMap::filled(2, 2, 2));
        let tie = Fixed(
            LogitsMap::from_pixels(1, 1, &[&[3.0f32, 1.0, 2.0, 3.0][..]]).unwrap(),
        );
        assert_eq!(infer(&tie, &ImageTensor::zeros(1, 1, 3)).unwrap().data(), &[0]);
    }

    #[test]
    fn infer_is_one_forward_pass() {
        let net = Instrumented::new(Fixed(LogitsMap::new(1, 1, 2, vec![0.0, 1.0]).unwrap()));
        let img = ImageTensor::zeros(1, 1, 3);
        for i in 1..=3 {
            infer(&net, &img).unwrap();
            assert_eq!(net.forward_calls(), i);
        }
    }

    #[test]
    fn mode_weight_consistency() {
        for mode in Mode::ALL {
            assert!(TrainConfig::for_mode(mode).validate().is_ok());
            assert_eq!(Mode::parse(mode.name()), Some(mode));
        }
        let mut cfg = TrainConfig::for_mode(Mode::Baseline);
        cfg.weights.alpha3 = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::for_mode(Mode::ContextBranch);
        cfg.weights.alpha2 = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::for_mode(Mode::MaskSup);
        cfg.weights.alpha3 = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fresh_masks_per_visit() {
        let cfg = TrainConfig::default();
        let a = training_mask(&cfg, 0, 0, "s1", 32, 32).unwrap();
        let b = training_mask(&cfg, 1, 0, "s1", 32, 32).unwrap();
        let c = training_mask(&cfg, 0, 0, "s2", 32, 32).unwrap();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, training_mask(&cfg, 0, 0, "s1", 32, 32).unwrap());
    }

    #[test]
    fn baseline_records_zero_auxiliary_terms() {
        let data = synth_binary_shapes(10, 16, 0.0, 1).unwrap();
        let out = train(&tiny_cfg(Mode::Baseline), &data).unwrap();
        assert_eq!(out.report.steps.len(), 2 * 2);
        assert_eq!(out.report.epochs.len(), 2);
        for s in &out.report.steps {
            assert_eq!((s.loss.context, s.loss.tasksim), (0.0, 0.0));
            assert_eq!(s.loss.total, s.loss.seg);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = synth_binary_shapes(10, 16, 0.2, 3).unwrap();
        let a = train(&tiny_cfg(Mode::MaskSup), &data).unwrap();
        let b = train(&tiny_cfg(Mode::MaskSup), &data).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.best.params().values(), b.best.params().values());
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let data = synth_binary_shapes(10, 16, 0.0, 1).unwrap();
        let mut cfg = tiny_cfg(Mode::MaskSup);
        cfg.backbone.num_classes = 3;
        assert!(matches!(train(&cfg, &data), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let data = synth_binary_shapes(10, 16, 0.0, 1).unwrap();
        let mut cfg = tiny_cfg(Mode::MaskSup);
        cfg.learning_rate = 1e30;
        cfg.epochs = 5;
        assert!(matches!(train(&cfg, &data), Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = [1.0f32, -1.0];
        adam.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }
}
