//! Confusion-matrix mIoU and masked-corruption robustness curves.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::maskgen::{apply_mask, generate_mask, CoverageBand, MaskGenConfig, MaskRegime};
use crate::nn::SegmentationModel;
use crate::rng::{derive_seed, hash_str};
use crate::tensor::{Label, LabelMap, Scalar};
use crate::trainer::infer;

/// `K×K` pixel counts; entry `(i, j)` counts pixels of true class `i`
/// predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::ShapeMismatch {
                context: "confusion counts",
                expected: (classes, classes, 1),
                found: (counts.len(), 1, 1),
            });
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one prediction/ground-truth pair. Pixels whose ground truth is
    /// the ignore label are skipped. On error the matrix is left untouched.
    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap, ignore_label: Option<Label>) -> Result<()> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::ShapeMismatch {
                context: "accumulate",
                expected: (gt.height(), gt.width(), 1),
                found: (pred.height(), pred.width(), 1),
            });
        }
        gt.validate(self.classes, ignore_label)?;
        pred.validate(self.classes, None)?;
        for (&p, &t) in pred.data().iter().zip(gt.data()) {
            if Some(t) == ignore_label {
                continue;
            }
            self.counts[usize::from(t) * self.classes + usize::from(p)] += 1;
        }
        Ok(())
    }

    /// Element-wise sum; accumulation is associative and commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::ShapeMismatch {
                context: "merge",
                expected: (self.classes, self.classes, 1),
                found: (other.classes, other.classes, 1),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Returns `cm` updated with one more prediction/ground-truth pair.
pub fn accumulate(
    cm: &ConfusionMatrix,
    pred: &LabelMap,
    gt: &LabelMap,
    ignore_label: Option<Label>,
) -> Result<ConfusionMatrix> {
    let mut out = cm.clone();
    out.add(pred, gt, ignore_label)?;
    Ok(out)
}

/// Evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub params: usize,
    pub num_images: usize,
}

/// Per-class IoU `tp / (row + col - tp)` and their mean over defined classes.
///
/// `params` and `num_images` are left at zero for the caller to fill.
pub fn miou(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let k = cm.classes;
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c);
        let row: u64 = (0..k).map(|j| cm.get(c, j)).sum();
        let col: u64 = (0..k).map(|i| cm.get(i, c)).sum();
        let union = row + col - tp;
        per_class.push((union > 0).then(|| tp as f64 / union as f64));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let diag: u64 = (0..k).map(|c| cm.get(c, c)).sum();
    Ok(MetricsReport {
        miou: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class_iou: per_class,
        pixel_accuracy: diag as f64 / cm.total() as f64,
        params: 0,
        num_images: 0,
    })
}

/// Pooled confusion matrix of `model` over `samples` (unmasked inputs).
pub fn confusion<T: Scalar, M: SegmentationModel<T>>(
    model: &M,
    samples: &[Sample],
    ignore_label: Option<Label>,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.num_classes());
    for s in samples {
        cm.add(&infer(model, &s.image)?, &s.label, ignore_label)?;
    }
    Ok(cm)
}

/// Dataset-level mIoU of `model` on `samples`.
pub fn evaluate<T: Scalar, M: SegmentationModel<T>>(
    model: &M,
    samples: &[Sample],
    ignore_label: Option<Label>,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut report = miou(&confusion(model, samples, ignore_label)?)?;
    report.params = model.parameter_count();
    report.num_images = samples.len();
    Ok(report)
}

/// Half-width of the coverage band used for each requested corruption level.
pub const ROBUSTNESS_BAND_HALF_WIDTH: f64 = 0.05;

/// Seed of the corruption mask for one sample at one coverage level. It does
/// not depend on the model, so different models see identical corruptions.
pub fn corruption_seed(seed: u64, coverage: f64, sample_id: &str) -> u64 {
    derive_seed(&[seed, coverage.to_bits(), hash_str(sample_id)])
}

/// Report for one corruption level.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessPoint {
    pub coverage: f64,
    pub report: MetricsReport,
}

/// mIoU under masked corruption for each requested coverage, in order.
///
/// Every sample is masked with a fresh mask targeting
/// `[c - 0.05, c + 0.05]` (clamped) and predicted with one forward pass.
pub fn robustness_curve<T: Scalar, M: SegmentationModel<T>>(
    model: &M,
    samples: &[Sample],
    coverages: &[f64],
    cfg: &MaskGenConfig,
    seed: u64,
    ignore_label: Option<Label>,
) -> Result<Vec<RobustnessPoint>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = Vec::with_capacity(coverages.len());
    for &c in coverages {
        if !(0.0..1.0).contains(&c) {
            return Err(Error::InvalidConfig(alloc::format!("coverage {c} outside [0, 1)")));
        }
        let regime = MaskRegime::custom(CoverageBand::around(c, ROBUSTNESS_BAND_HALF_WIDTH));
        let mut cm = ConfusionMatrix::new(model.num_classes());
        for s in samples {
            let (h, w, _) = s.image.dims();
            let mask = generate_mask(h, w, &regime, cfg, corruption_seed(seed, c, &s.id))?;
            let corrupted = apply_mask(&s.image, &mask)?;
            cm.add(&infer(model, &corrupted)?, &s.label, ignore_label)?;
        }
        let mut report = miou(&cm)?;
        report.params = model.parameter_count();
        report.num_images = samples.len();
        out.push(RobustnessPoint { coverage: c, report });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, v: &[u8]) -> LabelMap {
        LabelMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn enumerated_four_pixel_example() {
        let cm = accumulate(&ConfusionMatrix::new(2), &map(2, 2, &[0, 1, 1, 1]), &map(2, 2, &[0, 1, 0, 1]), None)
            .unwrap();
        assert_eq!(cm.counts(), &[1, 1, 0, 2]);
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
        assert!((r.pixel_accuracy - 0.75).abs() < 1e-15);
    }

    #[test]
    fn perfect_match_has_no_off_diagonal() {
        let gt = map(4, 4, &[0, 1, 1, 0, 1, 1, 0, 0, 0, 0, 1, 1, 1, 0, 1, 0]);
        let cm = accumulate(&ConfusionMatrix::new(2), &gt, &gt, None).unwrap();
        assert_eq!(cm.get(0, 1) + cm.get(1, 0), 0);
        assert_eq!(miou(&cm).unwrap().miou, 1.0);
    }

    #[test]
    fn ignored_pixels_leave_matrix_unchanged() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 0, 2]).unwrap();
        let out = accumulate(&cm, &map(1, 3, &[0, 1, 1]), &map(1, 3, &[255, 255, 255]), Some(255)).unwrap();
        assert_eq!(out, cm);
    }

    #[test]
    fn absent_class_is_undefined() {
        let cm = ConfusionMatrix::from_counts(3, vec![4, 0, 0, 0, 0, 0, 1, 0, 5]).unwrap();
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class_iou[1], None);
        assert!((r.miou - (0.8 + 5.0 / 6.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn error_paths() {
        assert_eq!(miou(&ConfusionMatrix::new(3)), Err(Error::EmptyEvaluation));
        let mut cm = ConfusionMatrix::new(2);
        assert!(matches!(cm.add(&map(1, 2, &[0, 2]), &map(1, 2, &[0, 1]), None), Err(Error::LabelOutOfRange { .. })));
        assert!(matches!(cm.add(&map(1, 2, &[0, 1]), &map(1, 2, &[0, 3]), None), Err(Error::LabelOutOfRange { .. })));
        assert!(matches!(cm.add(&map(1, 2, &[0, 1]), &map(2, 1, &[0, 1]), None), Err(Error::ShapeMismatch { .. })));
        assert_eq!(cm.total(), 0);
    }

    /// Per-class IoU from pixel index sets.
    fn brute_force_miou(pred: &[u8], gt: &[u8], k: u8) -> Option<f64> {
        let mut ious = Vec::new();
        for c in 0..k {
            let p: BTreeSet<usize> = pred.iter().enumerate().filter(|(_, &v)| v == c).map(|(i, _)| i).collect();
            let g: BTreeSet<usize> = gt.iter().enumerate().filter(|(_, &v)| v == c).map(|(i, _)| i).collect();
            let union = p.union(&g).count();
            if union > 0 {
                ious.push(p.intersection(&g).count() as f64 / union as f64);
            }
        }
        (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            (h, w, k, pred, gt) in (1usize..=8, 1usize..=8, 2u8..=4).prop_flat_map(|(h, w, k)| {
                let n = h * w;
                (Just(h), Just(w), Just(k),
                 proptest::collection::vec(0..k, n), proptest::collection::vec(0..k, n))
            })
        ) {
            let cm = accumulate(&ConfusionMatrix::new(k as usize), &map(h, w, &pred), &map(h, w, &gt), None).unwrap();
            prop_assert_eq!(miou(&cm).ok().map(|r| r.miou), brute_force_miou(&pred, &gt, k));
        }

        #[test]
        fn invariant_under_class_permutation(
            pred in proptest::collection::vec(0u8..3, 16),
            gt in proptest::collection::vec(0u8..3, 16),
        ) {
            let perm = [2u8, 0, 1];
            let relabel = |v: &[u8]| v.iter().map(|&x| perm[x as usize]).collect::<Vec<_>>();
            let a = miou(&accumulate(&ConfusionMatrix::new(3), &map(4, 4, &pred), &map(4, 4, &gt), None).unwrap()).unwrap();
            let b = miou(&accumulate(&ConfusionMatrix::new(3), &map(4, 4, &relabel(&pred)), &map(4, 4, &relabel(&gt)), None).unwrap()).unwrap();
            prop_assert!((a.miou - b.miou).abs() < 1e-12);
        }

        #[test]
        fn merge_equals_serial(
            maps in proptest::collection::vec((proptest::collection::vec(0u8..3, 9), proptest::collection::vec(0u8..3, 9)), 1..6)
        ) {
            let mut serial = ConfusionMatrix::new(3);
            let mut merged = ConfusionMatrix::new(3);
            for (p, g) in maps.iter().rev() {
                let single = accumulate(&ConfusionMatrix::new(3), &map(3, 3, p), &map(3, 3, g), None).unwrap();
                merged.merge(&single).unwrap();
            }
            for (p, g) in &maps {
                serial.add(&map(3, 3, p), &map(3, 3, g), None).unwrap();
            }
            prop_assert_eq!(serial, merged);
        }
    }
}
