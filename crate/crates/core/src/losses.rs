//! Segmentation, context and task-similarity losses and their weighted sum.
//!
//! * `seg` and `context` are pixel-mean softmax cross-entropies of the clean
//!   and masked branch logits against the same ground truth.
//! * `tasksim` is the mean squared difference between the two branches'
//!   per-pixel class probabilities, over all `H·W·K` entries. Gradients flow
//!   into both branches.
//! * `total = α₁·seg + α₂·context + α₃·tasksim`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::maskgen::HoleMask;
use crate::tensor::{Label, LabelMap, LogitsMap, Scalar};

/// Non-negative weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha1: 1.0, alpha2: 1.0, alpha3: 1.0 }
    }
}

impl LossWeights {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self> {
        let w = Self { alpha1, alpha2, alpha3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.alpha1, self.alpha2, self.alpha3].iter().all(|a| a.is_finite() && *a >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("loss weights must be non-negative: {self:?}")))
        }
    }
}

/// Total loss with its components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub total: f64,
    pub seg: f64,
    pub context: f64,
    pub tasksim: f64,
    pub weights: LossWeights,
}

impl LossBundle {
    pub fn new(seg: f64, context: f64, tasksim: f64, weights: LossWeights) -> Self {
        let total = weights.alpha1 * seg + weights.alpha2 * context + weights.alpha3 * tasksim;
        Self { total, seg, context, tasksim, weights }
    }

    /// Recomputes the weighted sum from the stored components.
    pub fn recombined(&self) -> f64 {
        self.weights.alpha1 * self.seg + self.weights.alpha2 * self.context + self.weights.alpha3 * self.tasksim
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.seg, self.context, self.tasksim].iter().all(|v| v.is_finite())
    }
}

/// Options shared by the cross-entropy terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossOptions {
    pub ignore_label: Option<Label>,
    /// Supervise the masked branch only on removed pixels.
    pub context_masked_pixels_only: bool,
}

fn check_spatial<T: Scalar>(logits: &LogitsMap<T>, gt: &LabelMap) -> Result<()> {
    if (logits.height(), logits.width()) != (gt.height(), gt.width()) {
        return Err(Error::ShapeMismatch {
            context: "logits vs ground truth",
            expected: logits.dims(),
            found: (gt.height(), gt.width(), logits.classes()),
        });
    }
    Ok(())
}

/// Mean softmax cross-entropy over the selected, non-ignored pixels and its
/// gradient with respect to the logits. Returns zero when nothing is selected.
pub fn cross_entropy_with_grad<T: Scalar>(
    logits: &LogitsMap<T>,
    gt: &LabelMap,
    ignore_label: Option<Label>,
    select: Option<&HoleMask>,
) -> Result<(T, Vec<T>)> {
    check_spatial(logits, gt)?;
    let k = logits.classes();
    gt.validate(k, ignore_label)?;
    let hw = logits.height() * logits.width();
    let data = logits.data();
    let selected = |p: usize| {
        let label = gt.data()[p];
        Some(label) != ignore_label && select.is_none_or(|m| m.data()[p] == 0)
    };
    let count = (0..hw).filter(|&p| selected(p)).count();
    let mut grad = vec![T::zero(); data.len()];
    if count == 0 {
        return Ok((T::zero(), grad));
    }
    let inv = T::one() / T::from_f64(count as f64);
    let mut total = T::zero();
    for p in (0..hw).filter(|&p| selected(p)) {
        let target = usize::from(gt.data()[p]);
        let mut max = T::neg_infinity();
        for c in 0..k {
            max = max.max(data[c * hw + p]);
        }
        let mut sum = T::zero();
        for c in 0..k {
            let e = (data[c * hw + p] - max).exp();
            grad[c * hw + p] = e;
            sum += e;
        }
        total += max + sum.ln() - data[target * hw + p];
        for c in 0..k {
            grad[c * hw + p] = grad[c * hw + p] / sum * inv;
        }
        grad[target * hw + p] -= inv;
    }
    Ok((total * inv, grad))
}

/// Cross-entropy of the segmentation branch.
pub fn seg_loss<T: Scalar>(logits: &LogitsMap<T>, gt: &LabelMap, ignore_label: Option<Label>) -> Result<f64> {
    cross_entropy_with_grad(logits, gt, ignore_label, None).map(|(v, _)| v.to_f64())
}

/// Cross-entropy of the masked (context) branch; same contract as [`seg_loss`].
pub fn context_loss<T: Scalar>(
    masked_logits: &LogitsMap<T>,
    gt: &LabelMap,
    ignore_label: Option<Label>,
) -> Result<f64> {
    seg_loss(masked_logits, gt, ignore_label)
}

fn check_same<T: Scalar>(a: &LogitsMap<T>, b: &LogitsMap<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch { context: "tasksim", expected: a.dims(), found: b.dims() });
    }
    Ok(())
}

/// Backpropagates `g = dL/dp` through a per-pixel softmax with outputs `p`.
fn softmax_backward<T: Scalar>(p: &[T], g: &[T], classes: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); p.len()];
    for px in 0..hw {
        let mut dotp = T::zero();
        for c in 0..classes {
            dotp += g[c * hw + px] * p[c * hw + px];
        }
        for c in 0..classes {
            let i = c * hw + px;
            out[i] = p[i] * (g[i] - dotp);
        }
    }
    out
}

/// Mean squared probability difference and its gradients with respect to
/// both logit maps.
pub fn tasksim_with_grad<T: Scalar>(m_p: &LogitsMap<T>, m_pm: &LogitsMap<T>) -> Result<(T, Vec<T>, Vec<T>)> {
    check_same(m_p, m_pm)?;
    let (p, q) = (m_p.softmax(), m_pm.softmax());
    let n = T::from_f64(p.len().max(1) as f64);
    let diff: Vec<T> = p.iter().zip(&q).map(|(&a, &b)| a - b).collect();
    let value = diff.iter().map(|&d| d * d).sum::<T>() / n;
    let scale = T::from_f64(2.0) / n;
    let gp: Vec<T> = diff.iter().map(|&d| d * scale).collect();
    let gq: Vec<T> = gp.iter().map(|&g| -g).collect();
    let hw = m_p.height() * m_p.width();
    let k = m_p.classes();
    Ok((value, softmax_backward(&p, &gp, k, hw), softmax_backward(&q, &gq, k, hw)))
}

/// Mean over all entries of `(softmax(m_p) - softmax(m_pm))²`.
pub fn tasksim_loss<T: Scalar>(m_p: &LogitsMap<T>, m_pm: &LogitsMap<T>) -> Result<f64> {
    check_same(m_p, m_pm)?;
    let (p, q) = (m_p.softmax(), m_pm.softmax());
    let n = p.len().max(1) as f64;
    Ok(p.iter().zip(&q).map(|(&a, &b)| {
        let d = (a - b).to_f64();
        d * d
    }).sum::<f64>() / n)
}

/// Weighted total of the three terms.
pub fn total_loss<T: Scalar>(
    m_p: &LogitsMap<T>,
    m_pm: &LogitsMap<T>,
    gt: &LabelMap,
    weights: LossWeights,
    ignore_label: Option<Label>,
) -> Result<LossBundle> {
    check_same(m_p, m_pm)?;
    let seg = seg_loss(m_p, gt, ignore_label)?;
    let context = context_loss(m_pm, gt, ignore_label)?;
    let tasksim = tasksim_loss(m_p, m_pm)?;
    Ok(LossBundle::new(seg, context, tasksim, weights))
}

/// Gradients of a [`LossBundle`] total with respect to both logit maps.
pub struct LossGrads<T> {
    pub bundle: LossBundle,
    pub clean: Vec<T>,
    pub masked: Vec<T>,
}

/// [`total_loss`] plus gradients. `mask` is needed only when
/// `context_masked_pixels_only` is set. Terms with zero weight still report
/// their value but contribute no gradient.
pub fn total_loss_with_grad<T: Scalar>(
    m_p: &LogitsMap<T>,
    m_pm: &LogitsMap<T>,
    gt: &LabelMap,
    weights: LossWeights,
    opts: LossOptions,
    mask: Option<&HoleMask>,
) -> Result<LossGrads<T>> {
    check_same(m_p, m_pm)?;
    let select = if opts.context_masked_pixels_only { mask } else { None };
    let (seg, mut clean) = cross_entropy_with_grad(m_p, gt, opts.ignore_label, None)?;
    let (context, dctx) = cross_entropy_with_grad(m_pm, gt, opts.ignore_label, select)?;
    let (tasksim, dtp, dtq) = tasksim_with_grad(m_p, m_pm)?;

    let (a1, a2, a3) =
        (T::from_f64(weights.alpha1), T::from_f64(weights.alpha2), T::from_f64(weights.alpha3));
    let mut masked = vec![T::zero(); clean.len()];
    for i in 0..clean.len() {
        clean[i] = a1 * clean[i] + a3 * dtp[i];
        masked[i] = a2 * dctx[i] + a3 * dtq[i];
    }
    let bundle = LossBundle::new(seg.to_f64(), context.to_f64(), tasksim.to_f64(), weights);
    Ok(LossGrads { bundle, clean, masked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = core::f64::consts::LN_2;

    fn uniform(h: usize, w: usize, k: usize) -> LogitsMap<f64> {
        LogitsMap::new(h, w, k, vec![0.0; h * w * k]).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let gt = LabelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let v = seg_loss(&uniform(2, 2, 4), &gt, None).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        assert!((v - 1.3863).abs() < 1e-4);
        let gt2 = LabelMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let c = context_loss(&uniform(2, 2, 2), &gt2, None).unwrap();
        assert!((c - LN2).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_two_pixel_example() {
        // pixel 0 scores (2, 0), pixel 1 scores (0, 2); both labelled 0.
        let logits = LogitsMap::<f64>::from_pixels(1, 2, &[&[2.0, 0.0], &[0.0, 2.0]]).unwrap();
        let gt = LabelMap::new(1, 2, vec![0, 0]).unwrap();
        let v = seg_loss(&logits, &gt, None).unwrap();
        let e2 = 2f64.exp();
        let want = 0.5 * (-(e2 / (e2 + 1.0)).ln() - (1.0 / (e2 + 1.0)).ln());
        assert!((v - want).abs() < 1e-12);
        assert!((v - 1.1269).abs() < 1e-4);
    }

    #[test]
    fn confident_prediction_approaches_zero() {
        let logits = LogitsMap::<f64>::from_pixels(1, 2, &[&[40.0, 0.0], &[0.0, 40.0]]).unwrap();
        let gt = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        assert!(seg_loss(&logits, &gt, None).unwrap() < 1e-12);
    }

    #[test]
    fn ignored_pixels_do_not_count() {
        let logits = LogitsMap::<f64>::from_pixels(1, 2, &[&[2.0, 0.0], &[0.0, 2.0]]).unwrap();
        let all = LabelMap::new(1, 2, vec![255, 255]).unwrap();
        assert_eq!(seg_loss(&logits, &all, Some(255)).unwrap(), 0.0);
        assert_eq!(context_loss(&logits, &all, Some(255)).unwrap(), 0.0);
        let half = LabelMap::new(1, 2, vec![0, 255]).unwrap();
        let one = seg_loss(&logits, &half, Some(255)).unwrap();
        assert!((one - (1.0 + (-2f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_labels_error() {
        let gt = LabelMap::new(1, 2, vec![0, 2]).unwrap();
        assert_eq!(
            seg_loss(&uniform(1, 2, 2), &gt, None),
            Err(Error::LabelOutOfRange { label: 2, num_classes: 2 })
        );
        assert!(seg_loss(&uniform(1, 3, 2), &gt, None).is_err());
    }

    #[test]
    fn tasksim_examples() {
        // Saturated logits give one-hot probabilities (1,0) and (0,1).
        let p = LogitsMap::<f64>::from_pixels(1, 1, &[&[100.0, -100.0]]).unwrap();
        let q = LogitsMap::<f64>::from_pixels(1, 1, &[&[-100.0, 100.0]]).unwrap();
        assert!((tasksim_loss(&p, &q).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(tasksim_loss(&p, &p).unwrap(), 0.0);
        assert_eq!(tasksim_loss(&p, &q).unwrap(), tasksim_loss(&q, &p).unwrap());
        assert!(tasksim_loss(&p, &uniform(1, 2, 2)).is_err());
        // Shifting every logit of a pixel leaves the probabilities unchanged.
        let shifted = LogitsMap::<f64>::from_pixels(1, 1, &[&[105.0, -95.0]]).unwrap();
        assert!(tasksim_loss(&p, &shifted).unwrap() < 1e-20);
    }

    #[test]
    fn weight_zeroing_reduces_total() {
        let p = LogitsMap::<f64>::from_pixels(1, 2, &[&[1.0, -0.5], &[0.2, 0.3]]).unwrap();
        let q = LogitsMap::<f64>::from_pixels(1, 2, &[&[0.1, 0.5], &[-0.7, 0.9]]).unwrap();
        let gt = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        let seg = seg_loss(&p, &gt, None).unwrap();
        let ctx = context_loss(&q, &gt, None).unwrap();
        let base = total_loss(&p, &q, &gt, LossWeights::new(1.0, 0.0, 0.0).unwrap(), None).unwrap();
        assert_eq!(base.total, seg);
        let cb = total_loss(&p, &q, &gt, LossWeights::new(1.0, 1.0, 0.0).unwrap(), None).unwrap();
        assert_eq!(cb.total, seg + ctx);
        let full = total_loss(&p, &q, &gt, LossWeights::default(), None).unwrap();
        assert!((full.total - (seg + ctx + tasksim_loss(&p, &q).unwrap())).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_total_vanishes() {
        let p = LogitsMap::<f64>::from_pixels(1, 2, &[&[60.0, 0.0], &[0.0, 60.0]]).unwrap();
        let gt = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        let b = total_loss(&p, &p, &gt, LossWeights::default(), None).unwrap();
        assert!(b.total < 1e-20 && b.tasksim == 0.0);
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(LossWeights::new(1.0, -0.1, 1.0).is_err());
        assert!(LossWeights::new(1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn masked_only_context_restricts_pixels() {
        let q = LogitsMap::<f64>::from_pixels(1, 2, &[&[3.0, 0.0], &[0.0, 0.0]]).unwrap();
        let gt = LabelMap::new(1, 2, vec![0, 0]).unwrap();
        let mask = HoleMask::from_vec(1, 2, vec![1, 0]).unwrap();
        let opts = LossOptions { ignore_label: None, context_masked_pixels_only: true };
        let g = total_loss_with_grad(&q, &q, &gt, LossWeights::default(), opts, Some(&mask)).unwrap();
        assert!((g.bundle.context - LN2).abs() < 1e-12);
        // The kept pixel gets no context gradient.
        assert_eq!(g.masked[0], 0.0);
        assert_eq!(g.masked[2], 0.0);
    }

    fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn loss_gradients_match_finite_differences(
            a in proptest::collection::vec(-3.0f64..3.0, 12),
            b in proptest::collection::vec(-3.0f64..3.0, 12),
            labels in proptest::collection::vec(0u8..3, 4),
            w in (0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0),
        ) {
            let weights = LossWeights::new(w.0, w.1, w.2).unwrap();
            let gt = LabelMap::new(2, 2, labels).unwrap();
            let total = |x: &[f64], y: &[f64]| {
                let p = LogitsMap::new(2, 2, 3, x.to_vec()).unwrap();
                let q = LogitsMap::new(2, 2, 3, y.to_vec()).unwrap();
                total_loss(&p, &q, &gt, weights, None).unwrap().total
            };
            let p = LogitsMap::new(2, 2, 3, a.clone()).unwrap();
            let q = LogitsMap::new(2, 2, 3, b.clone()).unwrap();
            let g = total_loss_with_grad(&p, &q, &gt, weights, LossOptions::default(), None).unwrap();
            let na = numeric_grad(|x| total(x, &b), &a);
            let nb = numeric_grad(|y| total(&a, y), &b);
            for (x, y) in g.clean.iter().zip(&na).chain(g.masked.iter().zip(&nb)) {
                prop_assert!((x - y).abs() < 1e-6, "{} vs {}", x, y);
            }
            prop_assert!((g.bundle.total - g.bundle.recombined()).abs() <= 1e-12 * g.bundle.total.max(1.0));
            prop_assert!(g.bundle.seg >= 0.0 && g.bundle.context >= 0.0 && g.bundle.tasksim >= 0.0);
        }

        #[test]
        fn tasksim_is_symmetric_and_zero_iff_equal_probabilities(
            a in proptest::collection::vec(-4.0f64..4.0, 8),
            shift in -5.0f64..5.0,
        ) {
            let p = LogitsMap::new(2, 2, 2, a.clone()).unwrap();
            // Adding the same constant to every class of a pixel keeps its softmax.
            let mut shifted = a.clone();
            for px in 0..4 {
                shifted[px] += shift;
                shifted[4 + px] += shift;
            }
            let q = LogitsMap::new(2, 2, 2, shifted).unwrap();
            prop_assert!(tasksim_loss(&p, &q).unwrap() < 1e-20);
            let mut other = a.clone();
            other[0] += 1.0;
            let r = LogitsMap::new(2, 2, 2, other).unwrap();
            prop_assert!(tasksim_loss(&p, &r).unwrap() > 0.0);
            prop_assert_eq!(tasksim_loss(&p, &r).unwrap(), tasksim_loss(&r, &p).unwrap());
        }
    }
}
