//! Synthetic segmentation datasets and split bookkeeping.
//!
//! Two generators mirror the hard cases segmentation models struggle with:
//!
//! * [`synth_binary_shapes`]: textured foreground blobs of varying scale and
//!   colour on a textured background. `ambiguity` blends the two textures
//!   near the object boundary until the edge is hard to see.
//! * [`synth_multiclass_scenes`]: cluttered scenes of overlapping shapes whose
//!   expected pixel share decays geometrically with the class index, under
//!   varying illumination.
//!
//! Every generator is a pure function of its arguments. Each sample stores the
//! [`Layout`] it was drawn from; rendering the layout reproduces the label map.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, hash_str, rng_from_seed, ChaCha8Rng};
use crate::tensor::{ImageTensor, Label, LabelMap};

/// One labelled image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageTensor,
    pub label: LabelMap,
    pub id: String,
    /// Shape layout for generated samples.
    pub layout: Option<Layout>,
}

/// Train/val/test partition with class statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub num_classes: usize,
    pub ignore_label: Option<Label>,
    /// Pixel share of each class over all non-ignored pixels of all splits.
    pub class_frequencies: Vec<f64>,
}

impl DatasetSplit {
    /// Validates labels and id uniqueness and computes class frequencies.
    pub fn new(
        train: Vec<Sample>,
        val: Vec<Sample>,
        test: Vec<Sample>,
        num_classes: usize,
        ignore_label: Option<Label>,
    ) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let mut counts = vec![0u64; num_classes];
        for s in train.iter().chain(&val).chain(&test) {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate sample id {}", s.id)));
            }
            if (s.image.height(), s.image.width()) != (s.label.height(), s.label.width()) {
                return Err(Error::ShapeMismatch {
                    context: "sample image vs label",
                    expected: s.image.dims(),
                    found: (s.label.height(), s.label.width(), s.image.channels()),
                });
            }
            s.label.validate(num_classes, ignore_label)?;
            for &v in s.label.data() {
                if Some(v) != ignore_label {
                    counts[usize::from(v)] += 1;
                }
            }
        }
        if ids.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let total: u64 = counts.iter().sum();
        let class_frequencies =
            counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect();
        Ok(Self { train, val, test, num_classes, ignore_label, class_frequencies })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Split sizes for `n` items: `floor(0.7 n)` train, `floor(0.15 n)` val, the
/// remainder test. Ten items split 7/1/2.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = n * 7 / 10;
    let val = n * 15 / 100;
    (train, val, n - train - val)
}

/// Deterministic split of file stems: stems are ordered by their FNV-1a hash
/// (ties by name) and cut with [`split_counts`].
pub fn split_by_stem_hash(stems: &[String]) -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut order: Vec<&String> = stems.iter().collect();
    order.sort_by(|a, b| hash_str(a).cmp(&hash_str(b)).then_with(|| a.cmp(b)));
    let (tr, va, _) = split_counts(order.len());
    let train = order[..tr].iter().map(|s| (*s).clone()).collect();
    let val = order[tr..tr + va].iter().map(|s| (*s).clone()).collect();
    let test = order[tr + va..].iter().map(|s| (*s).clone()).collect();
    (train, val, test)
}

fn split_samples(mut samples: Vec<Sample>) -> (Vec<Sample>, Vec<Sample>, Vec<Sample>) {
    let (tr, va, _) = split_counts(samples.len());
    let test = samples.split_off(tr + va);
    let val = samples.split_off(tr);
    (samples, val, test)
}

/// Geometric primitive in pixel coordinates (pixel centres at `+0.5`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Disc with a radius modulated by three angular harmonics.
    Blob { cx: f64, cy: f64, radius: f64, harmonics: [(f64, f64); 3] },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Rect { cx: f64, cy: f64, half_w: f64, half_h: f64, angle: f64 },
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Blob { cx, cy, radius, harmonics } => {
                let (dx, dy) = (x - cx, y - cy);
                let theta = dy.atan2(dx);
                let scale: f64 = 1.0
                    + harmonics
                        .iter()
                        .enumerate()
                        .map(|(j, &(amp, phase))| amp * ((j as f64 + 2.0) * theta + phase).cos())
                        .sum::<f64>();
                dx * dx + dy * dy <= (radius * scale).powi(2)
            }
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (u, v) = rotate(x - cx, y - cy, -angle);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rect { cx, cy, half_w, half_h, angle } => {
                let (u, v) = rotate(x - cx, y - cy, -angle);
                u.abs() <= half_w && v.abs() <= half_h
            }
        }
    }
}

fn rotate(x: f64, y: f64, a: f64) -> (f64, f64) {
    let (s, c) = a.sin_cos();
    (c * x - s * y, s * x + c * y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedShape {
    pub class: Label,
    pub shape: Shape,
}

/// Background class plus shapes painted in order (later shapes on top).
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
    pub background: Label,
    pub shapes: Vec<PlacedShape>,
}

impl Layout {
    pub fn render(&self) -> LabelMap {
        let mut map = LabelMap::filled(self.height, self.width, self.background);
        for y in 0..self.height {
            for x in 0..self.width {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if let Some(s) = self.shapes.iter().rev().find(|s| s.shape.contains(px, py)) {
                    map.set(y, x, s.class);
                }
            }
        }
        map
    }
}

/// Chamfer distance (unit and diagonal steps) from each pixel to the nearest
/// pixel where `target` holds.
fn distance_to(map: &LabelMap, target: impl Fn(Label) -> bool) -> Vec<f64> {
    let (h, w) = (map.height(), map.width());
    let big = (h + w) as f64 * 2.0;
    let mut d: Vec<f64> = map.data().iter().map(|&v| if target(v) { 0.0 } else { big }).collect();
    let diag = core::f64::consts::SQRT_2;
    for y in 0..h {
        for x in 0..w {
            let mut best = d[y * w + x];
            if x > 0 {
                best = best.min(d[y * w + x - 1] + 1.0);
            }
            if y > 0 {
                best = best.min(d[(y - 1) * w + x] + 1.0);
                if x > 0 {
                    best = best.min(d[(y - 1) * w + x - 1] + diag);
                }
                if x + 1 < w {
                    best = best.min(d[(y - 1) * w + x + 1] + diag);
                }
            }
            d[y * w + x] = best;
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let mut best = d[y * w + x];
            if x + 1 < w {
                best = best.min(d[y * w + x + 1] + 1.0);
            }
            if y + 1 < h {
                best = best.min(d[(y + 1) * w + x] + 1.0);
                if x + 1 < w {
                    best = best.min(d[(y + 1) * w + x + 1] + diag);
                }
                if x > 0 {
                    best = best.min(d[(y + 1) * w + x - 1] + diag);
                }
            }
            d[y * w + x] = best;
        }
    }
    d
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    base.map(|c| c + rng.random_range(-amount..=amount))
}

/// Random texture: an oriented sinusoid plus i.i.d. noise.
struct Texture {
    color: [f64; 3],
    freq: (f64, f64),
    phase: f64,
    stripe: f64,
    noise: f64,
}

impl Texture {
    fn sample(&self, rng: &mut ChaCha8Rng, x: f64, y: f64) -> [f64; 3] {
        let s = self.stripe * (self.freq.0 * x + self.freq.1 * y + self.phase).sin();
        self.color.map(|c| c + s + rng.random_range(-self.noise..=self.noise))
    }
}

fn random_texture(rng: &mut ChaCha8Rng, color: [f64; 3], period: (f64, f64), stripe: f64, noise: f64) -> Texture {
    let angle = rng.random_range(0.0..PI);
    let period = rng.random_range(period.0..=period.1);
    let k = 2.0 * PI / period;
    Texture {
        color,
        freq: (k * angle.cos(), k * angle.sin()),
        phase: rng.random_range(0.0..2.0 * PI),
        stripe,
        noise,
    }
}

const BINARY_TAG: u64 = 0xB1;
const MULTI_TAG: u64 = 0x3C;

fn check_n(n: usize) -> Result<()> {
    if n < 10 {
        return Err(Error::InvalidConfig(format!("dataset needs at least 10 samples, got {n}")));
    }
    Ok(())
}

fn check_size(size: usize) -> Result<()> {
    if size < 8 {
        return Err(Error::InvalidConfig(format!("image size must be at least 8, got {size}")));
    }
    Ok(())
}

fn blob(rng: &mut ChaCha8Rng, cx: f64, cy: f64, radius: f64, wobble: f64) -> Shape {
    let mut harmonics = [(0.0, 0.0); 3];
    for h in &mut harmonics {
        *h = (rng.random_range(0.0..=wobble), rng.random_range(0.0..2.0 * PI));
    }
    Shape::Blob { cx, cy, radius, harmonics }
}

/// Binary (background = 0, object = 1) dataset of `size × size` RGB images.
pub fn synth_binary_shapes(n: usize, size: usize, ambiguity: f64, seed: u64) -> Result<DatasetSplit> {
    check_n(n)?;
    check_size(size)?;
    if !(0.0..=1.0).contains(&ambiguity) {
        return Err(Error::InvalidConfig(format!("ambiguity {ambiguity} outside [0, 1]")));
    }
    let samples = (0..n)
        .map(|i| binary_sample(size, ambiguity, seed, i))
        .collect::<Vec<_>>();
    let (train, val, test) = split_samples(samples);
    DatasetSplit::new(train, val, test, 2, None)
}

fn binary_sample(size: usize, ambiguity: f64, seed: u64, index: usize) -> Sample {
    let mut rng = rng_from_seed(derive_seed(&[seed, BINARY_TAG, index as u64]));
    let s = size as f64;
    let blobs = rng.random_range(1..=3);
    let shapes = (0..blobs)
        .map(|_| {
            let radius = s * rng.random_range(0.07..=0.2);
            let cx = rng.random_range(radius * 0.6..=s - radius * 0.6);
            let cy = rng.random_range(radius * 0.6..=s - radius * 0.6);
            PlacedShape { class: 1, shape: blob(&mut rng, cx, cy, radius, 0.18) }
        })
        .collect();
    let layout = Layout { height: size, width: size, background: 0, shapes };
    let label = layout.render();

    let bg_color = jitter(&mut rng, [0.80, 0.68, 0.78], 0.08);
    let fg_color = jitter(&mut rng, [0.45, 0.22, 0.50], 0.10);
    let bg = random_texture(&mut rng, bg_color, (10.0, 24.0), 0.04, 0.06);
    let fg = random_texture(&mut rng, fg_color, (3.0, 6.0), 0.07, 0.06);

    // Foreground weight near the boundary shrinks toward one half as
    // ambiguity grows, over a band whose width grows with it.
    let band = 1.0 + 8.0 * ambiguity;
    let inside = distance_to(&label, |v| v == 0);
    let outside = distance_to(&label, |v| v == 1);
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let p = y * size + x;
            let t = if label.get(y, x) == 1 {
                let r = (inside[p] / band).min(1.0);
                1.0 - ambiguity * 0.5 * (1.0 - r)
            } else {
                let r = ((outside[p] - 1.0).max(0.0) / band).min(1.0);
                ambiguity * 0.5 * (1.0 - r)
            };
            let (fx, fy) = (x as f64, y as f64);
            let a = bg.sample(&mut rng, fx, fy);
            let b = fg.sample(&mut rng, fx, fy);
            for c in 0..3 {
                data.push(((1.0 - t) * a[c] + t * b[c]).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Sample {
        image: ImageTensor::new(size, size, 3, data).expect("sized buffer"),
        label,
        id: format!("binary-{seed}-{index:05}"),
        layout: Some(layout),
    }
}

/// Base colour of class `k` in multi-class scenes.
fn class_color(k: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 8] = [
        [0.50, 0.50, 0.50],
        [0.80, 0.32, 0.28],
        [0.30, 0.66, 0.34],
        [0.30, 0.38, 0.80],
        [0.82, 0.76, 0.30],
        [0.66, 0.34, 0.74],
        [0.30, 0.74, 0.74],
        [0.86, 0.56, 0.26],
    ];
    if k < PALETTE.len() {
        return PALETTE[k];
    }
    // Golden-angle hues for larger label sets.
    let hue = (k as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.25 + 0.55 * r, 0.25 + 0.55 * g, 0.25 + 0.55 * b]
}

/// Expected pixel share of each class: proportional to `imbalance^-k`.
pub fn target_shares(num_classes: usize, imbalance: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..num_classes).map(|k| imbalance.powi(-(k as i32))).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

/// Multi-class dataset of cluttered scenes (`num_classes ≥ 4`, class 0 is
/// the background).
pub fn synth_multiclass_scenes(
    n: usize,
    size: usize,
    num_classes: usize,
    imbalance: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    check_n(n)?;
    check_size(size)?;
    if !(4..=255).contains(&num_classes) {
        return Err(Error::InvalidConfig(format!("num_classes must be in 4..=255, got {num_classes}")));
    }
    if !(imbalance >= 1.0 && imbalance.is_finite()) {
        return Err(Error::InvalidConfig(format!("imbalance must be >= 1, got {imbalance}")));
    }
    let shares = target_shares(num_classes, imbalance);
    let samples = (0..n)
        .map(|i| multiclass_sample(size, num_classes, &shares, seed, i))
        .collect::<Vec<_>>();
    let (train, val, test) = split_samples(samples);
    DatasetSplit::new(train, val, test, num_classes, None)
}

fn random_shape(rng: &mut ChaCha8Rng, s: f64, a: f64) -> Shape {
    let aspect: f64 = rng.random_range(0.5..=2.0);
    let cx = rng.random_range(0.0..s);
    let cy = rng.random_range(0.0..s);
    let angle = rng.random_range(0.0..PI);
    match rng.random_range(0..3) {
        0 => blob(rng, cx, cy, (a / PI).sqrt(), 0.15),
        1 => {
            let rx = (a * aspect / PI).sqrt();
            Shape::Ellipse { cx, cy, rx, ry: a / (PI * rx), angle }
        }
        _ => {
            let half_w = 0.5 * (a * aspect).sqrt();
            Shape::Rect { cx, cy, half_w, half_h: a / (4.0 * half_w), angle }
        }
    }
}

fn multiclass_sample(size: usize, num_classes: usize, shares: &[f64], seed: u64, index: usize) -> Sample {
    let mut rng = rng_from_seed(derive_seed(&[seed, MULTI_TAG, index as u64]));
    let s = size as f64;
    let area = s * s;
    // Rare classes are placed first and every later shape goes underneath,
    // so each class's visible area can be steered towards its share.
    let mut covered = vec![false; size * size];
    let mut shapes = Vec::new();
    for k in (1..num_classes).rev() {
        let target = shares[k] * area * rng.random_range(0.7..=1.3);
        let mut visible = 0.0;
        for _ in 0..6 {
            if visible >= 0.9 * target {
                break;
            }
            let free = covered.iter().filter(|&&c| !c).count() as f64 / area;
            if free < 0.02 {
                break;
            }
            let mut a = (target - visible) / free;
            if target > 0.05 * area && visible == 0.0 {
                a *= rng.random_range(0.4..=0.8);
            }
            let shape = random_shape(&mut rng, s, a);
            for y in 0..size {
                for x in 0..size {
                    let i = y * size + x;
                    if !covered[i] && shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        covered[i] = true;
                        visible += 1.0;
                    }
                }
            }
            shapes.insert(0, PlacedShape { class: k as Label, shape });
        }
    }
    let layout = Layout { height: size, width: size, background: 0, shapes };
    let label = layout.render();

    let textures: Vec<Texture> = (0..num_classes)
        .map(|k| {
            let color = jitter(&mut rng, class_color(k), 0.06);
            // Odd classes are striped, even ones speckled.
            let (stripe, noise) = if k % 2 == 1 { (0.10, 0.05) } else { (0.02, 0.10) };
            random_texture(&mut rng, color, (3.0, 7.0), stripe, noise)
        })
        .collect();
    // Illumination: a global gain and a linear shading ramp.
    let gain = rng.random_range(0.7..=1.15);
    let ramp_angle = rng.random_range(0.0..2.0 * PI);
    let ramp = rng.random_range(0.0..=0.25);
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let u = ((fx / s - 0.5) * ramp_angle.cos() + (fy / s - 0.5) * ramp_angle.sin()) * ramp;
            let texel = textures[usize::from(label.get(y, x))].sample(&mut rng, fx, fy);
            for c in texel {
                data.push((c * (gain + u)).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Sample {
        image: ImageTensor::new(size, size, 3, data).expect("sized buffer"),
        label,
        id: format!("scene-{seed}-{index:05}"),
        layout: Some(layout),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_floor_rule() {
        assert_eq!(split_counts(10), (7, 1, 2));
        assert_eq!(split_counts(100), (70, 15, 15));
        assert_eq!(split_counts(300), (210, 45, 45));
        assert_eq!(split_counts(7), (4, 1, 2));
    }

    #[test]
    fn stem_hash_split_is_complete_and_disjoint() {
        let stems: Vec<String> = (0..10).map(|i| format!("img{i}")).collect();
        let (a, b, c) = split_by_stem_hash(&stems);
        assert_eq!((a.len(), b.len(), c.len()), (7, 1, 2));
        let mut all: Vec<String> = a.into_iter().chain(b).chain(c).collect();
        all.sort();
        let mut want = stems.clone();
        want.sort();
        assert_eq!(all, want);
        // Input order does not matter.
        let mut rev = stems.clone();
        rev.reverse();
        assert_eq!(split_by_stem_hash(&rev), split_by_stem_hash(&stems));
    }

    #[test]
    fn binary_dataset_contract() {
        let d = synth_binary_shapes(100, 64, 0.0, 0).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (70, 15, 15));
        for s in d.all() {
            let fg = s.label.data().iter().filter(|&&v| v == 1).count();
            assert!(fg > 0 && fg < 64 * 64, "{} has {} foreground pixels", s.id, fg);
            assert_eq!(s.layout.as_ref().unwrap().render(), s.label);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!((d.class_frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(synth_binary_shapes(12, 32, 0.3, 4).unwrap(), synth_binary_shapes(12, 32, 0.3, 4).unwrap());
        assert_ne!(synth_binary_shapes(12, 32, 0.3, 4).unwrap(), synth_binary_shapes(12, 32, 0.3, 5).unwrap());
        assert_eq!(
            synth_multiclass_scenes(10, 32, 5, 2.0, 1).unwrap(),
            synth_multiclass_scenes(10, 32, 5, 2.0, 1).unwrap()
        );
    }

    #[test]
    fn preconditions() {
        assert!(synth_binary_shapes(9, 64, 0.0, 0).is_err());
        assert!(synth_binary_shapes(10, 64, 1.5, 0).is_err());
        assert!(synth_multiclass_scenes(10, 64, 3, 2.0, 0).is_err());
        assert!(synth_multiclass_scenes(10, 64, 5, 0.5, 0).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let d = synth_binary_shapes(10, 16, 0.0, 0).unwrap();
        let mut train = d.train.clone();
        train.push(d.train[0].clone());
        assert!(DatasetSplit::new(train, d.val, d.test, 2, None).is_err());
    }

    #[test]
    fn shapes_contain_their_centres() {
        let shapes = [
            Shape::Ellipse { cx: 5.0, cy: 5.0, rx: 3.0, ry: 1.0, angle: 0.3 },
            Shape::Rect { cx: 5.0, cy: 5.0, half_w: 2.0, half_h: 1.0, angle: 1.0 },
            Shape::Blob { cx: 5.0, cy: 5.0, radius: 2.0, harmonics: [(0.1, 0.0); 3] },
        ];
        for s in shapes {
            assert!(s.contains(5.0, 5.0));
            assert!(!s.contains(20.0, 5.0));
        }
    }

    #[test]
    fn target_shares_decay() {
        let s = target_shares(4, 2.0);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s[0] / s[1] - 2.0).abs() < 1e-12);
        assert!(target_shares(4, 1.0).iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn chamfer_distances() {
        let m = LabelMap::new(1, 5, vec![1, 0, 0, 0, 1]).unwrap();
        assert_eq!(distance_to(&m, |v| v == 1), vec![0.0, 1.0, 2.0, 1.0, 0.0]);
    }
}
