//! Free-form occlusion masks made of random streaks and holes.
//!
//! A mask is a binary grid where `1` keeps a pixel and `0` removes it.
//! Masks are drawn by compositing thick random-walk strokes and filled discs,
//! one shape at a time, until the masked fraction reaches a target drawn
//! uniformly from the requested coverage band. An attempt that overshoots the
//! band or runs out of shapes is discarded and redrawn from a derived sub-seed.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::ImageTensor;

static MASKS_GENERATED: AtomicUsize = AtomicUsize::new(0);

/// Number of [`generate_mask`] calls made by this process.
pub fn masks_generated() -> usize {
    MASKS_GENERATED.load(Ordering::Relaxed)
}

/// Binary keep/remove grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HoleMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl HoleMask {
    pub fn ones(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![1; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                context: "mask buffer",
                expected: (height, width, 1),
                found: (data.len(), 1, 1),
            });
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidConfig("mask cells must be 0 or 1".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn masked_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0).count()
    }

    /// Share of removed (zero) cells.
    pub fn masked_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.masked_count() as f64 / self.data.len() as f64
    }
}

/// Share of removed cells in `mask`.
pub fn masked_fraction(mask: &HoleMask) -> f64 {
    mask.masked_fraction()
}

/// Closed interval of masked-pixel fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageBand {
    pub low: f64,
    pub high: f64,
}

impl CoverageBand {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low > high {
            return Err(Error::InvalidConfig(alloc::format!(
                "coverage band [{low}, {high}] must satisfy 0 <= low <= high <= 1"
            )));
        }
        Ok(Self { low, high })
    }

    /// `[center - half_width, center + half_width]` clamped to `[0, 1]`.
    pub fn around(center: f64, half_width: f64) -> Self {
        let low = (center - half_width).clamp(0.0, 1.0);
        let high = (center + half_width).clamp(0.0, 1.0);
        Self { low, high }
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.low && f <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimeKind {
    Low,
    High,
    /// Any other band, e.g. a fixed corruption level for robustness sweeps.
    Custom,
}

/// Named coverage band used during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskRegime {
    pub kind: RegimeKind,
    pub band: CoverageBand,
}

impl MaskRegime {
    /// HIGH must admit fractions above one half; LOW must stay below one half.
    pub fn new(kind: RegimeKind, band: CoverageBand) -> Result<Self> {
        match kind {
            RegimeKind::High if band.high <= 0.5 => Err(Error::InvalidConfig(alloc::format!(
                "HIGH band [{}, {}] must include fractions above 0.5",
                band.low,
                band.high
            ))),
            RegimeKind::Low if band.high >= 0.5 => Err(Error::InvalidConfig(alloc::format!(
                "LOW band [{}, {}] must lie below 0.5",
                band.low,
                band.high
            ))),
            _ => Ok(Self { kind, band }),
        }
    }

    pub fn high() -> Self {
        Self { kind: RegimeKind::High, band: CoverageBand { low: 0.50, high: 0.75 } }
    }

    pub fn low() -> Self {
        Self { kind: RegimeKind::Low, band: CoverageBand { low: 0.10, high: 0.35 } }
    }

    pub fn custom(band: CoverageBand) -> Self {
        Self { kind: RegimeKind::Custom, band }
    }

    /// A LOW/HIGH pair is usable only if the LOW band ends before the HIGH band starts.
    pub fn check_separated(low: &MaskRegime, high: &MaskRegime) -> Result<()> {
        if low.band.high < high.band.low {
            Ok(())
        } else {
            Err(Error::InvalidConfig("LOW band overlaps HIGH band".into()))
        }
    }
}

/// Shape parameters for mask drawing. Counts are upper bounds per attempt:
/// drawing stops as soon as the target coverage is met.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskGenConfig {
    pub num_strokes_range: (u32, u32),
    pub stroke_width_range: (f64, f64),
    pub num_holes_range: (u32, u32),
    pub hole_radius_range: (f64, f64),
    pub max_resample_attempts: u32,
}

impl Default for MaskGenConfig {
    fn default() -> Self {
        Self {
            num_strokes_range: (4, 16),
            stroke_width_range: (3.0, 9.0),
            num_holes_range: (2, 12),
            hole_radius_range: (2.0, 9.0),
            max_resample_attempts: 200,
        }
    }
}

impl MaskGenConfig {
    /// Nothing is ever drawn.
    pub fn empty() -> Self {
        Self {
            num_strokes_range: (0, 0),
            stroke_width_range: (0.0, 0.0),
            num_holes_range: (0, 0),
            hole_radius_range: (0.0, 0.0),
            max_resample_attempts: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_u = |(a, b): (u32, u32)| a <= b;
        let ok_f = |(a, b): (f64, f64)| a >= 0.0 && a <= b && b.is_finite();
        if !ok_u(self.num_strokes_range) || !ok_u(self.num_holes_range) {
            return Err(Error::InvalidConfig("mask shape count ranges must be non-empty".into()));
        }
        if !ok_f(self.stroke_width_range) || !ok_f(self.hole_radius_range) {
            return Err(Error::InvalidConfig(
                "mask size ranges must be non-empty with non-negative bounds".into(),
            ));
        }
        if self.max_resample_attempts == 0 {
            return Err(Error::InvalidConfig("max_resample_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

// Random-walk stroke geometry.
const STROKE_SEGMENTS: (u32, u32) = (8, 24);
const MAX_TURN: f64 = PI / 3.0;
const SEGMENT_LENGTH: (f64, f64) = (0.04, 0.12);

struct Canvas {
    height: usize,
    width: usize,
    cells: Vec<u8>,
    masked: usize,
}

impl Canvas {
    fn new(height: usize, width: usize) -> Self {
        Self { height, width, cells: vec![1; height * width], masked: 0 }
    }

    fn fraction(&self) -> f64 {
        self.masked as f64 / self.cells.len() as f64
    }

    /// Clears every cell whose centre lies within `radius` of segment `a`-`b`.
    fn capsule(&mut self, a: (f64, f64), b: (f64, f64), radius: f64) {
        let (x0, x1) = (a.0.min(b.0) - radius, a.0.max(b.0) + radius);
        let (y0, y1) = (a.1.min(b.1) - radius, a.1.max(b.1) + radius);
        let clamp_x = |v: f64| (v.floor().max(0.0) as usize).min(self.width - 1);
        let clamp_y = |v: f64| (v.floor().max(0.0) as usize).min(self.height - 1);
        if x1 < 0.0 || y1 < 0.0 || x0 > self.width as f64 || y0 > self.height as f64 {
            return;
        }
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let r2 = radius * radius;
        for y in clamp_y(y0)..=clamp_y(y1) {
            for x in clamp_x(x0)..=clamp_x(x1) {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (ex, ey) = (a.0 + t * dx - px, a.1 + t * dy - py);
                if ex * ex + ey * ey <= r2 {
                    let cell = &mut self.cells[y * self.width + x];
                    if *cell == 1 {
                        *cell = 0;
                        self.masked += 1;
                    }
                }
            }
        }
    }

    fn stroke<R: Rng>(&mut self, rng: &mut R, width_range: (f64, f64)) {
        let (w, h) = (self.width as f64, self.height as f64);
        let scale = w.max(h);
        let mut p = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        let mut angle = rng.random_range(0.0..2.0 * PI);
        let radius = 0.5 * uniform(rng, width_range);
        let segments = rng.random_range(STROKE_SEGMENTS.0..=STROKE_SEGMENTS.1);
        for _ in 0..segments {
            angle += rng.random_range(-MAX_TURN..=MAX_TURN);
            let len = scale * uniform(rng, SEGMENT_LENGTH);
            let mut q = (p.0 + len * angle.cos(), p.1 + len * angle.sin());
            // Bounce off the borders so strokes stay on the canvas.
            if !(0.0..w).contains(&q.0) {
                angle = PI - angle;
                q.0 = q.0.clamp(0.0, w);
            }
            if !(0.0..h).contains(&q.1) {
                angle = -angle;
                q.1 = q.1.clamp(0.0, h);
            }
            self.capsule(p, q, radius);
            p = q;
        }
    }

    fn hole<R: Rng>(&mut self, rng: &mut R, radius_range: (f64, f64)) {
        let c = (
            rng.random_range(0.0..self.width as f64),
            rng.random_range(0.0..self.height as f64),
        );
        self.capsule(c, c, uniform(rng, radius_range));
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws a mask whose masked fraction lies inside `regime.band`.
///
/// Identical arguments always produce the identical mask.
pub fn generate_mask(
    height: usize,
    width: usize,
    regime: &MaskRegime,
    cfg: &MaskGenConfig,
    seed: u64,
) -> Result<HoleMask> {
    MASKS_GENERATED.fetch_add(1, Ordering::Relaxed);
    if height < 8 || width < 8 {
        return Err(Error::InvalidConfig(alloc::format!(
            "mask must be at least 8x8, got {height}x{width}"
        )));
    }
    cfg.validate()?;
    let band = regime.band;
    for attempt in 0..cfg.max_resample_attempts {
        let mut rng = rng_from_seed(derive_seed(&[seed, u64::from(attempt)]));
        let target = uniform(&mut rng, (band.low, band.high));
        let strokes = rng.random_range(cfg.num_strokes_range.0..=cfg.num_strokes_range.1);
        let holes = rng.random_range(cfg.num_holes_range.0..=cfg.num_holes_range.1);
        let mut order: Vec<bool> = (0..strokes).map(|_| true).chain((0..holes).map(|_| false)).collect();
        order.shuffle(&mut rng);

        let mut canvas = Canvas::new(height, width);
        let mut shapes = order.into_iter();
        while canvas.fraction() < target {
            match shapes.next() {
                Some(true) => canvas.stroke(&mut rng, cfg.stroke_width_range),
                Some(false) => canvas.hole(&mut rng, cfg.hole_radius_range),
                None => break,
            }
        }
        if band.contains(canvas.fraction()) {
            return Ok(HoleMask { height, width, data: canvas.cells });
        }
    }
    Err(Error::CoverageUnreachable {
        low: band.low,
        high: band.high,
        attempts: cfg.max_resample_attempts,
    })
}

/// Zeroes every channel of each removed pixel.
pub fn apply_mask(image: &ImageTensor, mask: &HoleMask) -> Result<ImageTensor> {
    let (h, w, c) = image.dims();
    if (h, w) != (mask.height, mask.width) {
        return Err(Error::ShapeMismatch {
            context: "apply_mask",
            expected: (h, w, c),
            found: (mask.height, mask.width, c),
        });
    }
    let mut out = image.clone();
    for (px, &keep) in out.data_mut().chunks_exact_mut(c).zip(&mask.data) {
        if keep == 0 {
            px.fill(0.0);
        }
    }
    Ok(out)
}
