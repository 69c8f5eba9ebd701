//! Salient keypoints and their 128-byte orientation-histogram descriptors.
//!
//! Keypoints come from the saliency heatmap: its gradient magnitude is
//! averaged over 8x8 patches, patches are drawn in proportion to that average,
//! and a three-level subdivision picks strong pixels inside each drawn patch.
//! Descriptors come from the (blurred) source image around each keypoint.

use std::f64::consts::{FRAC_PI_4, TAU};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::{
    Descriptors, FrameFeatures, GradientField, Grid, Heatmap, InvariantError, Keypoint,
    SalDescriptor, SAL_DESCRIPTOR_LEN,
};

pub const PATCH_SIZE: usize = 8;
pub const BINS: usize = 8;
/// Shift applied on each side when smoothing a histogram.
pub const SMOOTHING_SHIFT: f64 = 0.3;
pub const DEFAULT_SAMPLE_COUNT: usize = 1000;
/// Added to the min-max range so the maximum lands just under 1.
pub const NORMALIZATION_EPS: f64 = 1e-12;

const REGION: isize = 16;
const BLOCK: isize = 4;
const DESCRIPTOR_SIGMA: f64 = 1.0;
const DESCRIPTOR_RADIUS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SalError {
    #[error("grid of {width}x{height} is too small for a gradient (need at least 2x2)")]
    Degenerate { width: usize, height: usize },
    #[error("image of {width}x{height} holds no full {PATCH_SIZE}x{PATCH_SIZE} patch")]
    NoPatches { width: usize, height: usize },
    #[error("image is {image:?} but heatmap is {heatmap:?}")]
    SizeMismatch {
        image: (usize, usize),
        heatmap: (usize, usize),
    },
    #[error(transparent)]
    Invariant(#[from] InvariantError),
}

/// Central differences inside, one-sided differences on the border.
/// Orientation is `atan2(gy, gx)` folded into `[0, 2pi)`, with y pointing down
/// the rows; zero-magnitude pixels get orientation 0.
pub fn gradient_field(grid: &Grid) -> Result<GradientField, SalError> {
    let (w, h) = (grid.width(), grid.height());
    if w < 2 || h < 2 {
        return Err(SalError::Degenerate {
            width: w,
            height: h,
        });
    }
    let mut magnitude = Vec::with_capacity(w * h);
    let mut orientation = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gx = diff(x, w, |i| grid.get(i, y));
            let gy = diff(y, h, |j| grid.get(x, j));
            let m = (gx * gx + gy * gy).sqrt();
            magnitude.push(m);
            orientation.push(if m == 0.0 { 0.0 } else { wrap_angle(gy.atan2(gx)) });
        }
    }
    Ok(GradientField::new(w, h, magnitude, orientation)?)
}

#[inline]
fn diff(i: usize, n: usize, at: impl Fn(usize) -> f64) -> f64 {
    if i == 0 {
        at(1) - at(0)
    } else if i == n - 1 {
        at(n - 1) - at(n - 2)
    } else {
        (at(i + 1) - at(i - 1)) / 2.0
    }
}

fn wrap_angle(a: f64) -> f64 {
    let a = if a < 0.0 { a + TAU } else { a };
    // -tiny + 2pi rounds to 2pi
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(grid: &Grid, sigma: f64, radius: usize) -> Grid {
    let kernel: Vec<f64> = {
        let raw: Vec<f64> = (-(radius as isize)..=radius as isize)
            .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    let r = radius as isize;
    let (w, h) = (grid.width(), grid.height());
    let horiz = Grid::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, kw)| kw * grid.get_clamped(x as isize + k as isize - r, y as isize))
            .sum()
    });
    Grid::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, kw)| kw * horiz.get_clamped(x as isize, y as isize + k as isize - r))
            .sum()
    })
}

/// Mean gradient magnitude per 8x8 patch and the resulting sampling
/// distribution. Trailing partial patches are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchWeightTable {
    pub cols: usize,
    pub rows: usize,
    /// Row-major, `cols * rows` entries.
    pub weights: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl PatchWeightTable {
    pub const PATCH_SIZE: usize = PATCH_SIZE;

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Top-left pixel of patch `index`.
    pub fn origin(&self, index: usize) -> (usize, usize) {
        ((index % self.cols) * PATCH_SIZE, (index / self.cols) * PATCH_SIZE)
    }

    /// Sampler over patch indices following `probabilities`.
    pub fn sampler(&self) -> PatchSampler {
        PatchSampler {
            dist: WeightedIndex::new(&self.probabilities)
                .expect("probabilities are non-negative with positive sum"),
        }
    }
}

pub struct PatchSampler {
    dist: WeightedIndex<f64>,
}

impl PatchSampler {
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        self.dist.sample(rng)
    }
}

/// `w_i = (1/64) * sum of magnitudes in patch i`, `P_i = w_i / sum(w)`.
/// A gradient-free image yields a uniform distribution.
pub fn patch_weights(grad: &GradientField) -> Result<PatchWeightTable, SalError> {
    let cols = grad.width() / PATCH_SIZE;
    let rows = grad.height() / PATCH_SIZE;
    if cols == 0 || rows == 0 {
        return Err(SalError::NoPatches {
            width: grad.width(),
            height: grad.height(),
        });
    }
    let area = (PATCH_SIZE * PATCH_SIZE) as f64;
    let mut weights = Vec::with_capacity(cols * rows);
    for pr in 0..rows {
        for pc in 0..cols {
            let mut sum = 0.0;
            for y in pr * PATCH_SIZE..(pr + 1) * PATCH_SIZE {
                for x in pc * PATCH_SIZE..(pc + 1) * PATCH_SIZE {
                    sum += grad.at(x, y).0;
                }
            }
            weights.push(sum / area);
        }
    }
    let total: f64 = weights.iter().sum();
    let probabilities = if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    };
    Ok(PatchWeightTable {
        cols,
        rows,
        weights,
        probabilities,
    })
}

/// Threshold multipliers of the mean image gradient for the 8x8, 4x4 and 2x2
/// levels of the subdivision.
pub const LEVEL_FACTORS: [f64; 3] = [1.0, 1.5, 2.0];

/// Picks strong pixels inside the patch at `origin`: the argmax of the whole
/// patch, of each 4x4 quadrant and of each 2x2 cell, each kept only if it
/// beats `mean_magnitude` times the level factor. Duplicates are dropped.
pub fn select_in_patch(
    grad: &GradientField,
    origin: (usize, usize),
    mean_magnitude: f64,
) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (level, factor) in LEVEL_FACTORS.iter().enumerate() {
        let cell = PATCH_SIZE >> level;
        let threshold = mean_magnitude * factor;
        for cy in 0..(PATCH_SIZE / cell) {
            for cx in 0..(PATCH_SIZE / cell) {
                let (x0, y0) = (origin.0 + cx * cell, origin.1 + cy * cell);
                let mut best: Option<(f64, usize, usize)> = None;
                for y in y0..y0 + cell {
                    for x in x0..x0 + cell {
                        let m = grad.at(x, y).0;
                        if best.map_or(true, |(bm, _, _)| m > bm) {
                            best = Some((m, x, y));
                        }
                    }
                }
                if let Some((m, x, y)) = best {
                    if m > threshold && !out.contains(&(x, y)) {
                        out.push((x, y));
                    }
                }
            }
        }
    }
    out
}

/// Draws `count` patches i.i.d. from the table and runs [`select_in_patch`]
/// on each distinct patch in draw order, returning at most `count` keypoints.
pub fn sample_keypoints(
    grad: &GradientField,
    table: &PatchWeightTable,
    count: usize,
    seed: u64,
) -> Vec<Keypoint> {
    if count == 0 || table.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = table.sampler();
    let g = grad.mean_magnitude();
    let mut visited = vec![false; table.len()];
    let mut out = Vec::new();
    for _ in 0..count {
        let patch = sampler.draw(&mut rng);
        if std::mem::replace(&mut visited[patch], true) {
            continue;
        }
        for (x, y) in select_in_patch(grad, table.origin(patch), g) {
            out.push(Keypoint::new(x as f32, y as f32).expect("pixel coordinates"));
            if out.len() == count {
                return out;
            }
        }
    }
    out
}

/// Eight orientation bins of accumulated gradient magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OrientationHistogram {
    pub bins: [f64; BINS],
}

impl OrientationHistogram {
    /// `b = floor(orientation / (pi/4))`.
    #[inline]
    pub fn bin_of(orientation: f64) -> usize {
        ((orientation / FRAC_PI_4) as usize).min(BINS - 1)
    }

    pub fn add(&mut self, magnitude: f64, orientation: f64) {
        if magnitude > 0.0 {
            self.bins[Self::bin_of(orientation)] += magnitude;
        }
    }

    pub fn mass(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// `H[i] = (c(i - w) + c(i + w)) / 2` with `c` the periodic Catmull-Rom
    /// interpolant through the bins.
    pub fn smoothed(&self, shift: f64) -> OrientationHistogram {
        let mut bins = [0.0; BINS];
        for (i, b) in bins.iter_mut().enumerate() {
            let i = i as f64;
            *b = 0.5 * (self.cubic(i - shift) + self.cubic(i + shift));
        }
        OrientationHistogram { bins }
    }

    /// Periodic Catmull-Rom interpolation at real position `x`.
    pub fn cubic(&self, x: f64) -> f64 {
        let base = x.floor();
        let t = x - base;
        let at = |k: i64| self.bins[(base as i64 + k).rem_euclid(BINS as i64) as usize];
        let (p0, p1, p2, p3) = (at(-1), at(0), at(1), at(2));
        0.5 * (2.0 * p1
            + (p2 - p0) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
            + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t * t * t)
    }
}

/// Sixteen raw (unsmoothed) block histograms of the 16x16 region around
/// `(cx, cy)`, blocks in row-major order. Out-of-image pixels clamp to the edge.
pub fn block_histograms(grad: &GradientField, cx: isize, cy: isize) -> [OrientationHistogram; 16] {
    let mut out = [OrientationHistogram::default(); 16];
    let half = REGION / 2;
    for dy in 0..REGION {
        for dx in 0..REGION {
            let (m, o) = grad.at_clamped(cx - half + dx, cy - half + dy);
            let block = (dy / BLOCK) * (REGION / BLOCK) + dx / BLOCK;
            out[block as usize].add(m, o);
        }
    }
    out
}

/// Min-max scales raw values into `{0, ..., 255}`; a flat input yields zeros.
pub fn quantize_descriptor(raw: &[f64; SAL_DESCRIPTOR_LEN]) -> SalDescriptor {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut bytes = [0u8; SAL_DESCRIPTOR_LEN];
    if max > min {
        let range = max - min + NORMALIZATION_EPS;
        for (b, v) in bytes.iter_mut().zip(raw) {
            *b = ((v - min) / range * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
    }
    SalDescriptor::from_bytes(bytes)
}

/// Computes descriptors for many keypoints of one image, blurring and
/// differentiating the image once.
#[derive(Debug, Clone)]
pub struct DescriptorExtractor {
    grad: GradientField,
}

impl DescriptorExtractor {
    pub fn new(image: &Grid) -> Result<Self, SalError> {
        let blurred = gaussian_blur(image, DESCRIPTOR_SIGMA, DESCRIPTOR_RADIUS);
        Ok(Self {
            grad: gradient_field(&blurred)?,
        })
    }

    pub fn gradient(&self) -> &GradientField {
        &self.grad
    }

    pub fn raw(&self, k: &Keypoint) -> Result<[f64; SAL_DESCRIPTOR_LEN], SalError> {
        k.check_bounds(self.grad.width(), self.grad.height())?;
        let (cx, cy) = (k.x().round() as isize, k.y().round() as isize);
        let mut raw = [0.0; SAL_DESCRIPTOR_LEN];
        for (b, hist) in block_histograms(&self.grad, cx, cy).iter().enumerate() {
            let smooth = hist.smoothed(SMOOTHING_SHIFT);
            raw[b * BINS..(b + 1) * BINS].copy_from_slice(&smooth.bins);
        }
        Ok(raw)
    }

    pub fn describe(&self, k: &Keypoint) -> Result<SalDescriptor, SalError> {
        Ok(quantize_descriptor(&self.raw(k)?))
    }
}

/// One-off descriptor for a single keypoint.
pub fn salient_descriptor(image: &Grid, k: &Keypoint) -> Result<SalDescriptor, SalError> {
    DescriptorExtractor::new(image)?.describe(k)
}

/// Heatmap gradient -> patch weights -> sampled keypoints -> descriptors.
pub fn salient_frame_features(
    image: &Grid,
    heatmap: &Heatmap,
    frame_id: u64,
    count: usize,
    seed: u64,
) -> Result<FrameFeatures, SalError> {
    if (image.width(), image.height()) != (heatmap.width(), heatmap.height()) {
        return Err(SalError::SizeMismatch {
            image: (image.width(), image.height()),
            heatmap: (heatmap.width(), heatmap.height()),
        });
    }
    let grad = gradient_field(heatmap.grid())?;
    let table = patch_weights(&grad)?;
    let keypoints = sample_keypoints(&grad, &table, count, seed);
    let extractor = DescriptorExtractor::new(image)?;
    let descriptors = keypoints
        .iter()
        .map(|k| extractor.describe(k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FrameFeatures::new(frame_id, keypoints, Descriptors::Salient(descriptors))?)
}
