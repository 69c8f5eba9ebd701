//! Classical stand-ins for the neural feature and saliency backends.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::salient::{gaussian_blur, gradient_field, DescriptorExtractor, SalError};
use crate::types::{
    Descriptors, FrameFeatures, GeomDescriptor, Grid, Heatmap, InvariantError, Keypoint,
    DEFAULT_GEOM_DESCRIPTOR_LEN, SAL_DESCRIPTOR_LEN,
};

const HARRIS_WINDOW_SIGMA: f64 = 1.0;
const HARRIS_WINDOW_RADIUS: usize = 2;
const SALIENCY_SIGMA: f64 = 2.0;
const SALIENCY_RADIUS: usize = 6;
/// Corners closer than this to the border are skipped.
const BORDER: usize = 3;

#[derive(Debug, Error)]
pub enum FallbackError {
    #[error("geometric descriptor length {0} is shorter than {SAL_DESCRIPTOR_LEN}")]
    DescriptorLen(usize),
    #[error(transparent)]
    Salient(#[from] SalError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarrisParams {
    pub k: f64,
    pub nms_radius: usize,
    pub max_corners: usize,
    /// Responses below this fraction of the frame maximum are ignored.
    pub rel_threshold: f64,
    pub descriptor_len: usize,
}

impl Default for HarrisParams {
    fn default() -> Self {
        HarrisParams {
            k: 0.04,
            nms_radius: 4,
            max_corners: 150,
            rel_threshold: 0.01,
            descriptor_len: DEFAULT_GEOM_DESCRIPTOR_LEN,
        }
    }
}

fn sobel(image: &Grid) -> (Grid, Grid) {
    let g = |x: usize, y: usize, dx: isize, dy: isize| image.get_clamped(x as isize + dx, y as isize + dy);
    let gx = Grid::from_fn(image.width(), image.height(), |x, y| {
        (g(x, y, 1, -1) + 2.0 * g(x, y, 1, 0) + g(x, y, 1, 1))
            - (g(x, y, -1, -1) + 2.0 * g(x, y, -1, 0) + g(x, y, -1, 1))
    });
    let gy = Grid::from_fn(image.width(), image.height(), |x, y| {
        (g(x, y, -1, 1) + 2.0 * g(x, y, 0, 1) + g(x, y, 1, 1))
            - (g(x, y, -1, -1) + 2.0 * g(x, y, 0, -1) + g(x, y, 1, -1))
    });
    (gx, gy)
}

/// `det(M) - k trace(M)^2` of the Gaussian-weighted structure tensor.
pub fn harris_response(image: &Grid, k: f64) -> Grid {
    let (gx, gy) = sobel(image);
    let (w, h) = (image.width(), image.height());
    let prod = |f: &dyn Fn(usize) -> f64| {
        let g = Grid::from_fn(w, h, |x, y| f(y * w + x));
        gaussian_blur(&g, HARRIS_WINDOW_SIGMA, HARRIS_WINDOW_RADIUS)
    };
    let (dx, dy) = (gx.data(), gy.data());
    let sxx = prod(&|i| dx[i] * dx[i]);
    let syy = prod(&|i| dy[i] * dy[i]);
    let sxy = prod(&|i| dx[i] * dy[i]);
    Grid::from_fn(w, h, |x, y| {
        let (a, b, c) = (sxx.get(x, y), syy.get(x, y), sxy.get(x, y));
        a * b - c * c - k * (a + b) * (a + b)
    })
}

/// Local maxima of the Harris response, strongest first. A pixel survives
/// non-max suppression when no pixel within `nms_radius` (Chebyshev) beats
/// it; equal responses go to the earlier pixel in row-major order.
pub fn harris_corners(image: &Grid, p: &HarrisParams) -> Vec<Keypoint> {
    let r = harris_response(image, p.k);
    let (w, h) = (r.width(), r.height());
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return Vec::new();
    }
    let max = r.data().iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let floor = max * p.rel_threshold;
    let rad = p.nms_radius as isize;
    let mut found = Vec::new();
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            let v = r.get(x, y);
            if v <= 0.0 || v < floor {
                continue;
            }
            let here = y * w + x;
            let beaten = (-rad..=rad).any(|dy| {
                (-rad..=rad).any(|dx| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        return false;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    let nv = r.get(nx, ny);
                    nv > v || (nv == v && ny * w + nx < here)
                })
            });
            if !beaten {
                found.push((v, here));
            }
        }
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    found.truncate(p.max_corners);
    found
        .into_iter()
        .map(|(_, i)| Keypoint::new((i % w) as f32, (i / w) as f32).expect("pixel coordinates"))
        .collect()
}

/// Harris corners described by the orientation-histogram descriptor of the
/// image, scaled to `[0, 1]` and zero-padded to `descriptor_len`.
pub fn fallback_geometric(image: &Grid, frame_id: u64, p: &HarrisParams) -> Result<FrameFeatures, FallbackError> {
    if p.descriptor_len < SAL_DESCRIPTOR_LEN {
        return Err(FallbackError::DescriptorLen(p.descriptor_len));
    }
    let keypoints = harris_corners(image, p);
    if keypoints.is_empty() {
        return Ok(FrameFeatures::empty(
            frame_id,
            crate::types::Family::Geometric,
            p.descriptor_len,
        ));
    }
    let extractor = DescriptorExtractor::new(image)?;
    let rows = keypoints
        .iter()
        .map(|k| {
            let d = extractor.describe(k)?;
            let mut v: Vec<f32> = d.bytes().iter().map(|&b| f32::from(b) / 255.0).collect();
            v.resize(p.descriptor_len, 0.0);
            Ok(GeomDescriptor::new(v)?)
        })
        .collect::<Result<Vec<_>, FallbackError>>()?;
    Ok(FrameFeatures::new(
        frame_id,
        keypoints,
        Descriptors::Geometric {
            dim: p.descriptor_len,
            rows,
        },
    )?)
}

/// Gradient energy: blurred gradient magnitude, min-max normalized. A flat
/// image maps to all zeros.
pub fn fallback_saliency(image: &Grid) -> Result<Heatmap, FallbackError> {
    let grad = gradient_field(image)?;
    let mag = Grid::new(image.width(), image.height(), grad.magnitude().to_vec())?;
    let blurred = gaussian_blur(&mag, SALIENCY_SIGMA, SALIENCY_RADIUS);
    let (lo, hi) = blurred
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    let values = if span > 1e-12 * hi.abs().max(1.0) {
        blurred.data().iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; blurred.data().len()]
    };
    Ok(Heatmap::new(image.width(), image.height(), values)?)
}
