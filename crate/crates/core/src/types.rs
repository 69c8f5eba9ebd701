//! Domain values shared across the pipeline.
//!
//! Every type validates its invariants at construction, so anything that
//! reaches an algorithm is already well formed. Nothing in here does I/O.

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of a salient descriptor: sixteen blocks of eight orientation bins.
pub const SAL_DESCRIPTOR_LEN: usize = 128;

/// Default geometric descriptor length (matches SuperPoint output).
pub const DEFAULT_GEOM_DESCRIPTOR_LEN: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvariantError {
    #[error("keypoint ({x}, {y}) must be finite and non-negative")]
    Keypoint { x: f32, y: f32 },
    #[error("keypoint ({x}, {y}) lies outside a {width}x{height} image")]
    KeypointOutOfBounds {
        x: f32,
        y: f32,
        width: usize,
        height: usize,
    },
    #[error("descriptor has length {got}, expected {expected}")]
    DescriptorLength { got: usize, expected: usize },
    #[error("descriptor value {0} is not finite")]
    NonFinite(f32),
    #[error("salient descriptor value {0} is outside [0, 255]")]
    ByteRange(i64),
    #[error("{keypoints} keypoints but {descriptors} descriptors")]
    CountMismatch { keypoints: usize, descriptors: usize },
    #[error("grid of {width}x{height} needs {expected} values, got {got}")]
    GridSize {
        width: usize,
        height: usize,
        expected: usize,
        got: usize,
    },
    #[error("grid value {0} is not finite")]
    GridValue(f64),
    #[error("heatmap value {0} is outside [0, 1]")]
    HeatmapRange(f64),
    #[error("gradient magnitude {0} is negative or not finite")]
    Magnitude(f64),
    #[error("gradient orientation {0} is outside [0, 2pi)")]
    Orientation(f64),
    #[error("invalid parameter: {0}")]
    Param(String),
}

/// Which detector family a set of features came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Geometric,
    Salient,
}

impl Family {
    pub fn code(self) -> u8 {
        match self {
            Family::Geometric => 0,
            Family::Salient => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Family::Geometric),
            1 => Some(Family::Salient),
            _ => None,
        }
    }

    /// Short tag used in file names.
    pub fn tag(self) -> &'static str {
        match self {
            Family::Geometric => "geo",
            Family::Salient => "sal",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Geometric => "geometric",
            Family::Salient => "salient",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geometric" | "geo" | "g" => Ok(Family::Geometric),
            "salient" | "sal" | "s" => Ok(Family::Salient),
            other => Err(format!("unknown feature family `{other}`")),
        }
    }
}

/// A pixel location in image coordinates (x right, y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f32, f32)", into = "(f32, f32)")]
pub struct Keypoint {
    x: f32,
    y: f32,
}

impl Keypoint {
    pub fn new(x: f32, y: f32) -> Result<Self, InvariantError> {
        if !(x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0) {
            return Err(InvariantError::Keypoint { x, y });
        }
        Ok(Self { x, y })
    }

    /// Builds a keypoint that must also lie inside a `width` x `height` image.
    pub fn in_image(x: f32, y: f32, width: usize, height: usize) -> Result<Self, InvariantError> {
        let k = Self::new(x, y)?;
        k.check_bounds(width, height)?;
        Ok(k)
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<(), InvariantError> {
        if self.x < width as f32 && self.y < height as f32 {
            Ok(())
        } else {
            Err(InvariantError::KeypointOutOfBounds {
                x: self.x,
                y: self.y,
                width,
                height,
            })
        }
    }

    pub fn x(&self) -> f32 {
        self.x
    }

    pub fn y(&self) -> f32 {
        self.y
    }

    pub fn dist2(&self, other: &Keypoint) -> f64 {
        let dx = f64::from(self.x) - f64::from(other.x);
        let dy = f64::from(self.y) - f64::from(other.y);
        dx * dx + dy * dy
    }
}

impl TryFrom<(f32, f32)> for Keypoint {
    type Error = InvariantError;

    fn try_from((x, y): (f32, f32)) -> Result<Self, Self::Error> {
        Keypoint::new(x, y)
    }
}

impl From<Keypoint> for (f32, f32) {
    fn from(k: Keypoint) -> Self {
        (k.x, k.y)
    }
}

/// Float descriptor from the geometric backend.
#[derive(Debug, Clone, PartialEq)]
pub struct GeomDescriptor(Vec<f32>);

impl GeomDescriptor {
    pub fn new(values: Vec<f32>) -> Result<Self, InvariantError> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(InvariantError::NonFinite(*v));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// 128-byte salient descriptor. The byte type enforces the value range.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SalDescriptor([u8; SAL_DESCRIPTOR_LEN]);

impl SalDescriptor {
    pub fn from_bytes(bytes: [u8; SAL_DESCRIPTOR_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, InvariantError> {
        let arr: [u8; SAL_DESCRIPTOR_LEN] =
            bytes
                .try_into()
                .map_err(|_| InvariantError::DescriptorLength {
                    got: bytes.len(),
                    expected: SAL_DESCRIPTOR_LEN,
                })?;
        Ok(Self(arr))
    }

    /// Accepts wider integers, rejecting anything outside `0..=255`.
    pub fn from_values(values: &[i64]) -> Result<Self, InvariantError> {
        if values.len() != SAL_DESCRIPTOR_LEN {
            return Err(InvariantError::DescriptorLength {
                got: values.len(),
                expected: SAL_DESCRIPTOR_LEN,
            });
        }
        let mut out = [0u8; SAL_DESCRIPTOR_LEN];
        for (o, &v) in out.iter_mut().zip(values) {
            *o = u8::try_from(v).map_err(|_| InvariantError::ByteRange(v))?;
        }
        Ok(Self(out))
    }

    pub fn bytes(&self) -> &[u8; SAL_DESCRIPTOR_LEN] {
        &self.0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&b| f32::from(b)).collect()
    }
}

impl fmt::Debug for SalDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SalDescriptor({:?})", &self.0[..])
    }
}

/// Descriptor storage for one frame; the variant fixes the family.
#[derive(Debug, Clone, PartialEq)]
pub enum Descriptors {
    Geometric { dim: usize, rows: Vec<GeomDescriptor> },
    Salient(Vec<SalDescriptor>),
}

impl Descriptors {
    pub fn empty(family: Family, geom_dim: usize) -> Self {
        match family {
            Family::Geometric => Descriptors::Geometric {
                dim: geom_dim,
                rows: Vec::new(),
            },
            Family::Salient => Descriptors::Salient(Vec::new()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Descriptors::Geometric { .. } => Family::Geometric,
            Descriptors::Salient(_) => Family::Salient,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Descriptors::Geometric { rows, .. } => rows.len(),
            Descriptors::Salient(rows) => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Descriptors::Geometric { dim, .. } => *dim,
            Descriptors::Salient(_) => SAL_DESCRIPTOR_LEN,
        }
    }

    /// Descriptor `i` lifted to floats.
    pub fn row_f32(&self, i: usize) -> Vec<f32> {
        match self {
            Descriptors::Geometric { rows, .. } => rows[i].values().to_vec(),
            Descriptors::Salient(rows) => rows[i].to_f32(),
        }
    }

    pub fn rows_f32(&self) -> Vec<Vec<f32>> {
        (0..self.len()).map(|i| self.row_f32(i)).collect()
    }

    /// Keeps the rows whose index passes `keep`, preserving order.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> Descriptors {
        match self {
            Descriptors::Geometric { dim, rows } => Descriptors::Geometric {
                dim: *dim,
                rows: rows
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| keep(*i))
                    .map(|(_, r)| r.clone())
                    .collect(),
            },
            Descriptors::Salient(rows) => Descriptors::Salient(
                rows.iter()
                    .enumerate()
                    .filter(|(i, _)| keep(*i))
                    .map(|(_, r)| r.clone())
                    .collect(),
            ),
        }
    }
}

/// Keypoints and their descriptors for a single frame and family.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    frame_id: u64,
    keypoints: Vec<Keypoint>,
    descriptors: Descriptors,
}

impl FrameFeatures {
    pub fn new(
        frame_id: u64,
        keypoints: Vec<Keypoint>,
        descriptors: Descriptors,
    ) -> Result<Self, InvariantError> {
        if keypoints.len() != descriptors.len() {
            return Err(InvariantError::CountMismatch {
                keypoints: keypoints.len(),
                descriptors: descriptors.len(),
            });
        }
        if let Descriptors::Geometric { dim, rows } = &descriptors {
            if let Some(bad) = rows.iter().find(|r| r.len() != *dim) {
                return Err(InvariantError::DescriptorLength {
                    got: bad.len(),
                    expected: *dim,
                });
            }
        }
        Ok(Self {
            frame_id,
            keypoints,
            descriptors,
        })
    }

    pub fn empty(frame_id: u64, family: Family, geom_dim: usize) -> Self {
        Self {
            frame_id,
            keypoints: Vec::new(),
            descriptors: Descriptors::empty(family, geom_dim),
        }
    }

    pub fn frame_id(&self) -> u64 {
        self.frame_id
    }

    pub fn family(&self) -> Family {
        self.descriptors.family()
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn descriptors(&self) -> &Descriptors {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn with_frame_id(mut self, frame_id: u64) -> Self {
        self.frame_id = frame_id;
        self
    }

    /// Subset of this frame keeping the indices for which `keep` is true.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> FrameFeatures {
        let keypoints = self
            .keypoints
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, k)| *k)
            .collect();
        FrameFeatures {
            frame_id: self.frame_id,
            keypoints,
            descriptors: self.descriptors.select(&keep),
        }
    }
}

/// Row-major grid of finite values: grayscale images and intermediate maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, InvariantError> {
        if width.checked_mul(height) != Some(data.len()) {
            return Err(InvariantError::GridSize {
                width,
                height,
                expected: width.saturating_mul(height),
                got: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(InvariantError::GridValue(*v));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Clamp-to-edge access for signed coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }
}

/// Saliency map with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap(Grid);

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, InvariantError> {
        Self::from_grid(Grid::new(width, height, values)?)
    }

    pub fn from_grid(grid: Grid) -> Result<Self, InvariantError> {
        if let Some(v) = grid.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(InvariantError::HeatmapRange(*v));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }
}

/// Per-pixel gradient magnitude and orientation in `[0, 2pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    magnitude: Vec<f64>,
    orientation: Vec<f64>,
}

impl GradientField {
    pub fn new(
        width: usize,
        height: usize,
        magnitude: Vec<f64>,
        orientation: Vec<f64>,
    ) -> Result<Self, InvariantError> {
        let n = width * height;
        for got in [magnitude.len(), orientation.len()] {
            if got != n {
                return Err(InvariantError::GridSize {
                    width,
                    height,
                    expected: n,
                    got,
                });
            }
        }
        if let Some(m) = magnitude.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(InvariantError::Magnitude(*m));
        }
        if let Some(o) = orientation.iter().find(|o| !(0.0..TAU).contains(*o)) {
            return Err(InvariantError::Orientation(*o));
        }
        Ok(Self {
            width,
            height,
            magnitude,
            orientation,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn magnitude(&self) -> &[f64] {
        &self.magnitude
    }

    pub fn orientation(&self) -> &[f64] {
        &self.orientation
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.magnitude[i], self.orientation[i])
    }

    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> (f64, f64) {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.at(cx, cy)
    }

    pub fn mean_magnitude(&self) -> f64 {
        if self.magnitude.is_empty() {
            0.0
        } else {
            self.magnitude.iter().sum::<f64>() / self.magnitude.len() as f64
        }
    }
}

/// Keypoint deduplication parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDedup", into = "RawDedup")]
pub struct DedupParams {
    threshold: f64,
    max_neighbors: usize,
    s_min: f64,
}

#[derive(Serialize, Deserialize)]
struct RawDedup {
    #[serde(default = "default_dedup_t")]
    t: f64,
    #[serde(default = "default_dedup_n")]
    n: usize,
    #[serde(default = "default_dedup_s_min")]
    s_min: f64,
}

fn default_dedup_t() -> f64 {
    50.0
}
fn default_dedup_n() -> usize {
    10
}
fn default_dedup_s_min() -> f64 {
    0.6
}

impl DedupParams {
    /// `threshold` is a squared pixel distance.
    pub fn new(threshold: f64, max_neighbors: usize, s_min: f64) -> Result<Self, InvariantError> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(InvariantError::Param(format!(
                "dedup threshold T must be > 0, got {threshold}"
            )));
        }
        if !(-1.0..=1.0).contains(&s_min) {
            return Err(InvariantError::Param(format!(
                "dedup s_min must lie in [-1, 1], got {s_min}"
            )));
        }
        Ok(Self {
            threshold,
            max_neighbors,
            s_min,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn max_neighbors(&self) -> usize {
        self.max_neighbors
    }

    pub fn s_min(&self) -> f64 {
        self.s_min
    }
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            threshold: default_dedup_t(),
            max_neighbors: default_dedup_n(),
            s_min: default_dedup_s_min(),
        }
    }
}

impl TryFrom<RawDedup> for DedupParams {
    type Error = InvariantError;
    fn try_from(r: RawDedup) -> Result<Self, Self::Error> {
        DedupParams::new(r.t, r.n, r.s_min)
    }
}

impl From<DedupParams> for RawDedup {
    fn from(p: DedupParams) -> Self {
        RawDedup {
            t: p.threshold,
            n: p.max_neighbors,
            s_min: p.s_min,
        }
    }
}

/// Weights and gates for the fused similarity score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFusion", into = "RawFusion")]
pub struct FusionParams {
    w_s: f64,
    w_g: f64,
    s_th: f64,
    min_frame_gap: u64,
}

#[derive(Serialize, Deserialize)]
struct RawFusion {
    #[serde(default = "default_w_s")]
    w_s: f64,
    #[serde(default = "default_w_g")]
    w_g: f64,
    #[serde(default = "default_s_th")]
    s_th: f64,
    #[serde(default = "default_gap")]
    min_frame_gap: u64,
}

fn default_w_s() -> f64 {
    0.3
}
fn default_w_g() -> f64 {
    0.7
}
fn default_s_th() -> f64 {
    0.82
}
fn default_gap() -> u64 {
    10
}

impl FusionParams {
    pub fn new(w_s: f64, w_g: f64, s_th: f64, min_frame_gap: u64) -> Result<Self, InvariantError> {
        if !(w_s.is_finite() && w_s >= 0.0 && w_g.is_finite() && w_g >= 0.0) {
            return Err(InvariantError::Param(format!(
                "fusion weights must be >= 0, got w_s={w_s}, w_g={w_g}"
            )));
        }
        if !(s_th > 0.0 && s_th < 1.0) {
            return Err(InvariantError::Param(format!(
                "s_th must lie in (0, 1), got {s_th}"
            )));
        }
        Ok(Self {
            w_s,
            w_g,
            s_th,
            min_frame_gap,
        })
    }

    pub fn w_s(&self) -> f64 {
        self.w_s
    }

    pub fn w_g(&self) -> f64 {
        self.w_g
    }

    pub fn s_th(&self) -> f64 {
        self.s_th
    }

    pub fn min_frame_gap(&self) -> u64 {
        self.min_frame_gap
    }
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            w_s: default_w_s(),
            w_g: default_w_g(),
            s_th: default_s_th(),
            min_frame_gap: default_gap(),
        }
    }
}

impl TryFrom<RawFusion> for FusionParams {
    type Error = InvariantError;
    fn try_from(r: RawFusion) -> Result<Self, Self::Error> {
        FusionParams::new(r.w_s, r.w_g, r.s_th, r.min_frame_gap)
    }
}

impl From<FusionParams> for RawFusion {
    fn from(p: FusionParams) -> Self {
        RawFusion {
            w_s: p.w_s,
            w_g: p.w_g,
            s_th: p.s_th,
            min_frame_gap: p.min_frame_gap,
        }
    }
}

/// Fused similarity of the current frame against one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub s: f64,
    pub d_s: f64,
    pub d_g: f64,
    pub candidate_frame: u64,
}

impl SimilarityScore {
    pub fn new(s: f64, d_s: f64, d_g: f64, candidate_frame: u64) -> Result<Self, InvariantError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(InvariantError::Param(format!("similarity {s} outside [0, 1]")));
        }
        if !(d_s >= 0.0 && d_g >= 0.0) {
            return Err(InvariantError::Param(format!(
                "distances must be >= 0, got d_s={d_s}, d_g={d_g}"
            )));
        }
        Ok(Self {
            s,
            d_s,
            d_g,
            candidate_frame,
        })
    }
}
