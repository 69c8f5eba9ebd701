//! Loop-detection metrics, trajectory error and descriptor-similarity histograms.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::FrameFeatures;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("frame ids must be strictly increasing: {got} after {last}")]
    NotIncreasing { got: u64, last: u64 },
    #[error("frame {0} has a non-finite position")]
    NonFinite(u64),
    #[error("loop radius must be positive, got {0}")]
    Radius(f64),
    #[error("alignment needs at least 3 shared frames, got {0}")]
    TooFew(usize),
    #[error("correspondences are collinear; similarity transform is not unique")]
    Degenerate,
    #[error("trajectories share no frame ids")]
    EmptyIntersection,
    #[error("both frames need descriptors")]
    EmptyFrames,
    #[error("every descriptor pair had zero norm")]
    NoPairs,
    #[error("histogram needs at least one bin")]
    Bins,
}

/// Positions keyed by strictly increasing frame id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    frames: Vec<u64>,
    positions: Vec<Vector3<f64>>,
}

impl Trajectory {
    pub fn new(points: impl IntoIterator<Item = (u64, [f64; 3])>) -> Result<Self, EvalError> {
        let mut t = Trajectory::default();
        for (id, p) in points {
            if let Some(&last) = t.frames.last() {
                if id <= last {
                    return Err(EvalError::NotIncreasing { got: id, last });
                }
            }
            if !p.iter().all(|v| v.is_finite()) {
                return Err(EvalError::NonFinite(id));
            }
            t.frames.push(id);
            t.positions.push(Vector3::from(p));
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_ids(&self) -> &[u64] {
        &self.frames
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Vector3<f64>)> {
        self.frames.iter().copied().zip(&self.positions)
    }

    pub fn position(&self, frame_id: u64) -> Option<&Vector3<f64>> {
        self.frames
            .binary_search(&frame_id)
            .ok()
            .map(|i| &self.positions[i])
    }

    /// Applies `x -> s R x + t` to every position.
    pub fn transformed(&self, sim: &Sim3) -> Trajectory {
        Trajectory {
            frames: self.frames.clone(),
            positions: self.positions.iter().map(|p| sim.apply(p)).collect(),
        }
    }

    /// Space-separated `frame x y z` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, p) in self.iter() {
            let _ = writeln!(out, "{id} {} {} {}", p.x, p.y, p.z);
        }
        out
    }
}

/// Parses a pose file. Each non-blank, non-`#` line is one of
/// `id` + 12 floats (row-major 3x4 pose), `id` + 3 floats (position), or
/// 12 floats without an id, in which case the line index is the frame id.
pub fn parse_poses(text: &str) -> Result<Trajectory, EvalError> {
    let mut points = Vec::new();
    let mut implicit = 0u64;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| EvalError::Parse { line: n + 1, msg };
        let toks: Vec<&str> = line.split_whitespace().collect();
        let floats = |s: &[&str]| -> Result<Vec<f64>, EvalError> {
            s.iter()
                .map(|t| t.parse::<f64>().map_err(|e| err(format!("`{t}`: {e}"))))
                .collect()
        };
        let id = |t: &str| {
            t.parse::<u64>()
                .map_err(|e| err(format!("frame id `{t}`: {e}")))
        };
        let (frame, pos) = match toks.len() {
            13 => {
                let m = floats(&toks[1..])?;
                (id(toks[0])?, [m[3], m[7], m[11]])
            }
            4 => {
                let m = floats(&toks[1..])?;
                (id(toks[0])?, [m[0], m[1], m[2]])
            }
            12 => {
                let m = floats(&toks)?;
                (implicit, [m[3], m[7], m[11]])
            }
            k => return Err(err(format!("expected 4, 12 or 13 fields, got {k}"))),
        };
        implicit += 1;
        points.push((frame, pos));
    }
    Trajectory::new(points)
}

/// Ground-truth loop pairs, stored as `(low, high)` frame ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopLabelSet {
    pub pairs: BTreeSet<(u64, u64)>,
    pub radius: f64,
    pub min_gap: u64,
}

impl LoopLabelSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: u64, b: u64) -> bool {
        self.pairs.contains(&(a.min(b), a.max(b)))
    }

    /// One `low<TAB>high` line per pair.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# radius={} min_gap={}\n", self.radius, self.min_gap);
        for (a, b) in &self.pairs {
            let _ = writeln!(out, "{a}\t{b}");
        }
        out
    }
}

/// Labels every frame pair that lies within `r` metres and at least
/// `min_gap` frames apart.
pub fn derive_loop_labels(gt: &Trajectory, r: f64, min_gap: u64) -> Result<LoopLabelSet, EvalError> {
    if !(r > 0.0) {
        return Err(EvalError::Radius(r));
    }
    let r2 = r * r;
    let mut pairs = BTreeSet::new();
    for (i, (fi, pi)) in gt.iter().enumerate() {
        for (fj, pj) in gt.iter().skip(i + 1) {
            if fj - fi >= min_gap && (pi - pj).norm_squared() <= r2 {
                pairs.insert((fi, fj));
            }
        }
    }
    Ok(LoopLabelSet {
        pairs,
        radius: r,
        min_gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PRCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl PRCounts {
    /// `TP / (TP + FP)`, or 1 when nothing was detected.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `TP / (TP + FN)`, or 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn pair_matches(det: (u64, u64), label: (u64, u64), tol: u64) -> bool {
    let d = (det.0.min(det.1), det.0.max(det.1));
    d.0.abs_diff(label.0) <= tol && d.1.abs_diff(label.1) <= tol
}

/// Matches detections to labels when both endpoints agree within `tol`
/// frames (pairs are unordered).
pub fn precision_recall(detections: &[(u64, u64)], labels: &LoopLabelSet, tol: u64) -> PRCounts {
    let mut covered = vec![false; labels.pairs.len()];
    let mut tp = 0;
    for &d in detections {
        let mut hit = false;
        for (flag, &l) in covered.iter_mut().zip(&labels.pairs) {
            if pair_matches(d, l, tol) {
                *flag = true;
                hit = true;
            }
        }
        tp += u64::from(hit);
    }
    PRCounts {
        tp,
        fp: detections.len() as u64 - tp,
        fn_: covered.iter().filter(|c| !**c).count() as u64,
    }
}

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3 {
    pub fn identity() -> Self {
        Sim3 {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

fn correspondences(pred: &Trajectory, gt: &Trajectory) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let out: Vec<_> = pred
        .iter()
        .filter_map(|(id, p)| gt.position(id).map(|g| (*p, *g)))
        .collect();
    if out.len() != pred.len() || out.len() != gt.len() {
        log::warn!(
            "trajectory frame sets differ: {} predicted, {} ground truth, {} shared",
            pred.len(),
            gt.len(),
            out.len()
        );
    }
    out
}

/// Least-squares similarity transform taking `pred` onto `gt` (Umeyama),
/// joined on frame id.
pub fn fit_sim3(pred: &Trajectory, gt: &Trajectory) -> Result<Sim3, EvalError> {
    let pairs = correspondences(pred, gt);
    let n = pairs.len();
    if n < 3 {
        return Err(EvalError::TooFew(n));
    }
    let nf = n as f64;
    let mu_p = pairs.iter().map(|(p, _)| p).sum::<Vector3<f64>>() / nf;
    let mu_g = pairs.iter().map(|(_, g)| g).sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut spread_g = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in &pairs {
        let (dp, dg) = (p - mu_p, g - mu_g);
        cov += dg * dp.transpose();
        spread_g += dg * dg.transpose();
        var_p += dp.norm_squared();
    }
    cov /= nf;
    var_p /= nf;

    let spread = spread_g.symmetric_eigen().eigenvalues;
    let mut ev: Vec<f64> = spread.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= ev[0] * 1e-12 || !(var_p > 0.0) {
        return Err(EvalError::Degenerate);
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut s = Vector3::repeat(1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        let weakest = (0..3)
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .expect("three singular values");
        s[weakest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s) * v_t;
    let scale = svd.singular_values.dot(&s) / var_p;
    let translation = mu_g - rotation * mu_p * scale;
    Ok(Sim3 {
        scale,
        rotation,
        translation,
    })
}

/// `pred` mapped onto `gt` by the best similarity transform.
pub fn align_sim3(pred: &Trajectory, gt: &Trajectory) -> Result<Trajectory, EvalError> {
    Ok(pred.transformed(&fit_sim3(pred, gt)?))
}

/// Root-mean-square position error over shared frame ids, after Sim(3)
/// alignment when `align` is set.
pub fn ate_rmse(pred: &Trajectory, gt: &Trajectory, align: bool) -> Result<f64, EvalError> {
    let aligned;
    let pred = if align {
        aligned = align_sim3(pred, gt)?;
        &aligned
    } else {
        pred
    };
    let pairs = correspondences(pred, gt);
    if pairs.is_empty() {
        return Err(EvalError::EmptyIntersection);
    }
    let sum: f64 = pairs.iter().map(|(p, g)| (p - g).norm_squared()).sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

/// Linearly resamples `v` to `len` samples spanning the same support.
pub fn resample_linear(v: &[f32], len: usize) -> Vec<f64> {
    if len == 0 || v.is_empty() {
        return Vec::new();
    }
    if len == 1 || v.len() == 1 {
        return vec![f64::from(v[0]); len];
    }
    let step = (v.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|t| {
            let x = t as f64 * step;
            let i = (x.floor() as usize).min(v.len() - 2);
            let frac = x - i as f64;
            f64::from(v[i]) * (1.0 - frac) + f64::from(v[i + 1]) * frac
        })
        .collect()
}

/// Cosine similarities of all cross-family descriptor pairs, binned over
/// `[-1, 1]` and scaled so the fullest bin is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHistogram {
    pub bins: Vec<f64>,
    pub pairs: u64,
    pub skipped: u64,
}

impl SimilarityHistogram {
    pub fn bin_center(&self, i: usize) -> f64 {
        let w = 2.0 / self.bins.len() as f64;
        -1.0 + (i as f64 + 0.5) * w
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,normalized_count\n");
        for (i, v) in self.bins.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.bin_center(i), v);
        }
        out
    }
}

/// Raw bin counts of cross-family cosine similarities for one frame pair,
/// plus the number of pairs skipped for a zero-norm descriptor.
pub fn similarity_counts(
    geom: &FrameFeatures,
    sal: &FrameFeatures,
    bins: usize,
) -> Result<(Vec<u64>, u64), EvalError> {
    if bins == 0 {
        return Err(EvalError::Bins);
    }
    if geom.is_empty() || sal.is_empty() {
        return Err(EvalError::EmptyFrames);
    }
    let len = geom.descriptors().dim().min(sal.descriptors().dim());
    let rows = |f: &FrameFeatures| -> Vec<(Vec<f64>, f64)> {
        f.descriptors()
            .rows_f32()
            .iter()
            .map(|r| {
                let v = resample_linear(r, len);
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                (v, n)
            })
            .collect()
    };
    let (a, b) = (rows(geom), rows(sal));
    let mut counts = vec![0u64; bins];
    let mut skipped = 0u64;
    for (va, na) in &a {
        for (vb, nb) in &b {
            if *na == 0.0 || *nb == 0.0 {
                skipped += 1;
                continue;
            }
            let c = (va.iter().zip(vb).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0);
            let idx = (((c + 1.0) / 2.0 * bins as f64).floor() as usize).min(bins - 1);
            counts[idx] += 1;
        }
    }
    Ok((counts, skipped))
}

impl SimilarityHistogram {
    /// Scales raw counts so the fullest bin is 1.
    pub fn from_counts(counts: &[u64], skipped: u64) -> Result<Self, EvalError> {
        if counts.is_empty() {
            return Err(EvalError::Bins);
        }
        let max = counts.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return Err(EvalError::NoPairs);
        }
        Ok(SimilarityHistogram {
            bins: counts.iter().map(|&c| c as f64 / max as f64).collect(),
            pairs: counts.iter().sum(),
            skipped,
        })
    }
}

pub fn feature_similarity_histogram(
    geom: &FrameFeatures,
    sal: &FrameFeatures,
    bins: usize,
) -> Result<SimilarityHistogram, EvalError> {
    let (counts, skipped) = similarity_counts(geom, sal, bins)?;
    SimilarityHistogram::from_counts(&counts, skipped)
}

/// Parameters and results of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub radius: f64,
    pub min_gap: u64,
    pub tol: u64,
    pub detections: u64,
    pub labels: u64,
    pub counts: PRCounts,
    pub precision: f64,
    pub recall: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ate_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub align: Option<bool>,
}

impl EvalReport {
    pub fn new(detections: &[(u64, u64)], labels: &LoopLabelSet, tol: u64) -> Self {
        let counts = precision_recall(detections, labels, tol);
        EvalReport {
            radius: labels.radius,
            min_gap: labels.min_gap,
            tol,
            detections: detections.len() as u64,
            labels: labels.len() as u64,
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            ate_rmse: None,
            align: None,
        }
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "radius={}", self.radius);
        let _ = writeln!(out, "min_gap={}", self.min_gap);
        let _ = writeln!(out, "tol={}", self.tol);
        let _ = writeln!(out, "detections={}", self.detections);
        let _ = writeln!(out, "labels={}", self.labels);
        let _ = writeln!(out, "tp={}", self.counts.tp);
        let _ = writeln!(out, "fp={}", self.counts.fp);
        let _ = writeln!(out, "fn={}", self.counts.fn_);
        let _ = writeln!(out, "precision={}", self.precision);
        let _ = writeln!(out, "recall={}", self.recall);
        if let Some(a) = self.ate_rmse {
            let _ = writeln!(out, "ate_rmse={a}");
        }
        if let Some(a) = self.align {
            let _ = writeln!(out, "align={a}");
        }
        out
    }
}
