//! Post-processing for geometric keypoints: spatial-similarity deduplication
//! and three-frame merging.

use std::cmp::Ordering;

use thiserror::Error;

use crate::types::{Descriptors, Family, FrameFeatures, GeomDescriptor, DedupParams, Keypoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("keypoint index {index} out of range for a frame of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("descriptor {0} has zero norm; cosine similarity is undefined")]
    ZeroNorm(usize),
    #[error("neighbor set is empty")]
    NoNeighbors,
    #[error("expected {expected} features, got {got}")]
    WrongFamily { expected: Family, got: Family },
    #[error("frames {prev}, {center}, {next} are not consecutive")]
    NotConsecutive { prev: u64, center: u64, next: u64 },
    #[error("descriptor lengths differ across merged frames ({0} vs {1})")]
    DimMismatch(usize, usize),
}

/// Indices of the keypoints that crowd keypoint `center_index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSet {
    pub center_index: usize,
    /// Sorted ascending; never contains `center_index`.
    pub member_indices: Vec<usize>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.member_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_indices.is_empty()
    }
}

/// Every `j != i` whose squared distance to keypoint `i` is below `T`.
pub fn neighbor_set(
    frame: &FrameFeatures,
    i: usize,
    params: &DedupParams,
) -> Result<NeighborSet, GeomError> {
    let kps = frame.keypoints();
    let center = kps.get(i).ok_or(GeomError::IndexOutOfRange {
        index: i,
        len: kps.len(),
    })?;
    Ok(NeighborSet {
        center_index: i,
        member_indices: neighbors_of(kps, center, i, params.threshold()),
    })
}

fn neighbors_of(kps: &[Keypoint], center: &Keypoint, i: usize, threshold: f64) -> Vec<usize> {
    kps.iter()
        .enumerate()
        .filter(|(j, k)| *j != i && center.dist2(k) < threshold)
        .map(|(j, _)| j)
        .collect()
}

/// Cosine of two float vectors, or `None` if either has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean cosine between the descriptor of keypoint `i` and the descriptors of
/// its neighbors.
///
/// The cosine is taken descriptor-to-descriptor; comparing a descriptor to the
/// 2-D keypoint location itself would be dimensionally meaningless.
pub fn mean_cosine_similarity(
    frame: &FrameFeatures,
    i: usize,
    neighbors: &NeighborSet,
) -> Result<f64, GeomError> {
    let desc = frame.descriptors();
    let n = desc.len();
    if i >= n {
        return Err(GeomError::IndexOutOfRange { index: i, len: n });
    }
    if neighbors.is_empty() {
        return Err(GeomError::NoNeighbors);
    }
    let center = desc.row_f32(i);
    let mut sum = 0.0;
    for &j in &neighbors.member_indices {
        if j >= n {
            return Err(GeomError::IndexOutOfRange { index: j, len: n });
        }
        let other = desc.row_f32(j);
        sum += match cosine(&center, &other) {
            Some(c) => c,
            None if norm2(&center) == 0.0 => return Err(GeomError::ZeroNorm(i)),
            None => return Err(GeomError::ZeroNorm(j)),
        };
    }
    Ok(sum / neighbors.len() as f64)
}

fn norm2(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

/// Drops keypoints that are both crowded and similar to their neighbors.
///
/// Every keep/discard decision is made against the original keypoint set, so
/// the result does not depend on keypoint order. A keypoint with at most `N`
/// neighbors is kept; otherwise it is discarded when the mean neighbor cosine
/// exceeds `s_min`. Zero-norm descriptors count as cosine 0 here.
pub fn dedup_keypoints(
    frame: &FrameFeatures,
    params: &DedupParams,
) -> Result<FrameFeatures, GeomError> {
    if frame.family() != Family::Geometric {
        return Err(GeomError::WrongFamily {
            expected: Family::Geometric,
            got: frame.family(),
        });
    }
    let kps = frame.keypoints();
    let rows = frame.descriptors().rows_f32();
    let keep: Vec<bool> = kps
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let members = neighbors_of(kps, k, i, params.threshold());
            if members.len() <= params.max_neighbors() {
                return true;
            }
            let sum: f64 = members
                .iter()
                .map(|&j| cosine(&rows[i], &rows[j]).unwrap_or(0.0))
                .sum();
            sum / members.len() as f64 <= params.s_min()
        })
        .collect();
    Ok(frame.select(|i| keep[i]))
}

fn geom_rows(frame: &FrameFeatures) -> Result<(usize, &[GeomDescriptor]), GeomError> {
    match frame.descriptors() {
        Descriptors::Geometric { dim, rows } => Ok((*dim, rows)),
        Descriptors::Salient(_) => Err(GeomError::WrongFamily {
            expected: Family::Geometric,
            got: Family::Salient,
        }),
    }
}

#[derive(Clone, Copy)]
struct Member {
    // 0 = prev, 1 = center, 2 = next
    slot: u8,
    index: usize,
}

/// Overlays three consecutive frames and thins the result back down to the
/// center frame's keypoint count.
///
/// Cross-frame descriptor pairs are visited from most to least similar; for
/// each pair whose members are both still present, one member is removed
/// (the non-center one, or the earlier frame's when neither is center) until
/// the count matches. Equal similarities are broken by earlier frame, then
/// lower index. The result carries the center frame id.
pub fn merge_triplet(
    prev: &FrameFeatures,
    center: &FrameFeatures,
    next: &FrameFeatures,
    _params: &DedupParams,
) -> Result<FrameFeatures, GeomError> {
    let (dim, center_rows) = geom_rows(center)?;
    let (prev_dim, prev_rows) = geom_rows(prev)?;
    let (next_dim, next_rows) = geom_rows(next)?;
    let cid = center.frame_id();
    let prev_ok = prev.is_empty() || prev.frame_id().checked_add(1) == Some(cid);
    let next_ok = next.is_empty() || cid.checked_add(1) == Some(next.frame_id());
    if !prev_ok || !next_ok {
        return Err(GeomError::NotConsecutive {
            prev: prev.frame_id(),
            center: cid,
            next: next.frame_id(),
        });
    }
    for (d, f) in [(prev_dim, prev), (next_dim, next)] {
        if !f.is_empty() && !center.is_empty() && d != dim {
            return Err(GeomError::DimMismatch(dim, d));
        }
    }

    let frames: [(&FrameFeatures, &[GeomDescriptor]); 3] =
        [(prev, prev_rows), (center, center_rows), (next, next_rows)];
    let members: Vec<Member> = frames
        .iter()
        .enumerate()
        .flat_map(|(slot, (f, _))| {
            (0..f.len()).map(move |index| Member {
                slot: slot as u8,
                index,
            })
        })
        .collect();
    let target = center.len();
    let mut alive = vec![true; members.len()];
    let mut count = members.len();

    if count > target {
        let norms: Vec<f64> = members
            .iter()
            .map(|m| norm2(frames[m.slot as usize].1[m.index].values()).sqrt())
            .collect();
        // All cross-frame pairs (a, b) with a in an earlier frame than b.
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for a in 0..members.len() {
            for b in (a + 1)..members.len() {
                if members[a].slot == members[b].slot {
                    continue;
                }
                let va = frames[members[a].slot as usize].1[members[a].index].values();
                let vb = frames[members[b].slot as usize].1[members[b].index].values();
                let sim = if norms[a] == 0.0 || norms[b] == 0.0 {
                    0.0
                } else {
                    let dot: f64 = va
                        .iter()
                        .zip(vb)
                        .map(|(&x, &y)| f64::from(x) * f64::from(y))
                        .sum();
                    dot / (norms[a] * norms[b])
                };
                pairs.push((sim, a, b));
            }
        }
        // Members are laid out prev, center, next, so (a, b) index order is
        // the earlier-frame-then-lower-index tie break.
        pairs.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .unwrap_or(Ordering::Equal)
                .then(x.1.cmp(&y.1))
                .then(x.2.cmp(&y.2))
        });
        for &(_, a, b) in &pairs {
            if count == target {
                break;
            }
            if !(alive[a] && alive[b]) {
                continue;
            }
            let victim = if members[a].slot == 1 { b } else { a };
            alive[victim] = false;
            count -= 1;
        }
        // Only possible when the center frame is empty and one side frame is
        // also empty: nothing left to pair with, so drop in order.
        for (i, m) in members.iter().enumerate() {
            if count == target {
                break;
            }
            if alive[i] && m.slot != 1 {
                alive[i] = false;
                count -= 1;
            }
        }
    }

    let mut keypoints = Vec::with_capacity(target);
    let mut rows = Vec::with_capacity(target);
    for (i, m) in members.iter().enumerate() {
        if alive[i] {
            let (f, r) = frames[m.slot as usize];
            keypoints.push(f.keypoints()[m.index]);
            rows.push(r[m.index].clone());
        }
    }
    Ok(FrameFeatures::new(cid, keypoints, Descriptors::Geometric { dim, rows })
        .expect("merged rows share the center dimension"))
}
