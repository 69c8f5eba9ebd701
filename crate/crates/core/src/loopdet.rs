//! Similarity fusion, loop gating and the keyframe store.
//!
//! Frames must reach this module one at a time in increasing id order: both
//! the closed-pair suppression and the store's "compare with the last added
//! frame" rule depend on arrival order.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{FusionParams, SimilarityScore};
use crate::vocab::{BowVector, FrameIndex, OutOfOrder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error("squash is undefined for negative input {0}")]
    Negative(f64),
    #[error(transparent)]
    OutOfOrder(#[from] OutOfOrder),
}

/// `F(x) = 1 - exp(-1/x)`, with `F(0) = 1` by continuity.
pub fn squash(x: f64) -> Result<f64, LoopError> {
    if x < 0.0 || x.is_nan() {
        return Err(LoopError::Negative(x));
    }
    Ok(squash_unchecked(x))
}

#[inline]
fn squash_unchecked(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-1.0 / x).exp_m1()
    }
}

/// `s = F(|d_s - d_g|) * F(w_s d_s + w_g d_g)`.
///
/// Distances are clamped at zero, so the result always lies in `[0, 1]`.
pub fn fuse(d_s: f64, d_g: f64, p: &FusionParams) -> f64 {
    let (d_s, d_g) = (d_s.max(0.0), d_g.max(0.0));
    squash_unchecked((d_s - d_g).abs()) * squash_unchecked(d_s * p.w_s() + d_g * p.w_g())
}

/// One reported loop closure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopDetection {
    pub query_frame: u64,
    pub candidate_frame: u64,
    pub score: SimilarityScore,
}

impl LoopDetection {
    /// Tab-separated `query, candidate, s, d_s, d_g`.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.query_frame, self.candidate_frame, self.score.s, self.score.d_s, self.score.d_g
        )
    }

    pub fn from_tsv(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if f.len() != 5 {
            return Err(format!("expected 5 tab-separated fields, got {}", f.len()));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|e| format!("`{s}`: {e}"));
        let float = |s: &str| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
        let candidate_frame = int(f[1])?;
        Ok(LoopDetection {
            query_frame: int(f[0])?,
            candidate_frame,
            score: SimilarityScore::new(float(f[2])?, float(f[3])?, float(f[4])?, candidate_frame)
                .map_err(|e| e.to_string())?,
        })
    }
}

impl fmt::Display for LoopDetection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_tsv())
    }
}

/// Parses a detections stream, skipping blank and `#` comment lines.
pub fn parse_detections(text: &str) -> Result<Vec<LoopDetection>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, l)| LoopDetection::from_tsv(l).map_err(|e| format!("line {}: {e}", n + 1)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredFrame {
    pub frame_id: u64,
    pub bow_s: BowVector,
    pub bow_g: BowVector,
}

/// Why a frame was or was not stored; replayable to audit the store.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreDecision {
    pub frame_id: u64,
    /// Last stored frame at decision time.
    pub compared_to: Option<u64>,
    /// Fused similarity against `compared_to`.
    pub similarity: Option<f64>,
    pub stored: bool,
}

/// Keyframes kept for loop lookups, with one frame index per family.
///
/// A frame is stored only when its fused similarity to the most recently
/// stored frame is below `s_th / 2`.
#[derive(Debug, Clone, Default)]
pub struct KeyframeStore {
    frames: Vec<StoredFrame>,
    index_s: FrameIndex,
    index_g: FrameIndex,
    decisions: Vec<StoreDecision>,
}

impl KeyframeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[StoredFrame] {
        &self.frames
    }

    pub fn last_added(&self) -> Option<&StoredFrame> {
        self.frames.last()
    }

    pub fn salient_index(&self) -> &FrameIndex {
        &self.index_s
    }

    pub fn geometric_index(&self) -> &FrameIndex {
        &self.index_g
    }

    pub fn decisions(&self) -> &[StoreDecision] {
        &self.decisions
    }

    /// Stores unconditionally.
    pub fn insert(&mut self, frame_id: u64, bow_s: BowVector, bow_g: BowVector) -> Result<(), OutOfOrder> {
        self.index_s.insert(frame_id, bow_s.clone())?;
        self.index_g
            .insert(frame_id, bow_g.clone())
            .expect("indexes hold the same frames");
        self.frames.push(StoredFrame {
            frame_id,
            bow_s,
            bow_g,
        });
        Ok(())
    }
}

/// Emitted pairs; a new pair within the gap of both endpoints of an emitted
/// pair counts as already closed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClosedPairs(Vec<(u64, u64)>);

impl ClosedPairs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_closed(&self, query: u64, candidate: u64, gap: u64) -> bool {
        let gap = gap.max(1);
        self.0
            .iter()
            .any(|&(q, c)| q.abs_diff(query) < gap && c.abs_diff(candidate) < gap)
    }

    pub fn insert(&mut self, query: u64, candidate: u64) {
        self.0.push((query, candidate));
    }

    pub fn pairs(&self) -> &[(u64, u64)] {
        &self.0
    }
}

fn score_against(
    candidate: u64,
    bow_s: &BowVector,
    bow_g: &BowVector,
    store: &KeyframeStore,
    p: &FusionParams,
) -> SimilarityScore {
    let d_s = bow_s.l1_distance(store.index_s.get(candidate).expect("stored frame"));
    let d_g = bow_g.l1_distance(store.index_g.get(candidate).expect("stored frame"));
    SimilarityScore {
        s: fuse(d_s, d_g, p),
        d_s,
        d_g,
        candidate_frame: candidate,
    }
}

/// Looks the frame up in both indexes and reports a loop when the fused
/// score beats `s_th` and the pair is not already closed.
///
/// When the two families disagree on the closest frame, both candidates are
/// scored with distances from both indexes and the higher score wins (lower
/// frame id on a tie). A reported pair is added to `closed`.
pub fn detect(
    frame_id: u64,
    bow_s: &BowVector,
    bow_g: &BowVector,
    store: &KeyframeStore,
    p: &FusionParams,
    closed: &mut ClosedPairs,
) -> Option<LoopDetection> {
    let gap = p.min_frame_gap();
    let hit_s = store.index_s.query(bow_s, frame_id, gap)?;
    let hit_g = store.index_g.query(bow_g, frame_id, gap)?;
    let mut score = score_against(hit_s.frame_id, bow_s, bow_g, store, p);
    if hit_g.frame_id != hit_s.frame_id {
        let other = score_against(hit_g.frame_id, bow_s, bow_g, store, p);
        if other.s > score.s || (other.s == score.s && other.candidate_frame < score.candidate_frame) {
            score = other;
        }
    }
    if score.s <= p.s_th() || closed.is_closed(frame_id, score.candidate_frame, gap) {
        return None;
    }
    closed.insert(frame_id, score.candidate_frame);
    Some(LoopDetection {
        query_frame: frame_id,
        candidate_frame: score.candidate_frame,
        score,
    })
}

/// Stores the frame when the store is empty or its fused similarity to the
/// last stored frame is below `s_th / 2`. Returns whether it was stored.
pub fn maybe_store(
    frame_id: u64,
    bow_s: &BowVector,
    bow_g: &BowVector,
    store: &mut KeyframeStore,
    p: &FusionParams,
) -> Result<bool, OutOfOrder> {
    let (compared_to, similarity) = match store.last_added() {
        None => (None, None),
        Some(last) => (
            Some(last.frame_id),
            Some(fuse(
                bow_s.l1_distance(&last.bow_s),
                bow_g.l1_distance(&last.bow_g),
                p,
            )),
        ),
    };
    let stored = similarity.map_or(true, |s| s < p.s_th() / 2.0);
    if stored {
        store.insert(frame_id, bow_s.clone(), bow_g.clone())?;
    }
    store.decisions.push(StoreDecision {
        frame_id,
        compared_to,
        similarity,
        stored,
    });
    Ok(stored)
}

/// Result of feeding one frame to a [`LoopDetector`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub detection: Option<LoopDetection>,
    pub stored: bool,
}

/// Stateful detector: checks each frame for a loop, then offers it to the
/// keyframe store. Rejects frames that do not arrive in increasing id order.
#[derive(Debug, Clone)]
pub struct LoopDetector {
    params: FusionParams,
    store: KeyframeStore,
    closed: ClosedPairs,
    detections: Vec<LoopDetection>,
    last_frame: Option<u64>,
}

impl LoopDetector {
    pub fn new(params: FusionParams) -> Self {
        Self {
            params,
            store: KeyframeStore::new(),
            closed: ClosedPairs::new(),
            detections: Vec::new(),
            last_frame: None,
        }
    }

    pub fn params(&self) -> &FusionParams {
        &self.params
    }

    pub fn store(&self) -> &KeyframeStore {
        &self.store
    }

    pub fn detections(&self) -> &[LoopDetection] {
        &self.detections
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.last_frame
    }

    pub fn process(
        &mut self,
        frame_id: u64,
        bow_s: &BowVector,
        bow_g: &BowVector,
    ) -> Result<FrameOutcome, LoopError> {
        if let Some(last) = self.last_frame {
            if frame_id <= last {
                return Err(OutOfOrder { got: frame_id, last }.into());
            }
        }
        self.last_frame = Some(frame_id);
        let detection = detect(
            frame_id,
            bow_s,
            bow_g,
            &self.store,
            &self.params,
            &mut self.closed,
        );
        if let Some(d) = detection {
            self.detections.push(d);
        }
        let stored = maybe_store(frame_id, bow_s, bow_g, &mut self.store, &self.params)?;
        Ok(FrameOutcome { detection, stored })
    }
}
