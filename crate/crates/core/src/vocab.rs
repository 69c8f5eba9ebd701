//! Hierarchical k-means vocabularies, tf-idf bag-of-words vectors and the
//! per-family frame index used to find the closest earlier frame.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::{Family, FrameFeatures};

pub const DEFAULT_BRANCHING: u16 = 10;
pub const DEFAULT_DEPTH: u16 = 3;
pub const MAX_LLOYD_ITERATIONS: usize = 50;
pub const LLOYD_TOLERANCE: f64 = 1e-6;

const MAGIC: &[u8; 4] = b"HGIV";
const VERSION: u32 = 1;
const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("branching factor must be >= 2, got {0}")]
    Branching(u16),
    #[error("depth must be >= 1")]
    Depth,
    #[error("descriptor length {got} does not match {expected}")]
    DimMismatch { got: usize, expected: usize },
    #[error("vocabulary is {vocab} but the frame holds {frame} features")]
    FamilyMismatch { vocab: Family, frame: Family },
    #[error("bad magic {0:?}, expected \"HGIV\"")]
    BadMagic([u8; 4]),
    #[error("unsupported vocabulary version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt vocabulary file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabNode {
    pub parent: Option<u32>,
    pub centroid: Vec<f32>,
    pub children: Vec<u32>,
    /// Word id for leaves.
    pub word: Option<u32>,
}

/// A k-means word tree with per-word idf weights. Immutable once trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    family: Family,
    branching: u16,
    depth: u16,
    nodes: Vec<VocabNode>,
    /// Indexed by word id.
    idf: Vec<f32>,
}

impl Vocabulary {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn branching(&self) -> u16 {
        self.branching
    }

    pub fn depth(&self) -> u16 {
        self.depth
    }

    pub fn nodes(&self) -> &[VocabNode] {
        &self.nodes
    }

    pub fn word_count(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self, word: u32) -> f32 {
        self.idf[word as usize]
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].centroid.len()
    }

    pub fn leaf_centroid(&self, word: u32) -> Option<&[f32]> {
        self.nodes
            .iter()
            .find(|n| n.word == Some(word))
            .map(|n| n.centroid.as_slice())
    }

    /// Descends by nearest child centroid; ties go to the lower child id.
    pub fn word_of(&self, descriptor: &[f32]) -> u32 {
        let mut node = &self.nodes[0];
        while !node.children.is_empty() {
            let mut best = node.children[0];
            let mut best_d = f64::INFINITY;
            for &c in &node.children {
                let d = dist2(descriptor, &self.nodes[c as usize].centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            node = &self.nodes[best as usize];
        }
        node.word.expect("leaves carry word ids")
    }

    /// tf-idf bag of words for a frame, L1-normalized.
    pub fn quantize(&self, frame: &FrameFeatures) -> Result<BowVector, VocabError> {
        if frame.family() != self.family {
            return Err(VocabError::FamilyMismatch {
                vocab: self.family,
                frame: frame.family(),
            });
        }
        if !frame.is_empty() && frame.descriptors().dim() != self.dim() {
            return Err(VocabError::DimMismatch {
                got: frame.descriptors().dim(),
                expected: self.dim(),
            });
        }
        Ok(self.quantize_rows(&frame.descriptors().rows_f32()))
    }

    pub fn quantize_rows(&self, rows: &[Vec<f32>]) -> BowVector {
        let mut tf: HashMap<u32, f64> = HashMap::new();
        for r in rows {
            *tf.entry(self.word_of(r)).or_default() += 1.0;
        }
        BowVector::from_weights(
            tf.into_iter()
                .map(|(w, n)| (w, n * f64::from(self.idf[w as usize]))),
        )
    }

    /// Trains a tree with branching `k` and at most `depth` levels below the
    /// root. Each frame in `frames` is one document for the idf statistics.
    ///
    /// Each split uses k-means++ seeding from one seeded generator shared
    /// across the whole build, then Lloyd iterations until no centroid moves
    /// more than 1e-6 or 50 rounds pass. A node with at most `k` distinct
    /// descriptors gets one child per distinct descriptor instead.
    pub fn train(
        family: Family,
        frames: &[Vec<Vec<f32>>],
        k: u16,
        depth: u16,
        seed: u64,
    ) -> Result<Self, VocabError> {
        if k < 2 {
            return Err(VocabError::Branching(k));
        }
        if depth == 0 {
            return Err(VocabError::Depth);
        }
        let points: Vec<&[f32]> = frames.iter().flatten().map(|v| v.as_slice()).collect();
        let Some(first) = points.first() else {
            return Err(VocabError::EmptyCorpus);
        };
        let dim = first.len();
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(VocabError::DimMismatch {
                got: bad.len(),
                expected: dim,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = vec![VocabNode {
            parent: None,
            centroid: mean(&points, &(0..points.len()).collect::<Vec<_>>(), dim),
            children: Vec::new(),
            word: None,
        }];
        // Breadth-first, so parents always precede children.
        let mut queue: std::collections::VecDeque<(u32, Vec<usize>, u16)> =
            std::collections::VecDeque::new();
        queue.push_back((0, (0..points.len()).collect(), 0));
        while let Some((id, members, level)) = queue.pop_front() {
            if level >= depth {
                continue;
            }
            let distinct = distinct_upto(&points, &members, usize::from(k) + 1);
            if distinct.len() <= 1 {
                continue;
            }
            let clusters: Vec<(Vec<f32>, Vec<usize>)> = if distinct.len() <= usize::from(k) {
                distinct
                    .iter()
                    .map(|&rep| {
                        let group: Vec<usize> = members
                            .iter()
                            .copied()
                            .filter(|&m| points[m] == points[rep])
                            .collect();
                        (points[rep].to_vec(), group)
                    })
                    .collect()
            } else {
                kmeans(&points, &members, usize::from(k), dim, &mut rng)
            };
            for (centroid, group) in clusters {
                if group.is_empty() {
                    continue;
                }
                let child = nodes.len() as u32;
                nodes.push(VocabNode {
                    parent: Some(id),
                    centroid,
                    children: Vec::new(),
                    word: None,
                });
                nodes[id as usize].children.push(child);
                queue.push_back((child, group, level + 1));
            }
        }

        let mut vocab = Vocabulary {
            family,
            branching: k,
            depth,
            nodes,
            idf: Vec::new(),
        };
        let words = vocab.assign_words();
        let n_docs = frames.len() as f64;
        let mut doc_freq = vec![0usize; words];
        for frame in frames {
            let seen: HashSet<u32> = frame.iter().map(|d| vocab.word_of(d)).collect();
            for w in seen {
                doc_freq[w as usize] += 1;
            }
        }
        vocab.idf = doc_freq
            .iter()
            .map(|&df| (n_docs / df.max(1) as f64).ln() as f32)
            .collect();
        Ok(vocab)
    }

    /// Convenience wrapper over [`Vocabulary::train`] taking feature frames.
    pub fn train_from_features(
        family: Family,
        frames: &[FrameFeatures],
        k: u16,
        depth: u16,
        seed: u64,
    ) -> Result<Self, VocabError> {
        let mut rows = Vec::with_capacity(frames.len());
        for f in frames {
            if f.family() != family {
                return Err(VocabError::FamilyMismatch {
                    vocab: family,
                    frame: f.family(),
                });
            }
            rows.push(f.descriptors().rows_f32());
        }
        Self::train(family, &rows, k, depth, seed)
    }

    // Leaves get word ids in node order.
    fn assign_words(&mut self) -> usize {
        let mut next = 0u32;
        for n in &mut self.nodes {
            if n.children.is_empty() {
                n.word = Some(next);
                next += 1;
            } else {
                n.word = None;
            }
        }
        next as usize
    }

    /// Little-endian layout: `"HGIV"`, version u32, family u8, k u16, depth
    /// u16, node count u32, then per node parent u32 (`u32::MAX` for the
    /// root), centroid length u32, centroid f32s and an idf f32. Internal
    /// nodes carry idf 0.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), VocabError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.family.code()])?;
        w.write_all(&self.branching.to_le_bytes())?;
        w.write_all(&self.depth.to_le_bytes())?;
        w.write_all(&(self.nodes.len() as u32).to_le_bytes())?;
        for n in &self.nodes {
            w.write_all(&n.parent.unwrap_or(NO_PARENT).to_le_bytes())?;
            w.write_all(&(n.centroid.len() as u32).to_le_bytes())?;
            for v in &n.centroid {
                w.write_all(&v.to_le_bytes())?;
            }
            let idf = n.word.map_or(0.0, |wd| self.idf[wd as usize]);
            w.write_all(&idf.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, VocabError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(VocabError::BadMagic(magic));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(VocabError::UnsupportedVersion(version));
        }
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        let family = Family::from_code(b[0])
            .ok_or_else(|| VocabError::Corrupt(format!("unknown family code {}", b[0])))?;
        let branching = read_u16(r)?;
        let depth = read_u16(r)?;
        let count = read_u32(r)? as usize;
        if count == 0 {
            return Err(VocabError::Corrupt("no nodes".into()));
        }
        let mut nodes: Vec<VocabNode> = Vec::with_capacity(count.min(1 << 20));
        let mut leaf_idf = Vec::with_capacity(count.min(1 << 20));
        let mut dim = None;
        for id in 0..count {
            let parent = read_u32(r)?;
            let parent = if parent == NO_PARENT {
                if id != 0 {
                    return Err(VocabError::Corrupt(format!("node {id} has no parent")));
                }
                None
            } else if (parent as usize) < id {
                Some(parent)
            } else {
                return Err(VocabError::Corrupt(format!(
                    "node {id} refers to later parent {parent}"
                )));
            };
            if id == 0 && parent.is_some() {
                return Err(VocabError::Corrupt("root has a parent".into()));
            }
            let len = read_u32(r)? as usize;
            if *dim.get_or_insert(len) != len {
                return Err(VocabError::Corrupt(format!(
                    "node {id} centroid length {len} differs"
                )));
            }
            let mut buf = vec![0u8; len * 4];
            r.read_exact(&mut buf)?;
            let centroid = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let idf = f32::from_le_bytes(read_array(r)?);
            if !(idf >= 0.0) {
                return Err(VocabError::Corrupt(format!("node {id} has idf {idf}")));
            }
            leaf_idf.push(idf);
            if let Some(p) = parent {
                nodes[p as usize].children.push(id as u32);
            }
            nodes.push(VocabNode {
                parent,
                centroid,
                children: Vec::new(),
                word: None,
            });
        }
        let mut vocab = Vocabulary {
            family,
            branching,
            depth,
            nodes,
            idf: Vec::new(),
        };
        vocab.assign_words();
        vocab.idf = vocab
            .nodes
            .iter()
            .zip(&leaf_idf)
            .filter(|(n, _)| n.word.is_some())
            .map(|(_, &idf)| idf)
            .collect();
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VocabError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    read_array(r).map(u32::from_le_bytes)
}

fn read_u16<R: Read>(r: &mut R) -> io::Result<u16> {
    read_array(r).map(u16::from_le_bytes)
}

#[inline]
fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

fn mean(points: &[&[f32]], members: &[usize], dim: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; dim];
    for &m in members {
        for (a, &v) in acc.iter_mut().zip(points[m]) {
            *a += f64::from(v);
        }
    }
    let n = members.len().max(1) as f64;
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

/// Representatives of up to `limit` distinct vectors among `members`, in
/// first-seen order.
fn distinct_upto(points: &[&[f32]], members: &[usize], limit: usize) -> Vec<usize> {
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut reps = Vec::new();
    for &m in members {
        if seen.insert(points[m].iter().map(|v| v.to_bits()).collect()) {
            reps.push(m);
            if reps.len() >= limit {
                break;
            }
        }
    }
    reps
}

fn nearest(p: &[f32], centroids: &[Vec<f32>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn kmeans(
    points: &[&[f32]],
    members: &[usize],
    k: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<f32>, Vec<usize>)> {
    // k-means++ seeding
    let mut centroids: Vec<Vec<f32>> = Vec::with_capacity(k);
    centroids.push(points[members[rng.gen_range(0..members.len())]].to_vec());
    let mut d2: Vec<f64> = members
        .iter()
        .map(|&m| dist2(points[m], &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = members.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[members[pick]].to_vec();
        for (slot, &m) in d2.iter_mut().zip(members) {
            *slot = slot.min(dist2(points[m], &c));
        }
        centroids.push(c);
    }

    let mut assign = vec![0usize; members.len()];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        for (a, &m) in assign.iter_mut().zip(members) {
            *a = nearest(points[m], &centroids);
        }
        let mut sums = vec![vec![0.0f64; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (&a, &m) in assign.iter().zip(members) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(points[m]) {
                *s += f64::from(v);
            }
        }
        let mut max_shift2 = 0.0f64;
        for (c, (s, &n)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            if n == 0 {
                continue;
            }
            let updated: Vec<f32> = s.iter().map(|v| (v / n as f64) as f32).collect();
            max_shift2 = max_shift2.max(dist2(c, &updated));
            *c = updated;
        }
        if max_shift2 <= LLOYD_TOLERANCE * LLOYD_TOLERANCE {
            break;
        }
    }
    for (a, &m) in assign.iter_mut().zip(members) {
        *a = nearest(points[m], &centroids);
    }
    let mut groups = vec![Vec::new(); centroids.len()];
    for (&a, &m) in assign.iter().zip(members) {
        groups[a].push(m);
    }
    centroids.into_iter().zip(groups).collect()
}

/// Sparse tf-idf vector, sorted by word id, weights summing to 1 when
/// non-empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BowVector(Vec<(u32, f64)>);

impl BowVector {
    /// Normalizes arbitrary non-negative weights; zero entries are dropped.
    pub fn from_weights(weights: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut merged: HashMap<u32, f64> = HashMap::new();
        for (w, v) in weights {
            if v > 0.0 && v.is_finite() {
                *merged.entry(w).or_default() += v;
            }
        }
        let mut entries: Vec<(u32, f64)> = merged.into_iter().collect();
        entries.sort_unstable_by_key(|e| e.0);
        let total: f64 = entries.iter().map(|e| e.1).sum();
        for e in &mut entries {
            e.1 /= total;
        }
        BowVector(entries)
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weight(&self, word: u32) -> f64 {
        self.0
            .binary_search_by_key(&word, |e| e.0)
            .map_or(0.0, |i| self.0[i].1)
    }

    /// L1 distance; in `[0, 2]` for two normalized non-empty vectors.
    pub fn l1_distance(&self, other: &BowVector) -> f64 {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut d) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => {
                    d += a[i].1;
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    d += b[j].1;
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    d += (a[i].1 - b[j].1).abs();
                    i += 1;
                    j += 1;
                }
            }
        }
        d + a[i..].iter().map(|e| e.1).sum::<f64>() + b[j..].iter().map(|e| e.1).sum::<f64>()
    }
}

/// Closest indexed frame to a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryHit {
    pub frame_id: u64,
    pub distance: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("frame {got} inserted after frame {last}; insertions must be in increasing id order")]
pub struct OutOfOrder {
    pub got: u64,
    pub last: u64,
}

/// Stored bag-of-words vectors plus an inverted word -> frame index.
///
/// Writers insert frames in strictly increasing id order through `&mut self`;
/// queries only need `&self`, so any number of readers may share an index
/// behind a read lock.
#[derive(Debug, Clone, Default)]
pub struct FrameIndex {
    frames: Vec<(u64, BowVector)>,
    inverted: HashMap<u32, Vec<usize>>,
}

impl FrameIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[(u64, BowVector)] {
        &self.frames
    }

    pub fn insert(&mut self, frame_id: u64, bow: BowVector) -> Result<(), OutOfOrder> {
        if let Some(&(last, _)) = self.frames.last() {
            if frame_id <= last {
                return Err(OutOfOrder {
                    got: frame_id,
                    last,
                });
            }
        }
        let slot = self.frames.len();
        for &(w, _) in bow.entries() {
            self.inverted.entry(w).or_default().push(slot);
        }
        self.frames.push((frame_id, bow));
        Ok(())
    }

    pub fn get(&self, frame_id: u64) -> Option<&BowVector> {
        self.frames
            .binary_search_by_key(&frame_id, |f| f.0)
            .ok()
            .map(|i| &self.frames[i].1)
    }

    /// Frame minimizing the L1 distance to `q`, skipping frames closer than
    /// `exclude_within` ids to `query_frame`. Ties go to the lowest frame id.
    /// `None` when every frame is excluded.
    pub fn query(&self, q: &BowVector, query_frame: u64, exclude_within: u64) -> Option<QueryHit> {
        let eligible = |slot: usize| self.frames[slot].0.abs_diff(query_frame) >= exclude_within;
        let mut sharing: Vec<usize> = q
            .entries()
            .iter()
            .filter_map(|(w, _)| self.inverted.get(w))
            .flatten()
            .copied()
            .filter(|&s| eligible(s))
            .collect();
        sharing.sort_unstable();
        sharing.dedup();
        // A frame sharing no word is at distance |q| + |f| = 2, never closer
        // than one that shares a word, so it only matters when none does.
        let candidates: Box<dyn Iterator<Item = usize>> = if sharing.is_empty() {
            Box::new((0..self.frames.len()).filter(|&s| eligible(s)))
        } else {
            Box::new(sharing.into_iter())
        };
        let mut best: Option<QueryHit> = None;
        for slot in candidates {
            let (frame_id, bow) = &self.frames[slot];
            let distance = q.l1_distance(bow);
            if best.map_or(true, |b| distance < b.distance) {
                best = Some(QueryHit {
                    frame_id: *frame_id,
                    distance,
                });
            }
        }
        best
    }
}
