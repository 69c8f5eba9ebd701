//! End-to-end stages: feature extraction, vocabulary training and detection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::eval::{similarity_counts, EvalError, SimilarityHistogram};
use crate::geom::{dedup_keypoints, merge_triplet, GeomError};
use crate::ingest::fallback::FallbackError;
use crate::ingest::featfile::feature_file_name;
use crate::ingest::{
    fallback_geometric, fallback_saliency, load_gray, read_feature_file, read_heatmap,
    write_feature_file, write_heatmap, FeatureFileError, PgmError, SequenceManifest,
};
use crate::loopdet::{LoopDetection, LoopDetector, LoopError};
use crate::salient::{salient_frame_features, SalError};
use crate::types::{Family, FrameFeatures, Heatmap};
use crate::vocab::{BowVector, VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame {frame}: {source}")]
    Frame {
        frame: u64,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("{0}: {1}")]
    File(PathBuf, #[source] FeatureFileError),
    #[error("backend `files` needs a {0} directory in the sequence")]
    MissingInput(&'static str),
    #[error("unknown backend `{0}` (expected files or fallback)")]
    UnknownBackend(String),
    #[error("feature file {path} holds frame {found}, expected {expected}")]
    FrameIdMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Salient(#[from] SalError),
    #[error(transparent)]
    Fallback(#[from] FallbackError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PipelineError {
    fn at(frame: u64) -> impl FnOnce(PipelineError) -> PipelineError {
        move |e| PipelineError::Frame {
            frame,
            source: Box::new(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Geometric features and heatmaps produced by an external exporter.
    Files,
    /// Harris corners and gradient-energy saliency computed here.
    Fallback,
}

impl FromStr for Backend {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "files" => Ok(Backend::Files),
            "fallback" => Ok(Backend::Fallback),
            _ => Err(PipelineError::UnknownBackend(s.to_string())),
        }
    }
}

/// Accumulated wall time per named stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings(BTreeMap<String, (f64, u64)>);

impl Timings {
    pub fn record(&mut self, stage: &str, start: Instant) {
        self.add(stage, start.elapsed().as_secs_f64() * 1e3);
    }

    pub fn add(&mut self, stage: &str, ms: f64) {
        let e = self.0.entry(stage.to_string()).or_insert((0.0, 0));
        e.0 += ms;
        e.1 += 1;
    }

    pub fn merge(&mut self, other: &Timings) {
        for (k, &(ms, n)) in &other.0 {
            let e = self.0.entry(k.clone()).or_insert((0.0, 0));
            e.0 += ms;
            e.1 += n;
        }
    }

    /// Mean milliseconds per call for each stage.
    pub fn means(&self) -> BTreeMap<String, f64> {
        self.0
            .iter()
            .map(|(k, &(ms, n))| (k.clone(), if n == 0 { 0.0 } else { ms / n as f64 }))
            .collect()
    }

    pub fn to_comment_lines(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.means() {
            let _ = writeln!(out, "# timing {k}_ms_mean={v:.3}");
        }
        out
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))
}

struct Inputs<'a> {
    manifest: &'a SequenceManifest,
    backend: Backend,
    cfg: &'a RunConfig,
}

impl Inputs<'_> {
    fn geometric(&self, frame: u64, t: &mut Timings) -> Result<FrameFeatures, PipelineError> {
        let start = Instant::now();
        let raw = match self.backend {
            Backend::Fallback => {
                let img = load_gray(&self.manifest.images[frame as usize].path)?;
                fallback_geometric(&img, frame, &self.cfg.geometric)?
            }
            Backend::Files => {
                let dir = self
                    .manifest
                    .feature_dir
                    .as_ref()
                    .ok_or(PipelineError::MissingInput("features/"))?;
                let path = dir.join(feature_file_name(frame, Family::Geometric));
                let f = read_feature_file(&path).map_err(|e| PipelineError::File(path.clone(), e))?;
                if f.frame_id() != frame {
                    return Err(PipelineError::FrameIdMismatch {
                        path,
                        expected: frame,
                        found: f.frame_id(),
                    });
                }
                f
            }
        };
        t.record("geometric", start);
        let start = Instant::now();
        let out = dedup_keypoints(&raw, &self.cfg.dedup)?;
        t.record("dedup", start);
        Ok(out)
    }

    fn heatmap(&self, frame: u64, image: &crate::types::Grid, t: &mut Timings) -> Result<Heatmap, PipelineError> {
        let start = Instant::now();
        let h = match self.backend {
            Backend::Fallback => fallback_saliency(image)?,
            Backend::Files => {
                let dir = self
                    .manifest
                    .heatmap_dir
                    .as_ref()
                    .ok_or(PipelineError::MissingInput("heatmaps/"))?;
                read_heatmap(dir.join(format!("{frame:06}.pgm")))?
            }
        };
        t.record("saliency", start);
        Ok(h)
    }

    fn center(&self, c: u64, every_third: bool, out: &Path) -> Result<Timings, PipelineError> {
        let mut t = Timings::default();
        let n = self.manifest.len() as u64;
        let center = self.geometric(c, &mut t)?;
        let geo = if every_third {
            let side = |f: Option<u64>, t: &mut Timings| -> Result<FrameFeatures, PipelineError> {
                match f.filter(|&f| f < n) {
                    Some(f) => self.geometric(f, t),
                    None => Ok(FrameFeatures::empty(
                        f.unwrap_or(0),
                        Family::Geometric,
                        center.descriptors().dim(),
                    )),
                }
            };
            let prev = side(c.checked_sub(1), &mut t)?;
            let next = side(Some(c + 1), &mut t)?;
            let start = Instant::now();
            let merged = merge_triplet(&prev, &center, &next, &self.cfg.dedup)?;
            t.record("merge", start);
            merged
        } else {
            center
        };

        let start = Instant::now();
        let image = load_gray(&self.manifest.images[c as usize].path)?;
        t.record("load", start);
        let heatmap = self.heatmap(c, &image, &mut t)?;
        let start = Instant::now();
        let sal = salient_frame_features(
            &image,
            &heatmap,
            c,
            self.cfg.sampler.count,
            self.cfg.sampler.frame_seed(c),
        )?;
        t.record("salient", start);

        let start = Instant::now();
        for f in [&geo, &sal] {
            let path = out.join(feature_file_name(c, f.family()));
            write_feature_file(&path, f).map_err(|e| PipelineError::File(path, e))?;
        }
        if self.backend == Backend::Fallback {
            write_heatmap(out.join("heatmaps").join(format!("{c:06}.pgm")), &heatmap, u16::MAX)?;
        }
        t.record("write", start);
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub frames_in: usize,
    pub frames_out: Vec<u64>,
    pub timings: Timings,
}

/// Frames that get features: every frame, or with `every_third` the middle
/// frame of each consecutive triplet (1, 4, 7, ...).
pub fn extraction_centers(frames: usize, every_third: bool) -> Vec<u64> {
    let n = frames as u64;
    if every_third {
        (1..n).step_by(3).collect()
    } else {
        (0..n).collect()
    }
}

/// Writes `NNNNNN.geo.hgif` and `NNNNNN.sal.hgif` per processed frame to
/// `out`, plus `heatmaps/NNNNNN.pgm` for the fallback backend.
pub fn extract(
    manifest: &SequenceManifest,
    backend: Backend,
    every_third: bool,
    out: &Path,
    cfg: &RunConfig,
) -> Result<ExtractSummary, PipelineError> {
    fs::create_dir_all(out)?;
    if backend == Backend::Fallback {
        fs::create_dir_all(out.join("heatmaps"))?;
    }
    let inputs = Inputs {
        manifest,
        backend,
        cfg,
    };
    let centers = extraction_centers(manifest.len(), every_third);
    let results: Vec<Result<Timings, PipelineError>> = pool(cfg.workers)?.install(|| {
        centers
            .par_iter()
            .map(|&c| inputs.center(c, every_third, out).map_err(PipelineError::at(c)))
            .collect()
    });
    let mut timings = Timings::default();
    for r in results {
        timings.merge(&r?);
    }
    Ok(ExtractSummary {
        frames_in: manifest.len(),
        frames_out: centers,
        timings,
    })
}

/// Feature files in `dir`, by frame id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSet {
    pub geometric: BTreeMap<u64, PathBuf>,
    pub salient: BTreeMap<u64, PathBuf>,
}

impl FeatureSet {
    pub fn scan(dir: &Path) -> Result<Self, PipelineError> {
        let mut set = FeatureSet::default();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let mut parts = name.split('.');
            let (Some(id), Some(tag), Some("hgif"), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                continue;
            };
            let (Ok(id), Ok(family)) = (id.parse::<u64>(), tag.parse::<Family>()) else {
                continue;
            };
            match family {
                Family::Geometric => set.geometric.insert(id, path),
                Family::Salient => set.salient.insert(id, path),
            };
        }
        Ok(set)
    }

    pub fn family(&self, family: Family) -> &BTreeMap<u64, PathBuf> {
        match family {
            Family::Geometric => &self.geometric,
            Family::Salient => &self.salient,
        }
    }

    /// Frame ids that have both families, ascending.
    pub fn paired_frames(&self) -> Vec<u64> {
        self.geometric
            .keys()
            .filter(|id| self.salient.contains_key(id))
            .copied()
            .collect()
    }

    pub fn load(&self, family: Family, frame: u64) -> Result<FrameFeatures, PipelineError> {
        let path = self
            .family(family)
            .get(&frame)
            .ok_or(PipelineError::MissingInput("feature file"))?;
        read_feature_file(path).map_err(|e| PipelineError::File(path.clone(), e))
    }

    pub fn load_all(&self, family: Family) -> Result<Vec<FrameFeatures>, PipelineError> {
        self.family(family)
            .keys()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&&id| self.load(family, id))
            .collect()
    }
}

pub fn train_vocab(features: &Path, family: Family, cfg: &RunConfig) -> Result<Vocabulary, PipelineError> {
    let frames = FeatureSet::scan(features)?.load_all(family)?;
    let (k, depth) = cfg.vocab.shape(family);
    Ok(Vocabulary::train_from_features(
        family,
        &frames,
        k,
        depth,
        cfg.vocab.seed,
    )?)
}

/// Both BoW vectors of one frame.
pub fn quantize_pair(
    vocab_s: &Vocabulary,
    vocab_g: &Vocabulary,
    sal: &FrameFeatures,
    geo: &FrameFeatures,
) -> Result<(BowVector, BowVector), VocabError> {
    Ok((vocab_s.quantize(sal)?, vocab_g.quantize(geo)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectRun {
    pub detections: Vec<LoopDetection>,
    pub frames: usize,
    pub stored: usize,
    pub timings: Timings,
}

/// Loads and quantizes frames in parallel, then feeds them to the detector
/// one at a time in frame order.
pub fn detect_features(
    features: &Path,
    vocab_s: &Vocabulary,
    vocab_g: &Vocabulary,
    cfg: &RunConfig,
) -> Result<DetectRun, PipelineError> {
    let set = FeatureSet::scan(features)?;
    let ids = set.paired_frames();
    let bows: Vec<Result<(BowVector, BowVector, Timings), PipelineError>> = pool(cfg.workers)?.install(|| {
        ids.par_iter()
            .map(|&id| {
                let mut t = Timings::default();
                let start = Instant::now();
                let sal = set.load(Family::Salient, id)?;
                let geo = set.load(Family::Geometric, id)?;
                t.record("load", start);
                let start = Instant::now();
                let (s, g) = quantize_pair(vocab_s, vocab_g, &sal, &geo)?;
                t.record("quantize", start);
                Ok((s, g, t))
            })
            .map(|r| r.map_err(PipelineError::at(0)))
            .collect()
    });
    let mut timings = Timings::default();
    let mut det = LoopDetector::new(cfg.fusion);
    for (&id, r) in ids.iter().zip(bows) {
        let (s, g, t) = r.map_err(|e| match e {
            PipelineError::Frame { source, .. } => PipelineError::Frame { frame: id, source },
            e => e,
        })?;
        timings.merge(&t);
        let start = Instant::now();
        det.process(id, &s, &g)?;
        timings.record("detect", start);
    }
    Ok(DetectRun {
        detections: det.detections().to_vec(),
        frames: ids.len(),
        stored: det.store().len(),
        timings,
    })
}

/// Detections stream: `#` header lines echoing the config, one
/// tab-separated row per detection, then optional timing comments.
pub fn render_detections(run: &DetectRun, cfg: &RunConfig, with_timings: bool) -> String {
    let mut out = String::from("# hgi detections\n");
    let _ = writeln!(out, "# config {}", cfg.to_json());
    let _ = writeln!(out, "# frames={} stored={}", run.frames, run.stored);
    out.push_str("# query\tcandidate\ts\td_s\td_g\n");
    for d in &run.detections {
        out.push_str(&d.to_tsv());
        out.push('\n');
    }
    if with_timings {
        out.push_str(&run.timings.to_comment_lines());
    }
    out
}

/// Similarity histogram pooled over every frame with both families.
pub fn similarity_histogram(features: &Path, bins: usize) -> Result<SimilarityHistogram, PipelineError> {
    let set = FeatureSet::scan(features)?;
    let mut total = vec![0u64; bins];
    let mut skipped = 0;
    for id in set.paired_frames() {
        let geo = set.load(Family::Geometric, id)?;
        let sal = set.load(Family::Salient, id)?;
        if geo.is_empty() || sal.is_empty() {
            continue;
        }
        let (c, s) = similarity_counts(&geo, &sal, bins)?;
        total.iter_mut().zip(c).for_each(|(t, c)| *t += c);
        skipped += s;
    }
    Ok(SimilarityHistogram::from_counts(&total, skipped)?)
}

/// Result of [`run_sequence`].
#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub extract: ExtractSummary,
    pub vocab_s: Vocabulary,
    pub vocab_g: Vocabulary,
    pub detect: DetectRun,
}

/// Extracts every third frame, trains both vocabularies on the result and
/// runs detection. Features and vocabularies are written under `work`.
pub fn run_sequence(
    manifest: &SequenceManifest,
    backend: Backend,
    work: &Path,
    cfg: &RunConfig,
) -> Result<SequenceRun, PipelineError> {
    let features = work.join("features");
    let extract = extract(manifest, backend, true, &features, cfg)?;
    let vocab_s = train_vocab(&features, Family::Salient, cfg)?;
    let vocab_g = train_vocab(&features, Family::Geometric, cfg)?;
    vocab_s.save(work.join("vocab_s.hgiv"))?;
    vocab_g.save(work.join("vocab_g.hgiv"))?;
    let detect = detect_features(&features, &vocab_s, &vocab_g, cfg)?;
    Ok(SequenceRun {
        extract,
        vocab_s,
        vocab_g,
        detect,
    })
}
