//! Run configuration shared by every pipeline stage.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::HarrisParams;
use crate::salient::DEFAULT_SAMPLE_COUNT;
use crate::types::{DedupParams, Family, FusionParams};
use crate::vocab::{DEFAULT_BRANCHING, DEFAULT_DEPTH};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-family override of the vocabulary shape.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabShape {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u16>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub depth: Option<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub k: u16,
    #[serde(rename = "L")]
    pub depth: u16,
    pub seed: u64,
    pub salient: VocabShape,
    pub geometric: VocabShape,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            k: DEFAULT_BRANCHING,
            depth: DEFAULT_DEPTH,
            seed: 0,
            salient: VocabShape::default(),
            geometric: VocabShape::default(),
        }
    }
}

impl VocabConfig {
    /// `(k, L)` for one family, after overrides.
    pub fn shape(&self, family: Family) -> (u16, u16) {
        let o = match family {
            Family::Salient => self.salient,
            Family::Geometric => self.geometric,
        };
        (o.k.unwrap_or(self.k), o.depth.unwrap_or(self.depth))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub count: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            count: DEFAULT_SAMPLE_COUNT,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Seed for one frame, so frames can be sampled in any order.
    pub fn frame_seed(&self, frame_id: u64) -> u64 {
        self.seed ^ frame_id.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Ground-truth loop radius in metres.
    pub radius: f64,
    pub min_gap: u64,
    pub tol: u64,
    pub align: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            radius: 10.0,
            min_gap: 50,
            tol: 10,
            align: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dedup: DedupParams,
    pub fusion: FusionParams,
    pub vocab: VocabConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
    pub geometric: HarrisParams,
    /// Extraction worker threads; 0 picks one per core.
    pub workers: usize,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        for f in [Family::Salient, Family::Geometric] {
            let (k, depth) = self.vocab.shape(f);
            if k < 2 {
                return bad("vocab.k must be at least 2");
            }
            if depth == 0 {
                return bad("vocab.L must be at least 1");
            }
        }
        if !(self.eval.radius > 0.0) {
            return bad("eval.radius must be positive");
        }
        let g = &self.geometric;
        if !(g.k.is_finite() && g.k > 0.0) || !(g.rel_threshold >= 0.0 && g.rel_threshold < 1.0) {
            return bad("geometric.k must be positive and rel_threshold in [0, 1)");
        }
        if g.descriptor_len < crate::types::SAL_DESCRIPTOR_LEN {
            return bad("geometric.descriptor_len must be at least 128");
        }
        Ok(())
    }
}
