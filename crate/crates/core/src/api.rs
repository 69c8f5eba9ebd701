//! JSON bodies exchanged between the detection service and its clients.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::eval::{EvalReport, LoopLabelSet};
use crate::loopdet::LoopDetection;
use crate::types::{
    Descriptors, FrameFeatures, FusionParams, GeomDescriptor, InvariantError, Keypoint, SalDescriptor,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuseRequest {
    pub d_s: f64,
    pub d_g: f64,
    #[serde(default)]
    pub fusion: FusionParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuseResponse {
    pub s: f64,
}

/// Opens a detection session. Vocabulary paths are read by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub vocab_s: PathBuf,
    pub vocab_g: PathBuf,
    #[serde(default)]
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub salient_words: usize,
    pub geometric_words: usize,
}

/// One frame's features of a single family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FeaturesWire {
    Geometric {
        frame_id: u64,
        dim: usize,
        keypoints: Vec<Keypoint>,
        descriptors: Vec<Vec<f32>>,
    },
    Salient {
        frame_id: u64,
        keypoints: Vec<Keypoint>,
        descriptors: Vec<Vec<u8>>,
    },
}

impl From<&FrameFeatures> for FeaturesWire {
    fn from(f: &FrameFeatures) -> Self {
        let keypoints = f.keypoints().to_vec();
        match f.descriptors() {
            Descriptors::Geometric { dim, rows } => FeaturesWire::Geometric {
                frame_id: f.frame_id(),
                dim: *dim,
                keypoints,
                descriptors: rows.iter().map(|r| r.values().to_vec()).collect(),
            },
            Descriptors::Salient(rows) => FeaturesWire::Salient {
                frame_id: f.frame_id(),
                keypoints,
                descriptors: rows.iter().map(|r| r.bytes().to_vec()).collect(),
            },
        }
    }
}

impl TryFrom<FeaturesWire> for FrameFeatures {
    type Error = InvariantError;

    fn try_from(w: FeaturesWire) -> Result<Self, Self::Error> {
        match w {
            FeaturesWire::Geometric {
                frame_id,
                dim,
                keypoints,
                descriptors,
            } => {
                let rows = descriptors
                    .into_iter()
                    .map(GeomDescriptor::new)
                    .collect::<Result<Vec<_>, _>>()?;
                FrameFeatures::new(frame_id, keypoints, Descriptors::Geometric { dim, rows })
            }
            FeaturesWire::Salient {
                frame_id,
                keypoints,
                descriptors,
            } => {
                let rows = descriptors
                    .iter()
                    .map(|r| SalDescriptor::from_slice(r))
                    .collect::<Result<Vec<_>, _>>()?;
                FrameFeatures::new(frame_id, keypoints, Descriptors::Salient(rows))
            }
        }
    }
}

/// Both families of one frame. The frame ids must agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSubmission {
    pub salient: FeaturesWire,
    pub geometric: FeaturesWire,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsResponse {
    pub frames: u64,
    pub stored: usize,
    pub last_frame: Option<u64>,
    pub detections: Vec<LoopDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallRequest {
    pub detections: Vec<(u64, u64)>,
    pub labels: LoopLabelSet,
    pub tol: u64,
}

pub type PrecisionRecallResponse = EvalReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteRequest {
    pub pred: Vec<(u64, [f64; 3])>,
    pub gt: Vec<(u64, [f64; 3])>,
    #[serde(default = "yes")]
    pub align: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteResponse {
    pub ate_rmse: f64,
    pub align: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
