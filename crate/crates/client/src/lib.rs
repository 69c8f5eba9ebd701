//! Typed client for the detection service.

use std::path::PathBuf;

use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use hgi_core::api::{
    AteRequest, AteResponse, CreateSession, DetectionsResponse, ErrorBody, FeaturesWire, FrameSubmission,
    FuseRequest, FuseResponse, Health, PrecisionRecallRequest, PrecisionRecallResponse, SessionInfo,
};
use hgi_core::config::RunConfig;
use hgi_core::eval::{LoopLabelSet, Trajectory};
use hgi_core::loopdet::FrameOutcome;
use hgi_core::{FrameFeatures, FusionParams};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server answered {status}: {message}")]
    Status { status: StatusCode, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn call<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T, ClientError> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|e| e.error).unwrap_or(text);
        Err(ClientError::Status { status, message })
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.call::<(), _>(Method::GET, "/health", None).await
    }

    pub async fn fuse(&self, d_s: f64, d_g: f64, fusion: FusionParams) -> Result<f64, ClientError> {
        let r: FuseResponse = self
            .call(Method::POST, "/v1/fuse", Some(&FuseRequest { d_s, d_g, fusion }))
            .await?;
        Ok(r.s)
    }

    /// Opens a session on vocabularies stored at server-side paths.
    pub async fn create_session(
        &self,
        vocab_s: impl Into<PathBuf>,
        vocab_g: impl Into<PathBuf>,
        config: RunConfig,
    ) -> Result<Session<'_>, ClientError> {
        let req = CreateSession {
            vocab_s: vocab_s.into(),
            vocab_g: vocab_g.into(),
            config,
        };
        let info: SessionInfo = self.call(Method::POST, "/v1/sessions", Some(&req)).await?;
        Ok(Session { client: self, info })
    }

    pub async fn precision_recall(
        &self,
        detections: &[(u64, u64)],
        labels: &LoopLabelSet,
        tol: u64,
    ) -> Result<PrecisionRecallResponse, ClientError> {
        let req = PrecisionRecallRequest {
            detections: detections.to_vec(),
            labels: labels.clone(),
            tol,
        };
        self.call(Method::POST, "/v1/eval/precision-recall", Some(&req)).await
    }

    pub async fn ate(&self, pred: &Trajectory, gt: &Trajectory, align: bool) -> Result<f64, ClientError> {
        let points = |t: &Trajectory| t.iter().map(|(id, p)| (id, [p.x, p.y, p.z])).collect();
        let req = AteRequest {
            pred: points(pred),
            gt: points(gt),
            align,
        };
        let r: AteResponse = self.call(Method::POST, "/v1/eval/ate", Some(&req)).await?;
        Ok(r.ate_rmse)
    }
}

/// An open detection session. Dropping it leaves the session on the
/// server; call [`Session::close`] to release it.
#[derive(Debug)]
pub struct Session<'a> {
    client: &'a Client,
    info: SessionInfo,
}

impl Session<'_> {
    pub fn id(&self) -> &str {
        &self.info.session_id
    }

    pub fn info(&self) -> &SessionInfo {
        &self.info
    }

    pub async fn submit(&self, salient: &FrameFeatures, geometric: &FrameFeatures) -> Result<FrameOutcome, ClientError> {
        let body = FrameSubmission {
            salient: FeaturesWire::from(salient),
            geometric: FeaturesWire::from(geometric),
        };
        let path = format!("/v1/sessions/{}/frames", self.id());
        self.client.call(Method::POST, &path, Some(&body)).await
    }

    pub async fn detections(&self) -> Result<DetectionsResponse, ClientError> {
        let path = format!("/v1/sessions/{}/detections", self.id());
        self.client.call::<(), _>(Method::GET, &path, None).await
    }

    pub async fn close(self) -> Result<(), ClientError> {
        let path = format!("/v1/sessions/{}", self.id());
        let resp = self
            .client
            .http
            .delete(format!("{}{path}", self.client.base))
            .send()
            .await?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(ClientError::Status {
                status: resp.status(),
                message: resp.text().await.unwrap_or_default(),
            })
        }
    }
}
