//! Contracts for the external neural components: image generator, keypoint
//! detector, person detector, head-pose estimator and captioner.
//!
//! Every client takes one JSON request and returns one JSON response. The
//! command and HTTP backends in [`remote`] speak that wire format directly;
//! the seeded mocks in [`mock`] additionally read the [`SampleContext`]
//! attached to each request, which never goes over the wire.

pub mod mock;
pub mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body_model::{EulerAngles, SmplxParams};
use crate::keypoints::Keypoints2D;

pub use remote::{Endpoint, RemoteClient};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("client reported failure: {0}")]
    Failed(String),
}

/// Ground truth known to the pipeline for one sample. Only mocks read it.
#[derive(Debug, Clone, Default)]
pub struct SampleContext {
    /// Position of the sample in the run.
    pub ordinal: u64,
    /// Per-sample seed.
    pub seed: u64,
    pub params: Option<SmplxParams>,
    pub gt_keypoints: Option<Keypoints2D>,
    pub gt_head_pose: Option<EulerAngles>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub control_png_path: String,
    pub skeleton_png_path: String,
    pub caption: String,
    pub seed: u64,
    /// Where the pipeline would like the image written. Clients may ignore it
    /// and return another path; the pipeline copies the result into place.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_png_path: Option<String>,
    #[serde(skip)]
    pub context: SampleContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_png_path: String,
}

/// Request shared by the three image-analysis clients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRequest {
    pub image_png_path: String,
    #[serde(skip)]
    pub context: SampleContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedPerson {
    /// `[x, y, confidence]` per keypoint.
    pub keypoints: Vec<[f64; 3]>,
}

impl DetectedPerson {
    /// Pixel positions; confidence is not used for scoring.
    pub fn to_keypoints(&self) -> Keypoints2D {
        Keypoints2D::visible_points(self.keypoints.iter().map(|k| [k[0], k[1]]).collect())
    }

    pub fn from_keypoints(k: &Keypoints2D, confidence: f64) -> Self {
        Self {
            keypoints: k.points.iter().map(|p| [p[0], p[1], confidence]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeypointResponse {
    pub persons: Vec<DetectedPerson>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonCountResponse {
    pub count: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub params_summary: String,
    #[serde(skip)]
    pub context: SampleContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub caption: String,
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse, ClientError>;
}

pub trait KeypointDetector: Send + Sync {
    fn detect(&self, request: &ImageRequest) -> Result<KeypointResponse, ClientError>;
}

pub trait PersonDetector: Send + Sync {
    fn count(&self, request: &ImageRequest) -> Result<PersonCountResponse, ClientError>;
}

pub trait HeadPoseEstimator: Send + Sync {
    fn head_pose(&self, request: &ImageRequest) -> Result<EulerAngles, ClientError>;
}

pub trait Captioner: Send + Sync {
    fn caption(&self, request: &CaptionRequest) -> Result<CaptionResponse, ClientError>;
}

/// The full set of clients a pipeline run talks to.
#[derive(Clone)]
pub struct Clients {
    pub generator: Arc<dyn Generator>,
    pub keypoints: Arc<dyn KeypointDetector>,
    pub persons: Arc<dyn PersonDetector>,
    pub head_pose: Arc<dyn HeadPoseEstimator>,
    pub captioner: Arc<dyn Captioner>,
}
