//! Seeded mock clients.
//!
//! Mocks read the [`SampleContext`] of each request: the keypoint detector
//! perturbs the ground-truth keypoints, the head-pose estimator perturbs the
//! ground-truth head pose, and so on. All randomness comes from the
//! per-sample seed, so results do not depend on call order or threads.
//!
//! Difficulty: the detector's expected OKS is a sigmoid in one shape
//! coefficient (see [`Hardness`]). A [`DefectSchedule`] can additionally make
//! every sample whose ordinal falls on given residues fail one filter stage.

use std::collections::HashSet;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::*;
use crate::body_model::wrap_degrees;
use crate::render::{read_png, write_png};
use crate::scoring::OksConfig;
use crate::seeds;

/// Expected detector OKS as a function of `beta[beta_index]`:
/// `q_easy + (q_hard - q_easy) * sigmoid(steepness * (beta - center))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hardness {
    pub beta_index: usize,
    pub q_easy: f64,
    pub q_hard: f64,
    pub center: f64,
    pub steepness: f64,
}

impl Default for Hardness {
    fn default() -> Self {
        Self {
            beta_index: 0,
            q_easy: 0.98,
            q_hard: 0.84,
            center: 0.0,
            steepness: 2.0,
        }
    }
}

impl Hardness {
    pub fn expected_oks(&self, params: &SmplxParams) -> f64 {
        let b = params.beta.get(self.beta_index).copied().unwrap_or(0.0);
        let sig = 1.0 / (1.0 + (-self.steepness * (b - self.center)).exp());
        self.q_easy + (self.q_hard - self.q_easy) * sig
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointNoise {
    /// Ground truth unchanged.
    None,
    /// Isotropic Gaussian offsets with per-coordinate std `τ s κ_i`,
    /// `τ² = 1/q - 1`, so the expected OKS is exactly `q`.
    Gaussian,
    /// Each keypoint's OKS term is drawn uniformly from `[q - w, q + w]`
    /// with `w = min(1 - q, q - floor)` and placed in a random direction:
    /// expected OKS `q`, realized OKS never below `floor`.
    #[default]
    Bounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockKeypointConfig {
    pub noise: KeypointNoise,
    pub floor: f64,
    /// Added to every predicted keypoint, in pixels.
    pub offset_px: [f64; 2],
    pub hardness: Hardness,
    /// Probability of reporting nobody.
    pub miss_rate: f64,
}

impl Default for MockKeypointConfig {
    fn default() -> Self {
        Self {
            noise: KeypointNoise::Bounded,
            floor: 0.81,
            offset_px: [0.0, 0.0],
            hardness: Hardness::default(),
            miss_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockPersonConfig {
    /// Poisson rate of extra people.
    pub extra_rate: f64,
    pub max_extra: u32,
}

impl Default for MockPersonConfig {
    fn default() -> Self {
        Self {
            extra_rate: 0.3,
            max_extra: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockHeadPoseConfig {
    pub sigma_deg: f64,
    /// Per-axis noise is clipped to `±clip_deg`.
    pub clip_deg: f64,
}

impl Default for MockHeadPoseConfig {
    fn default() -> Self {
        Self {
            sigma_deg: 3.0,
            clip_deg: 9.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockGeneratorConfig {
    /// Peak brightness of the noise background.
    pub noise_level: f64,
}

impl Default for MockGeneratorConfig {
    fn default() -> Self {
        Self { noise_level: 0.25 }
    }
}

/// Samples whose `ordinal % period` is listed fail the matching filter
/// stage: crowding (`crowd_size` people), OKS (keypoints shifted by
/// `misalign_scales` object scales) or head pose (yaw off by
/// `head_pose_offset_deg`). `period = 0` disables the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefectSchedule {
    pub period: u64,
    pub crowding: Vec<u64>,
    pub misaligned: Vec<u64>,
    pub head_pose: Vec<u64>,
    pub crowd_size: u32,
    pub misalign_scales: f64,
    pub head_pose_offset_deg: f64,
}

impl Default for DefectSchedule {
    fn default() -> Self {
        Self {
            period: 0,
            crowding: Vec::new(),
            misaligned: Vec::new(),
            head_pose: Vec::new(),
            crowd_size: 7,
            misalign_scales: 1.0,
            head_pose_offset_deg: 60.0,
        }
    }
}

impl DefectSchedule {
    fn hits(&self, residues: &[u64], ordinal: u64) -> bool {
        self.period > 0 && residues.contains(&(ordinal % self.period))
    }
}

/// Failure injection by sample ordinal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureInjection {
    /// Every call fails.
    pub permanent: Vec<u64>,
    /// Only the first call fails.
    pub transient: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockFailures {
    pub generator: FailureInjection,
    pub keypoints: FailureInjection,
    pub persons: FailureInjection,
    pub head_pose: FailureInjection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub generator: MockGeneratorConfig,
    pub keypoints: MockKeypointConfig,
    pub persons: MockPersonConfig,
    pub head_pose: MockHeadPoseConfig,
    pub defects: DefectSchedule,
    pub failures: MockFailures,
}

struct Injector {
    spec: FailureInjection,
    seen: Mutex<HashSet<u64>>,
}

impl Injector {
    fn new(spec: &FailureInjection) -> Self {
        Self {
            spec: spec.clone(),
            seen: Mutex::new(HashSet::new()),
        }
    }

    fn check(&self, ordinal: u64) -> Result<(), ClientError> {
        if self.spec.permanent.contains(&ordinal) {
            return Err(ClientError::Failed(format!("injected failure for sample {ordinal}")));
        }
        if self.spec.transient.contains(&ordinal) && self.seen.lock().expect("poisoned").insert(ordinal) {
            return Err(ClientError::Transport(format!("injected transient failure for sample {ordinal}")));
        }
        Ok(())
    }
}

fn missing(what: &str) -> ClientError {
    ClientError::Protocol(format!("mock needs {what} in the sample context"))
}

pub struct MockGenerator {
    cfg: MockGeneratorConfig,
    failures: Injector,
}

impl MockGenerator {
    pub fn new(cfg: &MockConfig) -> Self {
        Self {
            cfg: cfg.generator.clone(),
            failures: Injector::new(&cfg.failures.generator),
        }
    }
}

impl Generator for MockGenerator {
    /// Mesh control pixels over skeleton pixels over seeded noise.
    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse, ClientError> {
        self.failures.check(request.context.ordinal)?;
        let out = request
            .output_png_path
            .clone()
            .ok_or_else(|| ClientError::Protocol("mock generator needs output_png_path".into()))?;
        let read = |p: &str| read_png(p).map_err(|e| ClientError::Failed(e.to_string()));
        let (w, h, control) = read(&request.control_png_path)?;
        let (sw, sh, skeleton) = read(&request.skeleton_png_path)?;
        if (w, h) != (sw, sh) {
            return Err(ClientError::Protocol("control and skeleton sizes differ".into()));
        }
        let mut rng = seeds::rng(request.seed, "mock-generator");
        let level = (self.cfg.noise_level.clamp(0.0, 1.0) * 255.0) as u32;
        let mut image = Vec::with_capacity(control.len());
        for (c, s) in control.chunks_exact(3).zip(skeleton.chunks_exact(3)) {
            let noise: [u8; 3] = std::array::from_fn(|_| (rng.next_u32() % (level + 1)) as u8);
            let px = if c != [0, 0, 0] {
                c
            } else if s != [0, 0, 0] {
                s
            } else {
                &noise[..]
            };
            image.extend_from_slice(px);
        }
        if let Some(dir) = Path::new(&out).parent() {
            std::fs::create_dir_all(dir).map_err(|e| ClientError::Failed(e.to_string()))?;
        }
        write_png(&out, w, h, &image).map_err(|e| ClientError::Failed(e.to_string()))?;
        Ok(GenerateResponse { image_png_path: out })
    }
}

pub struct MockKeypointDetector {
    cfg: MockKeypointConfig,
    defects: DefectSchedule,
    oks: OksConfig,
    failures: Injector,
}

impl MockKeypointDetector {
    pub fn new(cfg: &MockConfig, oks: &OksConfig) -> Self {
        Self {
            cfg: cfg.keypoints.clone(),
            defects: cfg.defects.clone(),
            oks: oks.clone(),
            failures: Injector::new(&cfg.failures.keypoints),
        }
    }

    /// The OKS this detector achieves on average for a label, defects aside.
    pub fn expected_oks(&self, params: &SmplxParams) -> f64 {
        match self.cfg.noise {
            KeypointNoise::None => 1.0,
            _ => self.cfg.hardness.expected_oks(params),
        }
    }

    fn perturb(&self, gt: &Keypoints2D, q: f64, rng: &mut impl Rng) -> Keypoints2D {
        let scale = self.oks.scale(gt).unwrap_or(1.0);
        let mut points = gt.points.clone();
        for (i, p) in points.iter_mut().enumerate() {
            let k = self.oks.sigmas.get(i).copied().unwrap_or(0.1);
            let (dx, dy) = match self.cfg.noise {
                KeypointNoise::None => (0.0, 0.0),
                KeypointNoise::Gaussian => {
                    let tau = (1.0 / q - 1.0).max(0.0).sqrt();
                    let (x, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                    (tau * scale * k * x, tau * scale * k * y)
                }
                KeypointNoise::Bounded => {
                    let w = (1.0 - q).min(q - self.cfg.floor).max(0.0);
                    let term: f64 = if w > 0.0 { rng.random_range(q - w..=q + w) } else { q };
                    let d = scale * k * (-2.0 * term.min(1.0).ln()).max(0.0).sqrt();
                    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    (d * phi.cos(), d * phi.sin())
                }
            };
            *p = [p[0] + dx + self.cfg.offset_px[0], p[1] + dy + self.cfg.offset_px[1]];
        }
        Keypoints2D::visible_points(points)
    }
}

impl KeypointDetector for MockKeypointDetector {
    fn detect(&self, request: &ImageRequest) -> Result<KeypointResponse, ClientError> {
        let ctx = &request.context;
        self.failures.check(ctx.ordinal)?;
        let gt = ctx.gt_keypoints.as_ref().ok_or_else(|| missing("ground-truth keypoints"))?;
        let mut rng = seeds::rng(ctx.seed, "mock-keypoints");
        if self.cfg.miss_rate > 0.0 && rng.random::<f64>() < self.cfg.miss_rate {
            return Ok(KeypointResponse::default());
        }
        let q = ctx.params.as_ref().map_or(1.0, |p| self.expected_oks(p));
        let mut pred = self.perturb(gt, q, &mut rng);
        if self.defects.hits(&self.defects.misaligned, ctx.ordinal) {
            let shift = self.defects.misalign_scales * self.oks.scale(gt).unwrap_or(100.0);
            pred = pred.map_points(|p| [p[0] + shift, p[1]]);
        }
        Ok(KeypointResponse {
            persons: vec![DetectedPerson::from_keypoints(&pred, 0.9)],
        })
    }
}

pub struct MockPersonDetector {
    cfg: MockPersonConfig,
    defects: DefectSchedule,
    failures: Injector,
}

impl MockPersonDetector {
    pub fn new(cfg: &MockConfig) -> Self {
        Self {
            cfg: cfg.persons.clone(),
            defects: cfg.defects.clone(),
            failures: Injector::new(&cfg.failures.persons),
        }
    }
}

impl PersonDetector for MockPersonDetector {
    fn count(&self, request: &ImageRequest) -> Result<PersonCountResponse, ClientError> {
        let ctx = &request.context;
        self.failures.check(ctx.ordinal)?;
        if self.defects.hits(&self.defects.crowding, ctx.ordinal) {
            return Ok(PersonCountResponse {
                count: self.defects.crowd_size,
            });
        }
        let mut rng = seeds::rng(ctx.seed, "mock-persons");
        let extra = match Poisson::new(self.cfg.extra_rate) {
            Ok(p) => p.sample(&mut rng) as u32,
            Err(_) => 0,
        };
        Ok(PersonCountResponse {
            count: 1 + extra.min(self.cfg.max_extra),
        })
    }
}

pub struct MockHeadPose {
    cfg: MockHeadPoseConfig,
    defects: DefectSchedule,
    failures: Injector,
}

impl MockHeadPose {
    pub fn new(cfg: &MockConfig) -> Self {
        Self {
            cfg: cfg.head_pose.clone(),
            defects: cfg.defects.clone(),
            failures: Injector::new(&cfg.failures.head_pose),
        }
    }
}

impl HeadPoseEstimator for MockHeadPose {
    fn head_pose(&self, request: &ImageRequest) -> Result<EulerAngles, ClientError> {
        let ctx = &request.context;
        self.failures.check(ctx.ordinal)?;
        let gt = ctx.gt_head_pose.ok_or_else(|| missing("ground-truth head pose"))?;
        let mut rng = seeds::rng(ctx.seed, "mock-head-pose");
        let mut noise = || -> f64 {
            match Normal::new(0.0, self.cfg.sigma_deg) {
                Ok(n) => n.sample(&mut rng).clamp(-self.cfg.clip_deg, self.cfg.clip_deg),
                Err(_) => 0.0,
            }
        };
        let mut out = EulerAngles::new(
            wrap_degrees(gt.roll + noise()),
            wrap_degrees(gt.pitch + noise()),
            wrap_degrees(gt.yaw + noise()),
        );
        if self.defects.hits(&self.defects.head_pose, ctx.ordinal) {
            out.yaw = wrap_degrees(out.yaw + self.defects.head_pose_offset_deg);
        }
        Ok(out)
    }
}

/// Captions from the parameter summary.
pub struct MockCaptioner;

impl Captioner for MockCaptioner {
    fn caption(&self, request: &CaptionRequest) -> Result<CaptionResponse, ClientError> {
        Ok(CaptionResponse {
            caption: format!("a photo of a person, {}", request.params_summary),
        })
    }
}

impl Clients {
    pub fn mock(cfg: &MockConfig, oks: &OksConfig) -> Self {
        Self {
            generator: Arc::new(MockGenerator::new(cfg)),
            keypoints: Arc::new(MockKeypointDetector::new(cfg, oks)),
            persons: Arc::new(MockPersonDetector::new(cfg)),
            head_pose: Arc::new(MockHeadPose::new(cfg)),
            captioner: Arc::new(MockCaptioner),
        }
    }
}
