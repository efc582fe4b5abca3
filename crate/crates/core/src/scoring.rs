//! Object keypoint similarity between detected and reprojected keypoints.
//!
//! ```text
//! OKS = Σ_i exp(-d_i² / (2 s² κ_i²)) δ(v_i > 0) / Σ_i δ(v_i > 0)
//! ```
//!
//! `d_i` is the pixel distance, `v_i` the ground-truth visibility, `s` the
//! object scale and `κ_i` the per-keypoint constant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{ClientError, ImageRequest, KeypointDetector};
use crate::keypoints::{Keypoints2D, COCO_SIGMAS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("OKS undefined: no visible ground-truth keypoints")]
    Undefined,
    #[error("degenerate object scale: {0}")]
    DegenerateScale(String),
    #[error("keypoint count mismatch: {0}")]
    Dimension(String),
    #[error("invalid OKS config: {0}")]
    InvalidConfig(String),
}

/// How the object scale `s` is derived from the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ScaleMode {
    /// `sqrt(w h)` of the axis-aligned box around the visible keypoints.
    BoundingBox,
    /// `sqrt(area)` of the minimum-area rectangle (any orientation) around
    /// the visible keypoints. Unlike the axis-aligned box this does not
    /// change when the keypoints rotate.
    #[default]
    OrientedBox,
    /// A given scale in pixels.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OksConfig {
    /// `κ_i`. The defaults are twice the COCO sigmas, which is the constant
    /// the COCO evaluator effectively uses.
    pub sigmas: Vec<f64>,
    pub scale_mode: ScaleMode,
}

impl Default for OksConfig {
    fn default() -> Self {
        Self {
            sigmas: COCO_SIGMAS.iter().map(|s| 2.0 * s).collect(),
            scale_mode: ScaleMode::default(),
        }
    }
}

impl OksConfig {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.sigmas.is_empty() {
            return Err(ScoringError::InvalidConfig("no sigmas".into()));
        }
        if let Some(i) = self.sigmas.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(ScoringError::InvalidConfig(format!("sigma[{i}] = {} is not positive", self.sigmas[i])));
        }
        if let ScaleMode::Fixed(s) = self.scale_mode {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ScoringError::InvalidConfig(format!("fixed scale {s} is not positive")));
            }
        }
        Ok(())
    }

    pub fn scale(&self, gt: &Keypoints2D) -> Result<f64, ScoringError> {
        match self.scale_mode {
            ScaleMode::BoundingBox => object_scale(gt),
            ScaleMode::OrientedBox => oriented_scale(gt),
            ScaleMode::Fixed(s) => Ok(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OksStatus {
    #[default]
    Scored,
    /// The detector found nobody; `oks` is 0.
    NoDetection,
    /// No usable ground truth (nothing visible, or degenerate scale); `oks` is 0.
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OksReport {
    pub oks: f64,
    /// `exp(-d_i² / (2 s² κ_i²))` for visible keypoints, 0 for the rest.
    pub per_keypoint: Vec<f64>,
    pub visible: Vec<bool>,
    pub num_visible: usize,
    pub scale: f64,
    #[serde(default)]
    pub status: OksStatus,
}

impl OksReport {
    fn unscored(gt: &Keypoints2D, scale: f64, status: OksStatus) -> Self {
        Self {
            oks: 0.0,
            per_keypoint: vec![0.0; gt.len()],
            visible: gt.visible.clone(),
            num_visible: gt.num_visible(),
            scale,
            status,
        }
    }

    pub fn no_detection(gt: &Keypoints2D, scale: f64) -> Self {
        Self::unscored(gt, scale, OksStatus::NoDetection)
    }

    pub fn undefined(gt: &Keypoints2D) -> Self {
        Self::unscored(gt, 0.0, OksStatus::Undefined)
    }

    pub fn is_scored(&self) -> bool {
        self.status == OksStatus::Scored
    }
}

fn visible_extent(gt: &Keypoints2D) -> Result<([f64; 2], [f64; 2]), ScoringError> {
    if gt.num_visible() < 2 {
        return Err(ScoringError::DegenerateScale(format!("{} visible keypoints", gt.num_visible())));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in gt.iter_visible() {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Ok((lo, hi))
}

/// `sqrt(w h)` of the tight axis-aligned box around the visible keypoints.
pub fn object_scale(gt: &Keypoints2D) -> Result<f64, ScoringError> {
    let (lo, hi) = visible_extent(gt)?;
    let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    if !(area > 0.0 && area.is_finite()) {
        return Err(ScoringError::DegenerateScale(format!("bounding box area {area}")));
    }
    Ok(area.sqrt())
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull, counter-clockwise (monotone chain).
fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// `sqrt(area)` of the minimum-area enclosing rectangle of the visible keypoints.
pub fn oriented_scale(gt: &Keypoints2D) -> Result<f64, ScoringError> {
    visible_extent(gt)?;
    let hull = convex_hull(gt.iter_visible().copied().collect());
    if hull.len() < 3 {
        return Err(ScoringError::DegenerateScale("visible keypoints are collinear".into()));
    }
    let mut best = f64::INFINITY;
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = ex.hypot(ey);
        if len == 0.0 {
            continue;
        }
        let (ux, uy) = (ex / len, ey / len);
        let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let (dx, dy) = (p[0] - a[0], p[1] - a[1]);
            let u = dx * ux + dy * uy;
            let v = -dx * uy + dy * ux;
            lo_u = lo_u.min(u);
            hi_u = hi_u.max(u);
            lo_v = lo_v.min(v);
            hi_v = hi_v.max(v);
        }
        best = best.min((hi_u - lo_u) * (hi_v - lo_v));
    }
    if !(best > 0.0 && best.is_finite()) {
        return Err(ScoringError::DegenerateScale(format!("rectangle area {best}")));
    }
    Ok(best.sqrt())
}

/// OKS of `pred` against `gt`; visibility comes from `gt` only.
pub fn oks(pred: &Keypoints2D, gt: &Keypoints2D, cfg: &OksConfig) -> Result<OksReport, ScoringError> {
    if pred.len() != gt.len() || gt.len() != cfg.sigmas.len() {
        return Err(ScoringError::Dimension(format!(
            "pred {}, gt {}, sigmas {}",
            pred.len(),
            gt.len(),
            cfg.sigmas.len()
        )));
    }
    cfg.validate()?;
    let num_visible = gt.num_visible();
    if num_visible == 0 {
        return Err(ScoringError::Undefined);
    }
    let s = cfg.scale(gt)?;
    let mut per_keypoint = vec![0.0; gt.len()];
    let mut total = 0.0;
    for i in 0..gt.len() {
        if !gt.visible[i] {
            continue;
        }
        let dx = pred.points[i][0] - gt.points[i][0];
        let dy = pred.points[i][1] - gt.points[i][1];
        let k = cfg.sigmas[i];
        let term = (-(dx * dx + dy * dy) / (2.0 * s * s * k * k)).exp();
        per_keypoint[i] = term;
        total += term;
    }
    Ok(OksReport {
        oks: total / num_visible as f64,
        per_keypoint,
        visible: gt.visible.clone(),
        num_visible,
        scale: s,
        status: OksStatus::Scored,
    })
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// Runs the detector on a generated image and scores the candidate person
/// that best matches the ground truth.
///
/// Nobody detected gives `oks = 0` flagged [`OksStatus::NoDetection`]; no
/// usable ground truth gives `oks = 0` flagged [`OksStatus::Undefined`]
/// without calling the detector.
pub fn score_sample(
    request: &ImageRequest,
    gt: &Keypoints2D,
    detector: &dyn KeypointDetector,
    cfg: &OksConfig,
) -> Result<OksReport, ScoreError> {
    if gt.len() != cfg.sigmas.len() {
        return Err(ScoringError::Dimension(format!("gt {}, sigmas {}", gt.len(), cfg.sigmas.len())).into());
    }
    if gt.num_visible() == 0 {
        return Ok(OksReport::undefined(gt));
    }
    let scale = match cfg.scale(gt) {
        Ok(s) => s,
        Err(ScoringError::DegenerateScale(_)) => return Ok(OksReport::undefined(gt)),
        Err(e) => return Err(e.into()),
    };
    let response = detector.detect(request)?;
    let mut best: Option<OksReport> = None;
    for person in &response.persons {
        if person.keypoints.len() != gt.len() {
            return Err(ClientError::Protocol(format!(
                "detector returned {} keypoints, expected {}",
                person.keypoints.len(),
                gt.len()
            ))
            .into());
        }
        let report = oks(&person.to_keypoints(), gt, cfg)?;
        if best.as_ref().is_none_or(|b| report.oks > b.oks) {
            best = Some(report);
        }
    }
    Ok(best.unwrap_or_else(|| OksReport::no_detection(gt, scale)))
}
