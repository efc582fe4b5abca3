//! Three-stage quality filter (crowding, keypoint alignment, head pose) and
//! the aggregate statistics over its verdicts.
//!
//! Every stage passes on a strict comparison: at most `max_persons` people,
//! OKS strictly above the threshold, and no head-pose axis off by more than
//! the threshold. All stages are evaluated for every sample.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body_model::{wrap_degrees, EulerAngles};
use crate::scoring::{OksReport, OksStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("missing score: {0}")]
    Missing(&'static str),
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub max_persons: u32,
    pub oks_threshold: f64,
    pub head_pose_threshold_deg: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_persons: 5,
            oks_threshold: 0.8,
            head_pose_threshold_deg: 25.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.max_persons < 1 {
            return Err(FilterError::InvalidConfig("max_persons must be at least 1".into()));
        }
        if !(self.oks_threshold > 0.0 && self.oks_threshold < 1.0) {
            return Err(FilterError::InvalidConfig(format!("oks_threshold {} outside (0, 1)", self.oks_threshold)));
        }
        if !(self.head_pose_threshold_deg > 0.0 && self.head_pose_threshold_deg.is_finite()) {
            return Err(FilterError::InvalidConfig(format!(
                "head_pose_threshold_deg {} must be positive",
                self.head_pose_threshold_deg
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Crowding,
    Oks,
    HeadPose,
}

pub const STAGES: [Stage; 3] = [Stage::Crowding, Stage::Oks, Stage::HeadPose];

pub fn filter_crowding(person_count: u32, cfg: &FilterConfig) -> bool {
    person_count <= cfg.max_persons
}

/// Passes iff the sample was scored and its OKS is strictly above the threshold.
pub fn filter_oks(report: &OksReport, cfg: &FilterConfig) -> bool {
    report.status == OksStatus::Scored && report.oks > cfg.oks_threshold
}

/// Per-axis absolute angular difference in `[0, 180]`, ordered roll, pitch, yaw.
pub fn head_pose_errors(gt: &EulerAngles, pred: &EulerAngles) -> [f64; 3] {
    let (g, p) = (gt.as_array(), pred.as_array());
    std::array::from_fn(|i| wrap_degrees(p[i] - g[i]).abs())
}

/// Passes iff no axis error exceeds the threshold; also returns the errors.
pub fn filter_head_pose(gt: &EulerAngles, pred: &EulerAngles, cfg: &FilterConfig) -> (bool, [f64; 3]) {
    let err = head_pose_errors(gt, pred);
    (err.iter().all(|e| *e <= cfg.head_pose_threshold_deg), err)
}

/// Filter inputs for one sample; any may be absent if its client failed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub person_count: Option<u32>,
    pub oks: Option<OksReport>,
    pub gt_head_pose: Option<EulerAngles>,
    pub pred_head_pose: Option<EulerAngles>,
}

impl SampleScores {
    pub fn is_complete(&self) -> bool {
        self.person_count.is_some() && self.oks.is_some() && self.gt_head_pose.is_some() && self.pred_head_pose.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub passed: bool,
    pub failed_stages: Vec<Stage>,
    pub person_count: u32,
    pub oks: f64,
    pub oks_status: OksStatus,
    /// Roll, pitch, yaw.
    pub head_pose_err_deg: [f64; 3],
}

pub fn run_filters(scores: &SampleScores, cfg: &FilterConfig) -> Result<FilterVerdict, FilterError> {
    let person_count = scores.person_count.ok_or(FilterError::Missing("person_count"))?;
    let report = scores.oks.as_ref().ok_or(FilterError::Missing("oks"))?;
    let gt = scores.gt_head_pose.as_ref().ok_or(FilterError::Missing("gt_head_pose"))?;
    let pred = scores.pred_head_pose.as_ref().ok_or(FilterError::Missing("pred_head_pose"))?;
    let mut failed_stages = Vec::new();
    if !filter_crowding(person_count, cfg) {
        failed_stages.push(Stage::Crowding);
    }
    if !filter_oks(report, cfg) {
        failed_stages.push(Stage::Oks);
    }
    let (head_ok, head_pose_err_deg) = filter_head_pose(gt, pred, cfg);
    if !head_ok {
        failed_stages.push(Stage::HeadPose);
    }
    Ok(FilterVerdict {
        passed: failed_stages.is_empty(),
        failed_stages,
        person_count,
        oks: report.oks,
        oks_status: report.status,
        head_pose_err_deg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            hi,
            counts: vec![0; bins],
        }
    }

    /// Uniform bins `[lo + k w, lo + (k+1) w)`; values at or beyond `hi` go in
    /// the last bin, values below `lo` in the first.
    pub fn add(&mut self, x: f64) {
        let n = self.counts.len();
        let k = ((x - self.lo) / (self.hi - self.lo) * n as f64).floor();
        let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(n - 1) };
        self.counts[k] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + k as f64 * w, self.lo + (k + 1) as f64 * w)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRates {
    pub crowding: Option<f64>,
    pub oks: Option<f64>,
    pub head_pose: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    /// `None` when there are no verdicts.
    pub pass_rate: Option<f64>,
    pub stage_pass_rates: StageRates,
    pub stage_failures: [usize; 3],
    pub no_detection: usize,
    /// 50 bins over `[0, 1]`.
    pub oks_histogram: Histogram,
    /// 36 bins over `[0, 180]` each, roll, pitch, yaw.
    pub head_pose_histograms: [Histogram; 3],
}

pub const OKS_BINS: usize = 50;
pub const HEAD_POSE_BINS: usize = 36;

pub fn filter_stats(verdicts: &[FilterVerdict]) -> FilterStats {
    let mut oks_histogram = Histogram::new(0.0, 1.0, OKS_BINS);
    let mut head_pose_histograms = std::array::from_fn(|_| Histogram::new(0.0, 180.0, HEAD_POSE_BINS));
    let mut stage_failures = [0usize; 3];
    let mut passed = 0;
    let mut no_detection = 0;
    for v in verdicts {
        passed += v.passed as usize;
        no_detection += (v.oks_status == OksStatus::NoDetection) as usize;
        for (i, stage) in STAGES.iter().enumerate() {
            stage_failures[i] += v.failed_stages.contains(stage) as usize;
        }
        oks_histogram.add(v.oks);
        for (h, e) in head_pose_histograms.iter_mut().zip(v.head_pose_err_deg) {
            h.add(e);
        }
    }
    let total = verdicts.len();
    let rate = |fails: usize| (total > 0).then(|| (total - fails) as f64 / total as f64);
    FilterStats {
        total,
        passed,
        failed: total - passed,
        pass_rate: rate(total - passed),
        stage_pass_rates: StageRates {
            crowding: rate(stage_failures[0]),
            oks: rate(stage_failures[1]),
            head_pose: rate(stage_failures[2]),
        },
        stage_failures,
        no_detection,
        oks_histogram,
        head_pose_histograms,
    }
}

impl FilterStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    /// `section,key,bin_start,bin_end,value` rows: summary figures first
    /// (`NA` for undefined rates), then every histogram bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,key,bin_start,bin_end,value\n");
        let rate = |r: Option<f64>| r.map_or("NA".to_string(), |v| v.to_string());
        let summary = [
            ("total", self.total.to_string()),
            ("passed", self.passed.to_string()),
            ("failed", self.failed.to_string()),
            ("no_detection", self.no_detection.to_string()),
            ("pass_rate", rate(self.pass_rate)),
            ("pass_rate_crowding", rate(self.stage_pass_rates.crowding)),
            ("pass_rate_oks", rate(self.stage_pass_rates.oks)),
            ("pass_rate_head_pose", rate(self.stage_pass_rates.head_pose)),
        ];
        for (k, v) in summary {
            out.push_str(&format!("summary,{k},,,{v}\n"));
        }
        let hists = [
            ("oks", &self.oks_histogram),
            ("head_pose_roll", &self.head_pose_histograms[0]),
            ("head_pose_pitch", &self.head_pose_histograms[1]),
            ("head_pose_yaw", &self.head_pose_histograms[2]),
        ];
        for (name, h) in hists {
            for (k, c) in h.counts.iter().enumerate() {
                let (a, b) = h.edges(k);
                out.push_str(&format!("histogram,{name},{a},{b},{c}\n"));
            }
        }
        out
    }
}
