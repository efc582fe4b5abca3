use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::CaptionTemplates;
use super::PipelineError;
use crate::body_model::{BodyModel, SmplxParams, NUM_BETAS, NUM_EXPRESSION};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    PoseBank,
    MotionSequences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseBankRecord {
    pub id: String,
    pub params: SmplxParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseBank {
    pub records: Vec<PoseBankRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub id: String,
    /// Fills the `{activity}` slot of caption templates when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<String>,
    pub frames: Vec<SmplxParams>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionSet {
    pub sequences: Vec<MotionSequence>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelSource {
    PoseBank(PoseBank),
    MotionSequences { set: MotionSet, frame_stride: usize },
}

/// One sampled label. Motion labels carry their sequence's activity.
#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub id: String,
    pub source: SourceKind,
    pub params: SmplxParams,
    pub caption: Option<String>,
    pub activity: Option<String>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

impl LabelSource {
    pub fn load_pose_bank(path: &Path) -> Result<Self, PipelineError> {
        Ok(Self::PoseBank(read_json(path)?))
    }

    pub fn load_motion(path: &Path, frame_stride: usize) -> Result<Self, PipelineError> {
        Ok(Self::MotionSequences {
            set: read_json(path)?,
            frame_stride,
        })
    }

    pub fn kind(&self) -> SourceKind {
        match self {
            Self::PoseBank(_) => SourceKind::PoseBank,
            Self::MotionSequences { .. } => SourceKind::MotionSequences,
        }
    }

    /// Every label the source can yield, in file order. Motion sequences
    /// contribute frames `0, stride, 2 stride, ...`.
    pub fn candidates(&self) -> Vec<Label> {
        match self {
            Self::PoseBank(bank) => bank
                .records
                .iter()
                .map(|r| Label {
                    id: format!("pose_bank/{}", r.id),
                    source: SourceKind::PoseBank,
                    params: r.params.clone(),
                    caption: r.caption.clone(),
                    activity: None,
                })
                .collect(),
            Self::MotionSequences { set, frame_stride } => set
                .sequences
                .iter()
                .flat_map(|seq| {
                    seq.frames
                        .iter()
                        .enumerate()
                        .step_by((*frame_stride).max(1))
                        .map(move |(f, params)| Label {
                            id: format!("motion/{}/{f}", seq.id),
                            source: SourceKind::MotionSequences,
                            params: params.clone(),
                            caption: None,
                            activity: seq.activity.clone(),
                        })
                })
                .collect(),
        }
    }

    /// Checks every record against the model's dimensions.
    pub fn validate(&self, model: &BodyModel) -> Result<(), PipelineError> {
        let check = |id: &str, p: &SmplxParams| {
            if p.theta.len() != model.num_joints() || p.beta.len() != NUM_BETAS || p.psi.len() != NUM_EXPRESSION {
                return Err(PipelineError::Config(format!(
                    "label {id}: theta/beta/psi lengths {}/{}/{}, expected {}/{NUM_BETAS}/{NUM_EXPRESSION}",
                    p.theta.len(),
                    p.beta.len(),
                    p.psi.len(),
                    model.num_joints()
                )));
            }
            let finite = p.theta.iter().flatten().chain(&p.beta).chain(&p.psi).chain(&p.translation).all(|v| v.is_finite());
            if !finite {
                return Err(PipelineError::Config(format!("label {id}: non-finite parameter")));
            }
            Ok(())
        };
        match self {
            Self::PoseBank(bank) => bank.records.iter().try_for_each(|r| check(&r.id, &r.params)),
            Self::MotionSequences { set, .. } => set
                .sequences
                .iter()
                .try_for_each(|s| s.frames.iter().try_for_each(|f| check(&s.id, f))),
        }
    }
}

/// Seeded uniform choice of `n` labels: without replacement when the source
/// has enough candidates, with replacement (and a warning) otherwise.
pub fn sample_labels(source: &LabelSource, n: usize, seed: u64) -> Result<Vec<Label>, PipelineError> {
    let pool = source.candidates();
    if pool.is_empty() {
        return Err(PipelineError::EmptySource(format!("{:?}", source.kind())));
    }
    let mut rng = seeds::rng(seed, "sample-labels");
    if n <= pool.len() {
        Ok(index::sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i].clone()).collect())
    } else {
        log::warn!("{:?}: {n} labels requested from {} candidates, sampling with replacement", source.kind(), pool.len());
        Ok((0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect())
    }
}

impl CaptionTemplates {
    /// Fills a template for `label_id`; the choice depends only on the seed
    /// and the id.
    pub fn fill(&self, seed: u64, label_id: &str, activity: Option<&str>) -> String {
        let mut rng = seeds::rng(seed, &format!("caption/{label_id}"));
        let mut pick = |xs: &[String]| xs[rng.random_range(0..xs.len())].clone();
        let template = pick(&self.templates);
        let chosen_activity = pick(&self.activity);
        let environment = pick(&self.environment);
        let clothing = pick(&self.clothing);
        template
            .replace("{activity}", activity.unwrap_or(&chosen_activity))
            .replace("{environment}", &environment)
            .replace("{clothing}", &clothing)
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn random_shape(rng: &mut impl Rng) -> Vec<f64> {
    let n = Normal::new(0.0, 0.5).expect("valid normal");
    (0..NUM_BETAS)
        .map(|b| {
            let v = if b == 0 { rng.random_range(-2.0..2.0) } else { n.sample(rng) };
            round4(f64::clamp(v, -2.0, 2.0))
        })
        .collect()
}

/// Random plausible pose: small root yaw about +Z, moderate joint bends.
fn random_pose(num_joints: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    (0..num_joints)
        .map(|j| {
            if j == 0 {
                [
                    round4(rng.random_range(-0.1..0.1)),
                    round4(rng.random_range(-0.1..0.1)),
                    round4(rng.random_range(-0.5..0.5)),
                ]
            } else {
                std::array::from_fn(|_| round4(rng.random_range(-0.4..0.4)))
            }
        })
        .collect()
}

/// Synthetic pose bank for tests and the bundled fixtures. Every third
/// record has no caption.
pub fn synthetic_pose_bank(num_joints: usize, n: usize, seed: u64) -> PoseBank {
    let mut rng = seeds::rng(seed, "synthetic-pose-bank");
    let scenes = ["standing in a park", "sitting on a bench", "posing in a studio", "playing tennis"];
    let records = (0..n)
        .map(|i| {
            let params = SmplxParams {
                theta: random_pose(num_joints, &mut rng),
                beta: random_shape(&mut rng),
                psi: vec![0.0; NUM_EXPRESSION],
                translation: [0.0; 3],
            };
            let caption = (i % 3 != 2).then(|| format!("a person {}", scenes[rng.random_range(0..scenes.len())]));
            PoseBankRecord {
                id: format!("{i:05}"),
                params,
                caption,
            }
        })
        .collect();
    PoseBank { records }
}

/// Synthetic motion capture: each joint oscillates around a random rest
/// pose; shape is fixed per sequence.
pub fn synthetic_motion(num_joints: usize, sequences: usize, frames: usize, seed: u64) -> MotionSet {
    let mut rng = seeds::rng(seed, "synthetic-motion");
    let activities = ["walking", "jumping", "waving", "dancing", "stretching"];
    let sequences = (0..sequences)
        .map(|s| {
            let beta = random_shape(&mut rng);
            let rest = random_pose(num_joints, &mut rng);
            let amp: Vec<[f64; 3]> = (0..num_joints).map(|_| std::array::from_fn(|_| rng.random_range(0.0..0.3))).collect();
            let phase: Vec<[f64; 3]> = (0..num_joints)
                .map(|_| std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU)))
                .collect();
            let freq = rng.random_range(0.02..0.08);
            let frames = (0..frames)
                .map(|f| SmplxParams {
                    theta: (0..num_joints)
                        .map(|j| {
                            std::array::from_fn(|k| {
                                let w = std::f64::consts::TAU * freq * f as f64 + phase[j][k];
                                round4(rest[j][k] + amp[j][k] * w.sin())
                            })
                        })
                        .collect(),
                    beta: beta.clone(),
                    psi: vec![0.0; NUM_EXPRESSION],
                    translation: [0.0; 3],
                })
                .collect();
            MotionSequence {
                id: format!("seq{s:03}"),
                activity: Some(activities[s % activities.len()].to_string()),
                frames,
            }
        })
        .collect();
    MotionSet { sequences }
}
