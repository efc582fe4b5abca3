//! The two-stage curriculum: sample labels, render controls, generate,
//! score, mine hard samples, filter and write the dataset.
//!
//! Dataset layout under the configured root:
//!
//! ```text
//! manifest.jsonl       header + one record per sample
//! control/<id>.png     mesh control images
//! skeleton/<id>.png    skeleton control images
//! images/<id>.png      generated images
//! stats.json stats.csv filter statistics
//! gbdt_model.json      difficulty predictor fitted on Stage 1
//! pairs.jsonl          preference pairs (preference build only)
//! ```

mod config;
mod labels;
mod manifest;
mod run;

use thiserror::Error;

pub use config::{
    split_counts, CaptionTemplates, ClientEndpoints, Counts, DpoDataConfig, MiningConfig, MotionSource,
    PipelineConfig, PoseBankSource, RetryPolicy, SourceMix, Sources, ENV_PREFIX,
};
pub use labels::{
    sample_labels, synthetic_motion, synthetic_pose_bank, Label, LabelSource, MotionSequence, MotionSet, PoseBank,
    PoseBankRecord, SourceKind,
};
pub use manifest::{
    atomic_write, read_manifest, write_manifest, CurriculumStage, GbdtSummary, Manifest, ManifestHeader,
    ManifestSummary, RecordStatus, SampleRecord, MANIFEST_VERSION,
};
pub use run::{apply_filters, params_summary, BuildReport, DpoReport, GapStats, Pipeline};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("label source {0} is empty")]
    EmptySource(String),
    #[error("client outage: {0}")]
    Outage(String),
    #[error(transparent)]
    Body(#[from] crate::body_model::BodyModelError),
    #[error(transparent)]
    Mining(#[from] crate::mining::MiningError),
    #[error(transparent)]
    Filter(#[from] crate::filtering::FilterError),
    #[error(transparent)]
    Scoring(#[from] crate::scoring::ScoringError),
}

impl PipelineError {
    /// Whether the error comes from bad input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Config(_) | Self::Manifest { .. } | Self::EmptySource(_) | Self::Filter(_) | Self::Scoring(_)
        ) || matches!(self, Self::Mining(crate::mining::MiningError::InvalidConfig(_)))
    }
}

#[cfg(test)]
mod tests;
