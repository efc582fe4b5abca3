//! JSON Lines dataset index: one header object, then one object per sample.
//! Every line carries the schema version `v`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::labels::SourceKind;
use super::PipelineError;
use crate::body_model::SmplxParams;
use crate::filtering::{FilterVerdict, SampleScores};
use crate::render::Camera;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumStage {
    Baseline,
    HardMined,
    /// Variants generated for preference pairs.
    Preference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Pending,
    Generated,
    FailedGeneration,
    Unscored,
    Scored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub label_id: String,
    pub source: SourceKind,
    pub stage: CurriculumStage,
    /// Position in the run; also keys mock behaviour.
    pub ordinal: u64,
    pub seed: u64,
    pub params: SmplxParams,
    pub caption: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub activity: Option<String>,
    pub camera: Option<Camera>,
    /// Paths relative to the dataset root.
    pub control_image: Option<String>,
    pub skeleton_image: Option<String>,
    pub generated_image: Option<String>,
    /// Predicted OKS from the mining model (hard-mined samples only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub predicted_oks: Option<f64>,
    pub status: RecordStatus,
    pub error: Option<String>,
    pub scores: Option<SampleScores>,
    pub verdict: Option<FilterVerdict>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GbdtSummary {
    pub n_train: usize,
    pub n_holdout: usize,
    pub train_mse: f64,
    pub holdout_mse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub records: usize,
    pub baseline: usize,
    pub hard_mined: usize,
    pub preference: usize,
    pub pose_bank: usize,
    pub motion_sequences: usize,
    pub failed_generation: usize,
    pub unscored: usize,
    pub scored: usize,
    pub passed: usize,
    pub failed: usize,
    pub pass_rate: Option<f64>,
    pub mean_oks_baseline: Option<f64>,
    pub mean_oks_hard_mined: Option<f64>,
    pub gbdt: Option<GbdtSummary>,
}

impl ManifestSummary {
    pub fn of(records: &[SampleRecord], gbdt: Option<GbdtSummary>) -> Self {
        let mut s = Self {
            records: records.len(),
            gbdt,
            ..Self::default()
        };
        let mut oks = [(0.0, 0usize); 2];
        for r in records {
            match r.stage {
                CurriculumStage::Baseline => s.baseline += 1,
                CurriculumStage::HardMined => s.hard_mined += 1,
                CurriculumStage::Preference => s.preference += 1,
            }
            match r.source {
                SourceKind::PoseBank => s.pose_bank += 1,
                SourceKind::MotionSequences => s.motion_sequences += 1,
            }
            match r.status {
                RecordStatus::FailedGeneration => s.failed_generation += 1,
                RecordStatus::Scored => s.scored += 1,
                _ => s.unscored += 1,
            }
            match &r.verdict {
                Some(v) if v.passed => s.passed += 1,
                Some(_) => s.failed += 1,
                None => {}
            }
            if let (Some(report), true) = (r.scores.as_ref().and_then(|x| x.oks.as_ref()), r.status == RecordStatus::Scored) {
                let slot = match r.stage {
                    CurriculumStage::Baseline => 0,
                    CurriculumStage::HardMined => 1,
                    CurriculumStage::Preference => continue,
                };
                oks[slot].0 += report.oks;
                oks[slot].1 += 1;
            }
        }
        let mean = |(sum, n): (f64, usize)| (n > 0).then(|| sum / n as f64);
        s.mean_oks_baseline = mean(oks[0]);
        s.mean_oks_hard_mined = mean(oks[1]);
        let judged = s.passed + s.failed;
        s.pass_rate = (judged > 0).then(|| s.passed as f64 / judged as f64);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub kind: String,
    pub seed: u64,
    /// Seconds since the Unix epoch. Excluded from the digest.
    pub created_at_unix: u64,
    pub summary: ManifestSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<SampleRecord>,
}

#[derive(Serialize, Deserialize)]
struct Line<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl Manifest {
    pub fn new(seed: u64, records: Vec<SampleRecord>, gbdt: Option<GbdtSummary>) -> Self {
        Self {
            header: ManifestHeader {
                kind: "header".into(),
                seed,
                created_at_unix: now_unix(),
                summary: ManifestSummary::of(&records, gbdt),
            },
            records,
        }
    }

    /// Recomputes the summary after records changed.
    pub fn refresh(&mut self) {
        let gbdt = self.header.summary.gbdt.take();
        self.header.summary = ManifestSummary::of(&self.records, gbdt);
        self.header.created_at_unix = now_unix();
    }

    fn lines(&self, created_at_unix: u64) -> Vec<String> {
        let header = ManifestHeader {
            created_at_unix,
            ..self.header.clone()
        };
        let mut out = vec![to_line(&header)];
        out.extend(self.records.iter().map(to_line));
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = self.lines(self.header.created_at_unix).join("\n");
        s.push('\n');
        s
    }

    /// SHA-256 over the serialized manifest with the timestamp zeroed.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for line in self.lines(0) {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(PipelineError::Manifest {
            line: 1,
            message: "missing header".into(),
        })?;
        let header: ManifestHeader = from_line(1, first)?;
        if header.kind != "header" {
            return Err(PipelineError::Manifest {
                line: 1,
                message: format!("first line has kind {:?}, expected \"header\"", header.kind),
            });
        }
        let mut records = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, l) in lines {
            let record: SampleRecord = from_line(i + 1, l)?;
            if !seen.insert(record.id.clone()) {
                return Err(PipelineError::Manifest {
                    line: i + 1,
                    message: format!("duplicate id {}", record.id),
                });
            }
            records.push(record);
        }
        Ok(Self { header, records })
    }
}

fn to_line<T: Serialize>(body: &T) -> String {
    serde_json::to_string(&Line {
        v: MANIFEST_VERSION,
        body,
    })
    .expect("manifest line serializes")
}

fn from_line<T: serde::de::DeserializeOwned>(line: usize, text: &str) -> Result<T, PipelineError> {
    let err = |message: String| PipelineError::Manifest { line, message };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    match value.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == MANIFEST_VERSION as u64 => {}
        Some(v) => return Err(err(format!("schema version {v}, expected {MANIFEST_VERSION}"))),
        None => return Err(err("missing schema version `v`".into())),
    }
    let line: Line<T> = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
    Ok(line.body)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<(), PipelineError> {
    atomic_write(path.as_ref(), manifest.to_jsonl().as_bytes())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, PipelineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    Manifest::parse(&text)
}
