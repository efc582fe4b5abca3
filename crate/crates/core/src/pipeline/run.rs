use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{split_counts, PipelineConfig, RetryPolicy};
use super::labels::{sample_labels, Label, LabelSource, SourceKind};
use super::manifest::{atomic_write, write_manifest, CurriculumStage, GbdtSummary, Manifest, RecordStatus, SampleRecord};
use super::PipelineError;
use crate::body_model::{BodyModel, EulerAngles, SmplxParams};
use crate::clients::{CaptionRequest, ClientError, Clients, GenerateRequest, ImageRequest, SampleContext};
use crate::dpo::{build_preference_pairs, ConditionGroup, PairReport};
use crate::filtering::{filter_stats, run_filters, FilterConfig, FilterStats, FilterVerdict, SampleScores};
use crate::keypoints::Keypoints2D;
use crate::mining::{featurize, fit, select_hard_samples};
use crate::render::{project, render_control_pair, Camera};
use crate::scoring::{score_sample, OksStatus, ScoreError};
use crate::seeds;

/// Short text description of a label, sent to the captioner.
pub fn params_summary(params: &SmplxParams, head: &EulerAngles) -> String {
    format!(
        "body shape {:+.2}, head yaw {:+.0} degrees, head pitch {:+.0} degrees",
        params.beta.first().copied().unwrap_or(0.0),
        head.yaw,
        head.pitch
    )
}

fn with_retries<T>(
    policy: &RetryPolicy,
    what: &str,
    mut call: impl FnMut() -> Result<T, ClientError>,
) -> Result<T, String> {
    let mut attempt = 0u32;
    loop {
        match call() {
            Ok(v) => return Ok(v),
            Err(e) if attempt < policy.retries && !matches!(e, ClientError::Protocol(_)) => {
                log::debug!("{what}: {e}, retrying");
                let delay = policy.backoff_ms.saturating_mul(1u64 << attempt.min(20));
                std::thread::sleep(Duration::from_millis(delay));
                attempt += 1;
            }
            Err(e) => return Err(format!("{what}: {e}")),
        }
    }
}

/// Runs filters on every scored record and stores the verdicts. Returns the
/// verdicts in record order.
pub fn apply_filters(records: &mut [SampleRecord], cfg: &FilterConfig) -> Result<Vec<FilterVerdict>, PipelineError> {
    let mut verdicts = Vec::new();
    for r in records.iter_mut() {
        r.verdict = match (&r.status, &r.scores) {
            (RecordStatus::Scored, Some(scores)) => {
                let v = run_filters(scores, cfg)?;
                verdicts.push(v.clone());
                Some(v)
            }
            _ => None,
        };
    }
    Ok(verdicts)
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub manifest: Manifest,
    pub stats: FilterStats,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoReport {
    pub conditions: usize,
    pub variant_count: usize,
    pub pairs: PairReport,
    pub gap: Option<GapStats>,
    pub digest: String,
}

struct Sources {
    pose_bank: Option<LabelSource>,
    motion: Option<LabelSource>,
}

/// One configured run: config, body model, clients and a worker pool.
pub struct Pipeline<'a> {
    pub config: &'a PipelineConfig,
    pub model: &'a BodyModel,
    pub clients: &'a Clients,
    root: PathBuf,
    pool: rayon::ThreadPool,
}

impl<'a> Pipeline<'a> {
    /// Creates the dataset root if needed.
    pub fn new(config: &'a PipelineConfig, model: &'a BodyModel, clients: &'a Clients) -> Result<Self, PipelineError> {
        let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", config.root.display()));
        for sub in ["control", "skeleton", "images"] {
            std::fs::create_dir_all(config.root.join(sub)).map_err(io)?;
        }
        let root = std::fs::canonicalize(&config.root).map_err(io)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            config,
            model,
            clients,
            root,
            pool,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Ordered parallel map on the worker pool.
    fn par_map<T: Send, U: Send>(&self, items: Vec<T>, f: impl Fn(T) -> U + Sync + Send) -> Vec<U> {
        self.pool.install(|| items.into_par_iter().map(f).collect())
    }

    fn load_sources(&self) -> Result<Sources, PipelineError> {
        let cfg = self.config;
        let load = |src: Result<LabelSource, PipelineError>| -> Result<LabelSource, PipelineError> {
            let src = src?;
            src.validate(self.model)?;
            Ok(src)
        };
        Ok(Sources {
            pose_bank: match &cfg.sources.pose_bank {
                Some(s) if cfg.source_mix.pose_bank > 0 => Some(load(LabelSource::load_pose_bank(&s.path))?),
                _ => None,
            },
            motion: match &cfg.sources.motion_sequences {
                Some(s) if cfg.source_mix.motion_sequences > 0 => {
                    Some(load(LabelSource::load_motion(&s.path, s.frame_stride))?)
                }
                _ => None,
            },
        })
    }

    /// `n` labels split between the sources by the configured mix.
    fn sample_mixed(&self, sources: &Sources, n: usize, key: &str) -> Result<Vec<Label>, PipelineError> {
        let mix = &self.config.source_mix;
        let shares = split_counts(n, &[mix.pose_bank, mix.motion_sequences]);
        let mut out = Vec::with_capacity(n);
        for (src, share, name) in [
            (&sources.pose_bank, shares[0], "pose_bank"),
            (&sources.motion, shares[1], "motion_sequences"),
        ] {
            if share == 0 {
                continue;
            }
            let src = src
                .as_ref()
                .ok_or_else(|| PipelineError::Config(format!("no {name} source configured")))?;
            let seed = seeds::derive_seed(self.config.seed, &format!("{key}/{name}"));
            out.extend(sample_labels(src, share, seed)?);
        }
        Ok(out)
    }

    fn record(&self, id: String, label: &Label, stage: CurriculumStage, ordinal: u64) -> SampleRecord {
        SampleRecord {
            seed: seeds::derive_seed(self.config.seed, &id),
            id,
            label_id: label.id.clone(),
            source: label.source,
            stage,
            ordinal,
            params: label.params.clone(),
            caption: label.caption.clone(),
            activity: label.activity.clone(),
            camera: None,
            control_image: None,
            skeleton_image: None,
            generated_image: None,
            predicted_oks: None,
            status: RecordStatus::Pending,
            error: None,
            scores: None,
            verdict: None,
        }
    }

    /// Records for `labels`, numbered from `first_ordinal`, rendered and
    /// generated. Per-sample failures are recorded, never raised.
    pub fn generate_batch(&self, labels: &[Label], stage: CurriculumStage, first_ordinal: u64) -> Vec<SampleRecord> {
        let prefix = match stage {
            CurriculumStage::Baseline => "s1",
            CurriculumStage::HardMined => "s2",
            CurriculumStage::Preference => "pref",
        };
        let records = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let ordinal = first_ordinal + i as u64;
                self.record(format!("{prefix}-{ordinal:06}"), l, stage, ordinal)
            })
            .collect();
        self.generate_records(records)
    }

    /// Generates every pending record.
    pub fn generate_records(&self, records: Vec<SampleRecord>) -> Vec<SampleRecord> {
        self.par_map(records, |mut r| {
            if r.status == RecordStatus::Pending {
                match self.generate_one(&mut r) {
                    Ok(()) => r.status = RecordStatus::Generated,
                    Err(e) => {
                        log::warn!("{}: generation failed: {e}", r.id);
                        r.status = RecordStatus::FailedGeneration;
                        r.error = Some(e);
                    }
                }
            }
            r
        })
    }

    fn context(&self, r: &SampleRecord, gt: Keypoints2D, head: EulerAngles) -> SampleContext {
        SampleContext {
            ordinal: r.ordinal,
            seed: r.seed,
            params: Some(r.params.clone()),
            gt_keypoints: Some(gt),
            gt_head_pose: Some(head),
        }
    }

    fn abs(&self, rel: &str) -> String {
        self.root.join(rel).to_string_lossy().into_owned()
    }

    fn generate_one(&self, r: &mut SampleRecord) -> Result<(), String> {
        let cfg = self.config;
        let mesh = self.model.forward(&r.params).map_err(|e| e.to_string())?;
        let camera = Camera::framing(&mesh.vertices, &cfg.render.rig).map_err(|e| e.to_string())?;
        let pair = render_control_pair(self.model, &r.params, &camera, &cfg.render).map_err(|e| e.to_string())?;
        let head = self.model.head_pose(&r.params).map_err(|e| e.to_string())?;
        r.camera = Some(camera);

        let control = format!("control/{}.png", r.id);
        let skeleton = format!("skeleton/{}.png", r.id);
        pair.mesh.write_png(self.root.join(&control)).map_err(|e| e.to_string())?;
        pair.skeleton.write_png(self.root.join(&skeleton)).map_err(|e| e.to_string())?;
        r.control_image = Some(control.clone());
        r.skeleton_image = Some(skeleton.clone());

        let context = self.context(r, pair.keypoints, head);
        let caption = match (&r.caption, r.source) {
            (Some(c), _) => c.clone(),
            (None, SourceKind::MotionSequences) => cfg.captions.fill(cfg.seed, &r.label_id, r.activity.as_deref()),
            (None, SourceKind::PoseBank) => {
                let request = CaptionRequest {
                    params_summary: params_summary(&r.params, &head),
                    context: context.clone(),
                };
                with_retries(&cfg.retry, "captioner", || self.clients.captioner.caption(&request))?.caption
            }
        };
        r.caption = Some(caption.clone());

        let image = format!("images/{}.png", r.id);
        let target = self.root.join(&image);
        let request = GenerateRequest {
            control_png_path: self.abs(&control),
            skeleton_png_path: self.abs(&skeleton),
            caption,
            seed: r.seed,
            output_png_path: Some(self.abs(&image)),
            context,
        };
        let response = with_retries(&cfg.retry, "generator", || self.clients.generator.generate(&request))?;
        let produced = PathBuf::from(&response.image_png_path);
        if produced != target {
            std::fs::copy(&produced, &target).map_err(|e| format!("copying {}: {e}", produced.display()))?;
        }
        if !target.is_file() {
            return Err(format!("generator produced no image at {image}"));
        }
        r.generated_image = Some(image);
        Ok(())
    }

    /// Scores every generated or previously unscored record; scored and
    /// failed records are left untouched.
    pub fn score_batch(&self, records: Vec<SampleRecord>) -> Vec<SampleRecord> {
        self.par_map(records, |mut r| {
            if matches!(r.status, RecordStatus::Generated | RecordStatus::Unscored) {
                let (scores, errors) = self.score_one(&r);
                r.status = if errors.is_empty() && scores.is_complete() {
                    RecordStatus::Scored
                } else {
                    log::warn!("{}: scoring incomplete: {}", r.id, errors.join("; "));
                    RecordStatus::Unscored
                };
                r.error = (!errors.is_empty()).then(|| errors.join("; "));
                r.scores = Some(scores);
            }
            r
        })
    }

    fn score_one(&self, r: &SampleRecord) -> (SampleScores, Vec<String>) {
        let cfg = self.config;
        let mut scores = SampleScores::default();
        let mut errors = Vec::new();
        let prepared = (|| -> Result<_, String> {
            let camera = r.camera.as_ref().ok_or("record has no camera")?;
            let image = r.generated_image.as_ref().ok_or("record has no generated image")?;
            let mesh = self.model.forward(&r.params).map_err(|e| e.to_string())?;
            let gt = project(camera, &self.model.keypoints(&mesh));
            let head = self.model.head_pose(&r.params).map_err(|e| e.to_string())?;
            Ok((gt, head, self.abs(image)))
        })();
        let (gt, head, image) = match prepared {
            Ok(p) => p,
            Err(e) => return (scores, vec![e]),
        };
        scores.gt_head_pose = Some(head);
        let request = ImageRequest {
            image_png_path: image,
            context: self.context(r, gt.clone(), head),
        };

        let oks = with_retries(&cfg.retry, "keypoint detector", || {
            match score_sample(&request, &gt, self.clients.keypoints.as_ref(), &cfg.oks) {
                Ok(report) => Ok(Ok(report)),
                Err(ScoreError::Client(e)) => Err(e),
                Err(ScoreError::Scoring(e)) => Ok(Err(e)),
            }
        });
        match oks {
            Ok(Ok(report)) => scores.oks = Some(report),
            Ok(Err(e)) => errors.push(format!("scoring: {e}")),
            Err(e) => errors.push(e),
        }
        match with_retries(&cfg.retry, "person detector", || self.clients.persons.count(&request)) {
            Ok(c) => scores.person_count = Some(c.count),
            Err(e) => errors.push(e),
        }
        match with_retries(&cfg.retry, "head pose", || self.clients.head_pose.head_pose(&request)) {
            Ok(p) => scores.pred_head_pose = Some(p),
            Err(e) => errors.push(e),
        }
        (scores, errors)
    }

    fn check_outage(records: &[SampleRecord], what: &str) -> Result<(), PipelineError> {
        if !records.is_empty() && records.iter().all(|r| r.status == RecordStatus::FailedGeneration) {
            let first = records[0].error.clone().unwrap_or_default();
            return Err(PipelineError::Outage(format!("every {what} generation failed; first error: {first}")));
        }
        Ok(())
    }

    /// The full two-stage curriculum; writes manifest, stats and the
    /// mining model under the dataset root.
    pub fn build_dataset(&self) -> Result<BuildReport, PipelineError> {
        let cfg = self.config;
        cfg.validate()?;
        let sources = self.load_sources()?;

        let labels1 = self.sample_mixed(&sources, cfg.counts.stage1_n, "stage1")?;
        let stage1 = self.score_batch(self.generate_batch(&labels1, CurriculumStage::Baseline, 0));
        Self::check_outage(&stage1, "stage-1")?;
        log::info!("stage 1: {} records", stage1.len());

        let (gbdt, stage2) = if cfg.counts.stage2_n > 0 {
            let (model, summary) = self.fit_difficulty(&stage1)?;
            atomic_write(&self.root.join("gbdt_model.json"), model.to_json().as_bytes())?;

            let candidates = self.sample_mixed(&sources, cfg.counts.stage2_candidates, "stage2")?;
            let j = self.model.num_joints();
            let features = candidates
                .iter()
                .enumerate()
                .map(|(i, l)| Ok((format!("{i:07}"), featurize(&l.params, j)?)))
                .collect::<Result<Vec<_>, PipelineError>>()?;
            let chosen = select_hard_samples(&features, &model, cfg.counts.stage2_n)?;
            let first = stage1.len() as u64;
            let mut records = Vec::with_capacity(chosen.len());
            for (k, id) in chosen.iter().enumerate() {
                let i: usize = id.parse().expect("candidate ids are indices");
                let ordinal = first + k as u64;
                let mut r = self.record(format!("s2-{ordinal:06}"), &candidates[i], CurriculumStage::HardMined, ordinal);
                r.predicted_oks = Some(model.predict(&features[i].1)?);
                records.push(r);
            }
            let stage2 = self.score_batch(self.generate_records(records));
            Self::check_outage(&stage2, "stage-2")?;
            log::info!("stage 2: {} of {} candidates", stage2.len(), candidates.len());
            (Some(summary), stage2)
        } else {
            (None, Vec::new())
        };

        let mut records = stage1;
        records.extend(stage2);
        let verdicts = apply_filters(&mut records, &cfg.filter)?;
        let stats = filter_stats(&verdicts);
        self.write_stats(&stats)?;
        let manifest = Manifest::new(cfg.seed, records, gbdt);
        write_manifest(&manifest, self.root.join("manifest.jsonl"))?;
        Ok(BuildReport {
            digest: manifest.digest(),
            manifest,
            stats,
        })
    }

    pub fn write_stats(&self, stats: &FilterStats) -> Result<(), PipelineError> {
        atomic_write(&self.root.join("stats.json"), stats.to_json().as_bytes())?;
        atomic_write(&self.root.join("stats.csv"), stats.to_csv().as_bytes())
    }

    /// Fits the difficulty predictor on scored Stage-1 records, holding out
    /// a seeded fraction to report its error.
    fn fit_difficulty(&self, stage1: &[SampleRecord]) -> Result<(crate::mining::GbdtModel, GbdtSummary), PipelineError> {
        let cfg = self.config;
        let j = self.model.num_joints();
        let mut rows = Vec::new();
        for r in stage1 {
            if r.status != RecordStatus::Scored {
                continue;
            }
            if let Some(report) = r.scores.as_ref().and_then(|s| s.oks.as_ref()) {
                if report.status != OksStatus::Undefined {
                    rows.push((featurize(&r.params, j)?, report.oks));
                }
            }
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut seeds::rng(cfg.seed, "holdout"));
        let n_holdout = ((rows.len() as f64 * cfg.mining.holdout_fraction).floor() as usize).min(rows.len().saturating_sub(2));
        let (holdout, train) = order.split_at(n_holdout);
        let mut train = train.to_vec();
        train.sort_unstable();
        let x: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].0.clone()).collect();
        let y: Vec<f64> = train.iter().map(|&i| rows[i].1).collect();
        let model = fit(&x, &y, &cfg.mining.gbdt)?;
        let holdout_mse = if holdout.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for &i in holdout {
                sum += (model.predict(&rows[i].0)? - rows[i].1).powi(2);
            }
            Some(sum / holdout.len() as f64)
        };
        let summary = GbdtSummary {
            n_train: train.len(),
            n_holdout: holdout.len(),
            train_mse: model.train_mse.last().copied().unwrap_or(f64::NAN),
            holdout_mse,
        };
        Ok((model, summary))
    }

    /// `variant_count` generations per sampled condition, scored and reduced
    /// to at most one preference pair per condition. Writes `pairs.jsonl`,
    /// `pair_scores.csv` and `dpo_manifest.jsonl`.
    pub fn build_dpo_dataset(&self) -> Result<DpoReport, PipelineError> {
        let cfg = self.config;
        cfg.validate()?;
        let vc = cfg.dpo.variant_count;
        if vc < 2 {
            return Err(PipelineError::Config(format!("variant_count {vc} must be at least 2")));
        }
        let sources = self.load_sources()?;
        let labels = self.sample_mixed(&sources, cfg.dpo.conditions, "dpo")?;
        let mut records = Vec::with_capacity(labels.len() * vc);
        for (c, label) in labels.iter().enumerate() {
            for v in 0..vc {
                let ordinal = (c * vc + v) as u64;
                records.push(self.record(format!("dpo-c{c:05}-v{v}"), label, CurriculumStage::Preference, ordinal));
            }
        }
        let records = self.score_batch(self.generate_records(records));
        Self::check_outage(&records, "preference")?;

        let mut groups: Vec<ConditionGroup> = (0..labels.len())
            .map(|c| ConditionGroup {
                condition_id: format!("dpo-c{c:05}"),
                samples: Vec::new(),
            })
            .collect();
        let mut table = String::from("condition_id,sample_id,status,oks\n");
        for (k, r) in records.iter().enumerate() {
            let group = &mut groups[k / vc];
            let report = r.scores.as_ref().and_then(|s| s.oks.as_ref());
            let oks = match (r.status, report) {
                (RecordStatus::Scored, Some(rep)) if rep.status == OksStatus::Scored => {
                    group.samples.push((r.id.clone(), rep.oks));
                    rep.oks.to_string()
                }
                _ => "NA".to_string(),
            };
            let status = serde_json::to_value(r.status).expect("status serializes");
            table.push_str(&format!("{},{},{},{oks}\n", group.condition_id, r.id, status.as_str().unwrap_or("")));
        }
        let pairs = build_preference_pairs(&groups, cfg.dpo.margin);

        let mut lines = String::new();
        for p in &pairs.pairs {
            lines.push_str(&serde_json::to_string(p).expect("pair serializes"));
            lines.push('\n');
        }
        atomic_write(&self.root.join("pairs.jsonl"), lines.as_bytes())?;
        atomic_write(&self.root.join("pair_scores.csv"), table.as_bytes())?;
        let manifest = Manifest::new(cfg.seed, records, None);
        write_manifest(&manifest, self.root.join("dpo_manifest.jsonl"))?;

        let gaps: Vec<f64> = pairs.pairs.iter().map(|p| p.winner_oks - p.loser_oks).collect();
        let gap = (!gaps.is_empty()).then(|| GapStats {
            count: gaps.len(),
            mean: gaps.iter().sum::<f64>() / gaps.len() as f64,
            min: gaps.iter().copied().fold(f64::INFINITY, f64::min),
            max: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
        Ok(DpoReport {
            conditions: labels.len(),
            variant_count: vc,
            pairs,
            gap,
            digest: manifest.digest(),
        })
    }
}
