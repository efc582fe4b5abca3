use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::body_model::{BodyModel, EulerAngles};
use crate::clients::mock::{KeypointNoise, MockConfig};
use crate::clients::{
    ClientError, Clients, HeadPoseEstimator, ImageRequest, KeypointDetector, KeypointResponse, PersonCountResponse,
    PersonDetector,
};
use crate::filtering::SampleScores;
use crate::render::{project, CameraRig};
use crate::scoring::{oks, OksStatus};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn model() -> BodyModel {
    BodyModel::load(repo().join("fixtures/testmodel_8joint.json")).unwrap()
}

/// Small config over freshly written synthetic sources in `dir`.
fn small_config(dir: &Path) -> PipelineConfig {
    let bank = dir.join("bank.json");
    let motion = dir.join("motion.json");
    std::fs::write(&bank, serde_json::to_string(&synthetic_pose_bank(8, 300, 3)).unwrap()).unwrap();
    std::fs::write(&motion, serde_json::to_string(&synthetic_motion(8, 6, 60, 4)).unwrap()).unwrap();
    let mut cfg = PipelineConfig {
        seed: 5,
        workers: 2,
        root: dir.join("out"),
        counts: Counts {
            stage1_n: 40,
            stage2_candidates: 120,
            stage2_n: 16,
        },
        sources: Sources {
            pose_bank: Some(PoseBankSource { path: bank }),
            motion_sequences: Some(MotionSource {
                path: motion,
                frame_stride: 5,
            }),
        },
        ..PipelineConfig::default()
    };
    cfg.render.rig = CameraRig {
        width: 64,
        height: 64,
        ..CameraRig::default()
    };
    cfg.retry.backoff_ms = 1;
    cfg.mining.gbdt.n_trees = 30;
    cfg
}

fn echo_mock() -> MockConfig {
    let mut m = MockConfig::default();
    m.keypoints.noise = KeypointNoise::None;
    m.persons.extra_rate = 0.0;
    m.head_pose.sigma_deg = 0.0;
    m
}

fn labels(model: &BodyModel, n: usize) -> Vec<Label> {
    let src = LabelSource::PoseBank(synthetic_pose_bank(model.num_joints(), n, 9));
    src.candidates()
}

fn read_all(root: &Path, records: &[SampleRecord]) -> Vec<Vec<u8>> {
    records
        .iter()
        .flat_map(|r| [&r.control_image, &r.skeleton_image, &r.generated_image])
        .flatten()
        .map(|p| std::fs::read(root.join(p)).unwrap())
        .collect()
}

#[test]
fn split_examples() {
    assert_eq!(split_counts(200, &[5, 3]), vec![125, 75]);
    assert_eq!(split_counts(7, &[5, 3]), vec![4, 3]);
    assert_eq!(split_counts(0, &[5, 3]), vec![0, 0]);
    assert_eq!(split_counts(9, &[0, 3]), vec![0, 9]);
    assert_eq!(split_counts(3, &[1, 1, 1, 1]), vec![1, 1, 1, 0]);
}

proptest! {
    #[test]
    fn split_within_one_of_quota(n in 0usize..5000, a in 0u64..20, b in 0u64..20) {
        prop_assume!(a + b > 0);
        let s = split_counts(n, &[a, b]);
        prop_assert_eq!(s[0] + s[1], n);
        for (share, w) in s.iter().zip([a, b]) {
            let quota = n as f64 * w as f64 / (a + b) as f64;
            prop_assert!((*share as f64 - quota).abs() < 1.0);
        }
    }
}

#[test]
fn pose_bank_sampling() {
    let bank = LabelSource::PoseBank(synthetic_pose_bank(8, 50, 1));
    let all = sample_labels(&bank, 50, 3).unwrap();
    let mut ids: Vec<_> = all.iter().map(|l| l.id.clone()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 50);
    assert_eq!(sample_labels(&bank, 20, 3).unwrap(), sample_labels(&bank, 20, 3).unwrap());
    assert_ne!(sample_labels(&bank, 20, 3).unwrap(), sample_labels(&bank, 20, 4).unwrap());
    let many = sample_labels(&bank, 120, 3).unwrap();
    assert_eq!(many.len(), 120);
    assert!(sample_labels(&LabelSource::PoseBank(PoseBank::default()), 1, 0).is_err());
}

#[test]
fn motion_stride() {
    let set = synthetic_motion(8, 1, 100, 1);
    let src = LabelSource::MotionSequences { set, frame_stride: 10 };
    let ids: Vec<String> = src.candidates().into_iter().map(|l| l.id).collect();
    let want: Vec<String> = (0..10).map(|k| format!("motion/seq000/{}", 10 * k)).collect();
    assert_eq!(ids, want);
    let picked = sample_labels(&src, 10, 0).unwrap();
    assert!(picked.iter().all(|l| want.contains(&l.id) && l.activity.is_some()));
}

#[test]
fn source_validation() {
    let m = model();
    let ok = LabelSource::PoseBank(synthetic_pose_bank(8, 3, 1));
    assert!(ok.validate(&m).is_ok());
    let bad = LabelSource::PoseBank(synthetic_pose_bank(5, 3, 1));
    assert!(matches!(bad.validate(&m), Err(PipelineError::Config(_))));
}

#[test]
fn caption_templates() {
    let t = CaptionTemplates::default();
    let a = t.fill(1, "motion/seq000/0", Some("jumping"));
    assert_eq!(a, t.fill(1, "motion/seq000/0", Some("jumping")));
    assert!(a.contains("jumping") && !a.contains('{'));
}

#[test]
fn desk_config_parses() {
    let path = repo().join("configs/desk.toml");
    let text = std::fs::read_to_string(&path).unwrap();
    let cfg = PipelineConfig::from_toml(&text, path.parent().unwrap()).unwrap();
    cfg.validate().unwrap();
    assert_eq!((cfg.counts.stage1_n, cfg.counts.stage2_candidates, cfg.counts.stage2_n), (200, 1000, 200));
    assert!(cfg.model.is_file());
    assert!(cfg.sources.pose_bank.as_ref().unwrap().path.is_file());
    assert_eq!(cfg.mock.defects.period, 8);
}

#[test]
fn config_errors_and_env() {
    let base = Path::new("/base");
    assert!(PipelineConfig::from_toml("bogus_key = 1", base).is_err());
    let mut cfg = PipelineConfig::from_toml("root = \"data\"\n[source_mix]\npose_bank = 0\nmotion_sequences = 0\n", base).unwrap();
    assert_eq!(cfg.root, Path::new("/base/data"));
    assert!(cfg.validate().is_err());

    cfg.apply_env([
        ("MESHFORGE_SEED".to_string(), "42".to_string()),
        ("MESHFORGE_GENERATOR_URL".to_string(), "http://localhost:9/gen".to_string()),
        ("MESHFORGE_CAPTIONER_COMMAND".to_string(), "python3 cap.py --x".to_string()),
        ("OTHER".to_string(), "1".to_string()),
    ])
    .unwrap();
    assert_eq!(cfg.seed, 42);
    assert!(matches!(&cfg.clients.generator, crate::clients::Endpoint::Http { url, .. } if url == "http://localhost:9/gen"));
    assert!(
        matches!(&cfg.clients.captioner, crate::clients::Endpoint::Command { program, args } if program == "python3" && args.len() == 2)
    );
    assert!(cfg.apply_env([("MESHFORGE_SEED".to_string(), "x".to_string())]).is_err());
}

fn sample_record(i: usize) -> SampleRecord {
    let l = &labels(&model(), i + 1)[i];
    SampleRecord {
        id: format!("s1-{i:06}"),
        label_id: l.id.clone(),
        source: SourceKind::PoseBank,
        stage: CurriculumStage::Baseline,
        ordinal: i as u64,
        seed: i as u64 * 7919,
        params: l.params.clone(),
        caption: Some("a person".into()),
        activity: None,
        camera: None,
        control_image: Some(format!("control/s1-{i:06}.png")),
        skeleton_image: None,
        generated_image: None,
        predicted_oks: Some(0.1 + i as f64 / 3.0),
        status: RecordStatus::Scored,
        error: None,
        scores: Some(SampleScores {
            person_count: Some(1),
            oks: None,
            gt_head_pose: Some(EulerAngles::new(0.1, -2.0, 1.0 / 3.0)),
            pred_head_pose: None,
        }),
        verdict: None,
    }
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<_> = (0..100).map(sample_record).collect();
    let m = Manifest::new(3, records, None);
    let path = dir.path().join("manifest.jsonl");
    write_manifest(&m, &path).unwrap();
    let back = read_manifest(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.digest(), m.digest());

    let mut later = m.clone();
    later.header.created_at_unix += 1000;
    assert_eq!(later.digest(), m.digest());
    later.records[3].caption = Some("changed".into());
    assert_ne!(later.digest(), m.digest());
}

#[test]
fn manifest_errors() {
    let m = Manifest::new(3, (0..3).map(sample_record).collect(), None);
    let text = m.to_jsonl();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"v\":1,\"id\":";
    match Manifest::parse(&lines.join("\n")) {
        Err(PipelineError::Manifest { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let v2 = text.replacen("{\"v\":1", "{\"v\":2", 1);
    assert!(matches!(Manifest::parse(&v2), Err(PipelineError::Manifest { line: 1, .. })));
    assert!(Manifest::parse("").is_err());
    let dup = format!("{}{}\n", text, text.lines().nth(1).unwrap());
    assert!(matches!(Manifest::parse(&dup), Err(PipelineError::Manifest { line: 5, .. })));

    let extra = text.replace("\"label_id\"", "\"from_the_future\":[1,2],\"label_id\"");
    assert_eq!(Manifest::parse(&extra).unwrap().records, m.records);

    let empty = Manifest::new(0, Vec::new(), None);
    assert_eq!(empty.to_jsonl().lines().count(), 1);
    assert_eq!(Manifest::parse(&empty.to_jsonl()).unwrap(), empty);
}

#[test]
fn generation_is_deterministic() {
    let m = model();
    let ls = labels(&m, 10);
    let runs: Vec<_> = (0..2)
        .map(|w| {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = small_config(dir.path());
            cfg.workers = 1 + 3 * w;
            let clients = cfg.clients();
            let p = Pipeline::new(&cfg, &m, &clients).unwrap();
            let recs = p.generate_batch(&ls, CurriculumStage::Baseline, 0);
            let bytes = read_all(p.root(), &recs);
            (recs, bytes, dir)
        })
        .collect();
    assert_eq!(runs[0].0.len(), 10);
    assert!(runs[0].0.iter().all(|r| r.status == RecordStatus::Generated && r.generated_image.is_some()));
    assert!(runs[0].0.iter().all(|r| r.caption.is_some()));
    assert_eq!(runs[0].0, runs[1].0);
    assert_eq!(runs[0].1, runs[1].1);

    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let clients = cfg.clients();
    let p = Pipeline::new(&cfg, &m, &clients).unwrap();
    assert!(p.generate_batch(&[], CurriculumStage::Baseline, 0).is_empty());
}

#[test]
fn generation_failures_are_isolated() {
    let m = model();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.mock.failures.generator.permanent = vec![4];
    cfg.mock.failures.generator.transient = vec![6];
    let clients = cfg.clients();
    let p = Pipeline::new(&cfg, &m, &clients).unwrap();
    let recs = p.generate_batch(&labels(&m, 10), CurriculumStage::Baseline, 0);
    let failed: Vec<_> = recs.iter().filter(|r| r.status == RecordStatus::FailedGeneration).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].ordinal, 4);
    assert!(failed[0].error.as_ref().unwrap().contains("injected"));
    assert_eq!(recs[6].status, RecordStatus::Generated);

    let scored = p.score_batch(recs);
    assert_eq!(scored[4].status, RecordStatus::FailedGeneration);
    assert_eq!(scored.iter().filter(|r| r.status == RecordStatus::Scored).count(), 9);
}

struct Counting {
    inner: Clients,
    calls: AtomicUsize,
}

impl KeypointDetector for Counting {
    fn detect(&self, r: &ImageRequest) -> Result<KeypointResponse, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.keypoints.detect(r)
    }
}

impl PersonDetector for Counting {
    fn count(&self, r: &ImageRequest) -> Result<PersonCountResponse, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.persons.count(r)
    }
}

impl HeadPoseEstimator for Counting {
    fn head_pose(&self, r: &ImageRequest) -> Result<EulerAngles, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.head_pose.head_pose(r)
    }
}

#[test]
fn echo_scores_and_idempotence() {
    let m = model();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.mock = echo_mock();
    let counting = Arc::new(Counting {
        inner: cfg.clients(),
        calls: AtomicUsize::new(0),
    });
    let clients = Clients {
        keypoints: counting.clone(),
        persons: counting.clone(),
        head_pose: counting.clone(),
        ..cfg.clients()
    };
    let p = Pipeline::new(&cfg, &m, &clients).unwrap();
    let recs = p.score_batch(p.generate_batch(&labels(&m, 8), CurriculumStage::Baseline, 0));
    assert_eq!(counting.calls.load(Ordering::SeqCst), 24);
    for r in &recs {
        assert_eq!(r.status, RecordStatus::Scored);
        let s = r.scores.as_ref().unwrap();
        assert_eq!(s.oks.as_ref().unwrap().oks, 1.0);
        assert_eq!(s.person_count, Some(1));
        assert_eq!(s.gt_head_pose, s.pred_head_pose);
    }
    let mut again = p.score_batch(recs.clone());
    assert_eq!(counting.calls.load(Ordering::SeqCst), 24);
    assert_eq!(again, recs);

    let verdicts = apply_filters(&mut again, &cfg.filter).unwrap();
    assert!(verdicts.iter().all(|v| v.passed && v.head_pose_err_deg == [0.0; 3]));
    let mut twice = again.clone();
    apply_filters(&mut twice, &cfg.filter).unwrap();
    assert_eq!(twice, again);
}

#[test]
fn offset_mock_matches_direct_scoring() {
    let m = model();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.mock = echo_mock();
    cfg.mock.keypoints.offset_px = [1.5, -2.0];
    let clients = cfg.clients();
    let p = Pipeline::new(&cfg, &m, &clients).unwrap();
    let recs = p.score_batch(p.generate_batch(&labels(&m, 5), CurriculumStage::Baseline, 0));
    for r in &recs {
        let mesh = m.forward(&r.params).unwrap();
        let gt = project(r.camera.as_ref().unwrap(), &m.keypoints(&mesh));
        let pred = gt.map_points(|q| [q[0] + 1.5, q[1] - 2.0]);
        let direct = oks(&pred, &gt, &cfg.oks).unwrap();
        let got = r.scores.as_ref().unwrap().oks.as_ref().unwrap();
        assert_eq!(got.oks, direct.oks);
        assert!(got.oks < 1.0);
    }
}

#[test]
fn scoring_failures_leave_records_unscored() {
    let m = model();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.mock.failures.persons.permanent = vec![2];
    cfg.mock.failures.head_pose.transient = vec![3];
    let clients = cfg.clients();
    let p = Pipeline::new(&cfg, &m, &clients).unwrap();
    let mut recs = p.score_batch(p.generate_batch(&labels(&m, 5), CurriculumStage::Baseline, 0));
    assert_eq!(recs[2].status, RecordStatus::Unscored);
    assert!(recs[2].scores.as_ref().unwrap().oks.is_some());
    assert_eq!(recs[3].status, RecordStatus::Scored);
    let verdicts = apply_filters(&mut recs, &cfg.filter).unwrap();
    assert_eq!(verdicts.len(), 4);
    assert!(recs[2].verdict.is_none());
}

fn build(cfg: &PipelineConfig) -> BuildReport {
    let m = model();
    let clients = cfg.clients();
    Pipeline::new(cfg, &m, &clients).unwrap().build_dataset().unwrap()
}

#[test]
fn build_dataset_small() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.mock.defects.period = 8;
    cfg.mock.defects.crowding = vec![5];
    cfg.mock.defects.misaligned = vec![6];
    cfg.mock.defects.head_pose = vec![7];
    let a = build(&cfg);
    let s = &a.manifest.header.summary;
    assert_eq!((s.records, s.baseline, s.hard_mined), (56, 40, 16));
    let pose_bank = a.manifest.records.iter().filter(|r| r.stage == CurriculumStage::Baseline && r.source == SourceKind::PoseBank);
    assert_eq!(pose_bank.count(), 25);
    assert_eq!(s.failed_generation + s.unscored, 0);
    assert_eq!(s.passed, 35);
    assert_eq!(a.stats.total, 56);
    assert_eq!(a.stats.stage_failures, [7, 7, 7]);
    for r in &a.manifest.records {
        for p in [&r.control_image, &r.skeleton_image, &r.generated_image] {
            assert!(dir.path().join("out").join(p.as_ref().unwrap()).is_file());
        }
    }
    let root = dir.path().join("out");
    for f in ["manifest.jsonl", "stats.json", "stats.csv", "gbdt_model.json"] {
        assert!(root.join(f).is_file(), "{f}");
    }
    let on_disk = read_manifest(root.join("manifest.jsonl")).unwrap();
    assert_eq!(on_disk.digest(), a.digest);
    assert!(a.manifest.records.iter().filter(|r| r.stage == CurriculumStage::HardMined).all(|r| r.predicted_oks.is_some()));

    let other = tempfile::tempdir().unwrap();
    let mut cfg2 = small_config(other.path());
    cfg2.mock = cfg.mock.clone();
    cfg2.workers = 1;
    assert_eq!(build(&cfg2).digest, a.digest);
}

#[test]
fn stage_two_disabled() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.counts.stage2_n = 0;
    let r = build(&cfg);
    assert_eq!(r.manifest.records.len(), 40);
    assert!(r.manifest.header.summary.gbdt.is_none());
    assert!(!dir.path().join("out/gbdt_model.json").exists());
}

#[test]
fn total_outage_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.counts.stage1_n = 3;
    cfg.counts.stage2_n = 0;
    cfg.mock.failures.generator.permanent = vec![0, 1, 2];
    let m = model();
    let clients = cfg.clients();
    let err = Pipeline::new(&cfg, &m, &clients).unwrap().build_dataset().unwrap_err();
    assert!(matches!(err, PipelineError::Outage(_)));
}

#[test]
fn mined_samples_are_harder() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.counts = Counts {
        stage1_n: 80,
        stage2_candidates: 300,
        stage2_n: 40,
    };
    let r = build(&cfg);
    let detector = crate::clients::mock::MockKeypointDetector::new(&cfg.mock, &cfg.oks);
    let mean = |stage| {
        let xs: Vec<f64> = r
            .manifest
            .records
            .iter()
            .filter(|x| x.stage == stage)
            .map(|x| detector.expected_oks(&x.params))
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    assert!(mean(CurriculumStage::HardMined) < mean(CurriculumStage::Baseline));
}

#[test]
fn preference_pairs() {
    let m = model();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.dpo.conditions = 10;
    let clients = cfg.clients();
    let report = Pipeline::new(&cfg, &m, &clients).unwrap().build_dpo_dataset().unwrap();
    assert_eq!(report.conditions, 10);
    assert!(report.pairs.pairs.len() <= 10);
    assert!(!report.pairs.pairs.is_empty());
    for p in &report.pairs.pairs {
        assert!(p.winner_oks - p.loser_oks >= cfg.dpo.margin);
        assert!(p.winner_id.starts_with(&p.condition_id) && p.loser_id.starts_with(&p.condition_id));
    }
    let root = dir.path().join("out");
    let lines = std::fs::read_to_string(root.join("pairs.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), report.pairs.pairs.len());
    let table = std::fs::read_to_string(root.join("pair_scores.csv")).unwrap();
    assert_eq!(table.lines().count(), 41);
    let gap = report.gap.unwrap();
    assert!(gap.min >= cfg.dpo.margin && gap.min <= gap.mean && gap.mean <= gap.max);

    let dir2 = tempfile::tempdir().unwrap();
    let mut same = small_config(dir2.path());
    same.mock = echo_mock();
    same.dpo.variant_count = 2;
    let clients = same.clients();
    let r = Pipeline::new(&same, &m, &clients).unwrap().build_dpo_dataset().unwrap();
    assert!(r.pairs.pairs.is_empty());
    assert_eq!(r.pairs.below_margin, 10);

    same.dpo.variant_count = 1;
    let clients = same.clients();
    assert!(Pipeline::new(&same, &m, &clients).unwrap().build_dpo_dataset().is_err());
}

#[test]
fn undefined_scores_fail_filtering() {
    let mut r = sample_record(0);
    r.scores = Some(SampleScores {
        person_count: Some(1),
        oks: Some(crate::scoring::OksReport::undefined(&crate::keypoints::Keypoints2D::visible_points(vec![[0.0; 2]; 17]))),
        gt_head_pose: Some(EulerAngles::default()),
        pred_head_pose: Some(EulerAngles::default()),
    });
    let mut recs = vec![r];
    let v = apply_filters(&mut recs, &crate::filtering::FilterConfig::default()).unwrap();
    assert!(!v[0].passed);
    assert_eq!(v[0].oks_status, OksStatus::Undefined);
}
