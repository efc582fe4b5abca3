use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::clients::mock::{MockCaptioner, MockConfig, MockGenerator, MockHeadPose, MockKeypointDetector, MockPersonDetector};
use crate::clients::{Clients, Endpoint, RemoteClient};
use crate::dpo::DEFAULT_MARGIN;
use crate::filtering::FilterConfig;
use crate::mining::GbdtConfig;
use crate::render::RenderOptions;
use crate::scoring::OksConfig;

/// Prefix of every environment override.
pub const ENV_PREFIX: &str = "MESHFORGE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Counts {
    pub stage1_n: usize,
    pub stage2_candidates: usize,
    pub stage2_n: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Self {
            stage1_n: 200,
            stage2_candidates: 1000,
            stage2_n: 200,
        }
    }
}

/// Relative weights of the two label sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceMix {
    pub pose_bank: u64,
    pub motion_sequences: u64,
}

impl Default for SourceMix {
    fn default() -> Self {
        Self {
            pose_bank: 5,
            motion_sequences: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseBankSource {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSource {
    pub path: PathBuf,
    #[serde(default = "default_stride")]
    pub frame_stride: usize,
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sources {
    pub pose_bank: Option<PoseBankSource>,
    pub motion_sequences: Option<MotionSource>,
}

/// Caption templates for motion frames. `{activity}`, `{environment}` and
/// `{clothing}` are replaced by a seeded choice from the matching list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptionTemplates {
    pub templates: Vec<String>,
    pub activity: Vec<String>,
    pub environment: Vec<String>,
    pub clothing: Vec<String>,
}

impl Default for CaptionTemplates {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            templates: v(&["a person {activity} in {environment}, wearing {clothing}"]),
            activity: v(&["walking", "stretching", "dancing", "waving"]),
            environment: v(&["a park", "a kitchen", "a city street", "a gym"]),
            clothing: v(&["a red jacket", "jeans and a t-shirt", "a summer dress", "sportswear"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoDataConfig {
    pub conditions: usize,
    pub variant_count: usize,
    pub margin: f64,
}

impl Default for DpoDataConfig {
    fn default() -> Self {
        Self {
            conditions: 10,
            variant_count: 4,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Share of Stage-1 scores held out to report predictor error.
    pub holdout_fraction: f64,
    pub gbdt: GbdtConfig,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.1,
            gbdt: GbdtConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Extra attempts after the first.
    pub retries: u32,
    /// Delay before retry `k` is `backoff_ms * 2^k`.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            backoff_ms: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientEndpoints {
    pub generator: Endpoint,
    pub keypoints: Endpoint,
    pub persons: Endpoint,
    pub head_pose: Endpoint,
    pub captioner: Endpoint,
}

impl ClientEndpoints {
    fn slot(&mut self, name: &str) -> Option<&mut Endpoint> {
        Some(match name {
            "GENERATOR" => &mut self.generator,
            "KEYPOINTS" => &mut self.keypoints,
            "PERSONS" => &mut self.persons,
            "HEAD_POSE" => &mut self.head_pose,
            "CAPTIONER" => &mut self.captioner,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Dataset root.
    pub root: PathBuf,
    /// Body model file.
    pub model: PathBuf,
    pub counts: Counts,
    pub source_mix: SourceMix,
    pub sources: Sources,
    pub captions: CaptionTemplates,
    pub dpo: DpoDataConfig,
    pub mining: MiningConfig,
    pub filter: FilterConfig,
    pub oks: OksConfig,
    pub render: RenderOptions,
    pub retry: RetryPolicy,
    pub clients: ClientEndpoints,
    pub mock: MockConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            root: PathBuf::from("dataset"),
            model: PathBuf::from("model.json"),
            counts: Counts::default(),
            source_mix: SourceMix::default(),
            sources: Sources::default(),
            captions: CaptionTemplates::default(),
            dpo: DpoDataConfig::default(),
            mining: MiningConfig::default(),
            filter: FilterConfig::default(),
            oks: OksConfig::default(),
            render: RenderOptions::default(),
            retry: RetryPolicy::default(),
            clients: ClientEndpoints::default(),
            mock: MockConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Reads a config file, applies `MESHFORGE_*` overrides from the process
    /// environment and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, base)?;
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.root);
        fix(&mut self.model);
        if let Some(s) = &mut self.sources.pose_bank {
            fix(&mut s.path);
        }
        if let Some(s) = &mut self.sources.motion_sequences {
            fix(&mut s.path);
        }
    }

    /// Overrides: `SEED`, `WORKERS`, `ROOT`, `MODEL`, and per client
    /// (`GENERATOR`, `KEYPOINTS`, `PERSONS`, `HEAD_POSE`, `CAPTIONER`)
    /// `<CLIENT>_URL`, `<CLIENT>_COMMAND` (whitespace separated) or
    /// `<CLIENT>_BACKEND=mock`. Unknown `MESHFORGE_*` names are ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), PipelineError> {
        let mut vars: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_string(), v)))
            .collect();
        vars.sort();
        for (key, value) in vars {
            let bad = |what: &str| PipelineError::Config(format!("{ENV_PREFIX}{key}={value:?}: {what}"));
            match key.as_str() {
                "SEED" => self.seed = value.parse().map_err(|_| bad("not an unsigned integer"))?,
                "WORKERS" => self.workers = value.parse().map_err(|_| bad("not an unsigned integer"))?,
                "ROOT" => self.root = PathBuf::from(&value),
                "MODEL" => self.model = PathBuf::from(&value),
                _ => {
                    let Some((client, field)) = key.rsplit_once('_') else { continue };
                    let Some(slot) = self.clients.slot(client) else { continue };
                    *slot = match field {
                        "URL" => Endpoint::Http {
                            url: value.clone(),
                            timeout_secs: 120,
                        },
                        "COMMAND" => {
                            let mut parts = value.split_whitespace().map(String::from);
                            let program = parts.next().ok_or_else(|| bad("empty command"))?;
                            Endpoint::Command {
                                program,
                                args: parts.collect(),
                            }
                        }
                        "BACKEND" if value == "mock" => Endpoint::Mock,
                        "BACKEND" => return Err(bad("only `mock` can be set this way")),
                        _ => continue,
                    };
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.source_mix.pose_bank == 0 && self.source_mix.motion_sequences == 0 {
            return bad("source_mix weights are both zero".into());
        }
        if self.source_mix.pose_bank > 0 && self.sources.pose_bank.is_none() {
            return bad("source_mix.pose_bank > 0 but no [sources.pose_bank]".into());
        }
        match &self.sources.motion_sequences {
            None if self.source_mix.motion_sequences > 0 => {
                return bad("source_mix.motion_sequences > 0 but no [sources.motion_sequences]".into())
            }
            Some(m) if m.frame_stride == 0 => return bad("frame_stride must be at least 1".into()),
            _ => {}
        }
        if !(0.0..1.0).contains(&self.mining.holdout_fraction) {
            return bad(format!("holdout_fraction {} outside [0, 1)", self.mining.holdout_fraction));
        }
        if !(self.dpo.margin >= 0.0 && self.dpo.margin.is_finite()) {
            return bad(format!("dpo.margin {}", self.dpo.margin));
        }
        let c = &self.captions;
        if c.templates.is_empty() || c.activity.is_empty() || c.environment.is_empty() || c.clothing.is_empty() {
            return bad("caption templates and slot lists must be non-empty".into());
        }
        self.filter.validate()?;
        self.oks.validate()?;
        self.mining.gbdt.validate()?;
        Ok(())
    }

    /// Client set for the configured endpoints; mock slots share `self.mock`.
    pub fn clients(&self) -> Clients {
        let mock = Clients {
            generator: Arc::new(MockGenerator::new(&self.mock)),
            keypoints: Arc::new(MockKeypointDetector::new(&self.mock, &self.oks)),
            persons: Arc::new(MockPersonDetector::new(&self.mock)),
            head_pose: Arc::new(MockHeadPose::new(&self.mock)),
            captioner: Arc::new(MockCaptioner),
        };
        let e = &self.clients;
        Clients {
            generator: match RemoteClient::new(&e.generator) {
                Some(c) => Arc::new(c),
                None => mock.generator,
            },
            keypoints: match RemoteClient::new(&e.keypoints) {
                Some(c) => Arc::new(c),
                None => mock.keypoints,
            },
            persons: match RemoteClient::new(&e.persons) {
                Some(c) => Arc::new(c),
                None => mock.persons,
            },
            head_pose: match RemoteClient::new(&e.head_pose) {
                Some(c) => Arc::new(c),
                None => mock.head_pose,
            },
            captioner: match RemoteClient::new(&e.captioner) {
                Some(c) => Arc::new(c),
                None => mock.captioner,
            },
        }
    }
}

/// Splits `n` in proportion to `weights` by largest remainder; ties go to
/// the earlier weight. Every share is within one of its exact quota.
pub fn split_counts(n: usize, weights: &[u64]) -> Vec<usize> {
    let total: u128 = weights.iter().map(|&w| w as u128).sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<(u128, u128)> = weights
        .iter()
        .map(|&w| ((n as u128 * w as u128) / total, (n as u128 * w as u128) % total))
        .collect();
    let mut out: Vec<usize> = exact.iter().map(|(q, _)| *q as usize).collect();
    let short = n - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| exact[b].1.cmp(&exact[a].1).then(a.cmp(&b)));
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}
