//! `meshforge` command line: one subcommand per pipeline stage plus the full
//! curriculum build.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use meshforge::body_model::{BodyModel, SmplxParams};
use meshforge::filtering::filter_stats;
use meshforge::mining::{featurize, fit, select_hard_samples, GbdtModel};
use meshforge::pipeline::{
    apply_filters, read_manifest, write_manifest, Manifest, PipelineConfig, PipelineError, Pipeline, RecordStatus,
};
use meshforge::render::{render_control_pair, Camera, ColorScheme, RenderOptions};
use meshforge::scoring::OksStatus;

const DEFAULT_CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");

#[derive(Parser)]
#[command(name = "meshforge", version, about = "Synthetic human image dataset pipeline")]
struct Cli {
    /// Pipeline config (TOML). Defaults to the bundled desk-scale config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print a JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Colors {
    Pncc,
    VertexId,
}

#[derive(Subcommand)]
enum Command {
    /// Render the mesh and skeleton control images and ground-truth keypoints of one label.
    Render {
        /// Body model JSON.
        #[arg(long)]
        model: PathBuf,
        /// SMPL-X style parameters JSON.
        #[arg(long)]
        params: PathBuf,
        /// Camera JSON; framed automatically when absent.
        #[arg(long)]
        camera: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pncc")]
        colors: Colors,
    },
    /// Score every generated, unscored record of a manifest.
    Score {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run the quality filters over a manifest and rewrite its statistics.
    Filter {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// List the manifest records predicted to be hardest.
    Mine {
        #[arg(long)]
        manifest: PathBuf,
        /// How many ids to select.
        #[arg(long)]
        n: usize,
        /// Difficulty model; defaults to gbdt_model.json next to the manifest,
        /// or a model fitted on the manifest's own scores.
        #[arg(long)]
        gbdt: Option<PathBuf>,
    },
    /// Build the preference-pair dataset.
    Pairs,
    /// Run the full two-stage curriculum.
    Build,
    /// Compute filter statistics of a manifest.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Where stats.json and stats.csv go; defaults to the manifest directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_validation() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    require_file(path, what)?;
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<BodyModel> {
    require_file(path, "model file")?;
    BodyModel::load(path).map_err(usage)
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    require_file(path, "manifest")?;
    Ok(read_manifest(path)?)
}

fn manifest_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG));
    require_file(&path, "config file")?;
    let mut cfg = PipelineConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn emit(json_out: bool, value: &Value) {
    if json_out {
        println!("{}", serde_json::to_string_pretty(value).expect("json"));
        return;
    }
    match value {
        Value::Object(map) => {
            let width = map.keys().map(String::len).max().unwrap_or(0);
            for (k, v) in map {
                let shown = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                println!("{k:<width$}  {shown}");
            }
        }
        other => println!("{other}"),
    }
}

fn cmd_render(model: &Path, params: &Path, camera: Option<&Path>, out: &Path, colors: Colors, cli: &Cli) -> Result<Value> {
    let model = load_model(model)?;
    let params: SmplxParams = read_json(params, "params file")?;
    let mut options = match &cli.config {
        Some(_) => load_config(cli)?.render,
        None => RenderOptions::default(),
    };
    options.colors = match colors {
        Colors::Pncc => ColorScheme::Pncc,
        Colors::VertexId => ColorScheme::VertexId,
    };
    let camera = match camera {
        Some(p) => read_json::<Camera>(p, "camera file")?,
        None => {
            let mesh = model.forward(&params).map_err(usage)?;
            Camera::framing(&mesh.vertices, &options.rig).map_err(usage)?
        }
    };
    let pair = render_control_pair(&model, &params, &camera, &options).map_err(usage)?;
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    pair.mesh.write_png(out.join("control.png")).map_err(runtime)?;
    pair.skeleton.write_png(out.join("skeleton.png")).map_err(runtime)?;
    let keypoints = json!({
        "names": model.keypoint_names(),
        "keypoints": pair.keypoints,
        "camera": camera,
    });
    let kp_path = out.join("keypoints.json");
    std::fs::write(&kp_path, serde_json::to_string_pretty(&keypoints).expect("json")).map_err(runtime)?;
    Ok(json!({
        "control": out.join("control.png"),
        "skeleton": out.join("skeleton.png"),
        "keypoints": kp_path,
        "visible_keypoints": pair.keypoints.num_visible(),
    }))
}

fn status_counts(m: &Manifest) -> Value {
    let s = &m.header.summary;
    json!({
        "records": s.records,
        "scored": s.scored,
        "unscored": s.unscored,
        "failed_generation": s.failed_generation,
        "passed": s.passed,
        "failed": s.failed,
        "pass_rate": s.pass_rate,
    })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(x), Value::Object(y)) = (&mut a, b) {
        x.extend(y);
    }
    a
}

fn cmd_score(path: &Path, cli: &Cli) -> Result<Value> {
    let mut cfg = load_config(cli)?;
    let mut manifest = load_manifest(path)?;
    cfg.root = manifest_dir(path);
    let model = load_model(&cfg.model)?;
    let clients = cfg.clients();
    let pipeline = Pipeline::new(&cfg, &model, &clients)?;
    let before = manifest.records.iter().filter(|r| r.status == RecordStatus::Scored).count();
    manifest.records = pipeline.score_batch(std::mem::take(&mut manifest.records));
    manifest.refresh();
    write_manifest(&manifest, path)?;
    let newly = manifest.header.summary.scored - before;
    Ok(merge(
        json!({"manifest": path, "newly_scored": newly, "digest": manifest.digest()}),
        status_counts(&manifest),
    ))
}

fn cmd_filter(path: &Path, cli: &Cli) -> Result<Value> {
    let cfg = load_config(cli)?;
    let mut manifest = load_manifest(path)?;
    let verdicts = apply_filters(&mut manifest.records, &cfg.filter)?;
    let stats = filter_stats(&verdicts);
    let dir = manifest_dir(path);
    meshforge::pipeline::atomic_write(&dir.join("stats.json"), stats.to_json().as_bytes())?;
    meshforge::pipeline::atomic_write(&dir.join("stats.csv"), stats.to_csv().as_bytes())?;
    manifest.refresh();
    write_manifest(&manifest, path)?;
    Ok(merge(
        json!({
            "manifest": path,
            "stage_pass_rates": stats.stage_pass_rates,
            "digest": manifest.digest(),
        }),
        status_counts(&manifest),
    ))
}

fn cmd_mine(path: &Path, n: usize, gbdt: Option<&Path>, cli: &Cli) -> Result<Value> {
    let manifest = load_manifest(path)?;
    let mut candidates = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        candidates.push((r.id.clone(), featurize(&r.params, r.params.theta.len()).map_err(usage)?));
    }
    let default_model = manifest_dir(path).join("gbdt_model.json");
    let (model, source) = match gbdt {
        Some(p) => {
            require_file(p, "GBDT model")?;
            (GbdtModel::load(p).map_err(usage)?, p.display().to_string())
        }
        None if default_model.is_file() => (GbdtModel::load(&default_model).map_err(usage)?, default_model.display().to_string()),
        None => {
            let cfg = load_config(cli)?;
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (r, (_, f)) in manifest.records.iter().zip(&candidates) {
                let report = r.scores.as_ref().and_then(|s| s.oks.as_ref());
                if let (RecordStatus::Scored, Some(rep)) = (r.status, report) {
                    if rep.status != OksStatus::Undefined {
                        x.push(f.clone());
                        y.push(rep.oks);
                    }
                }
            }
            (fit(&x, &y, &cfg.mining.gbdt).map_err(usage)?, "fitted on manifest scores".to_string())
        }
    };
    let selected = select_hard_samples(&candidates, &model, n).map_err(usage)?;
    let mut out = json!({
        "requested": n,
        "available": candidates.len(),
        "model": source,
        "selected": selected,
    });
    if n > candidates.len() {
        out["warning"] = json!(format!("requested {n} but the manifest has only {} records", candidates.len()));
    }
    Ok(out)
}

fn cmd_pairs(cli: &Cli) -> Result<Value> {
    let cfg = load_config(cli)?;
    let model = load_model(&cfg.model)?;
    let clients = cfg.clients();
    let pipeline = Pipeline::new(&cfg, &model, &clients)?;
    let report = pipeline.build_dpo_dataset()?;
    Ok(json!({
        "root": pipeline.root(),
        "pairs_file": pipeline.root().join("pairs.jsonl"),
        "conditions": report.conditions,
        "variant_count": report.variant_count,
        "pairs": report.pairs.pairs.len(),
        "skipped_small": report.pairs.skipped_small,
        "below_margin": report.pairs.below_margin,
        "oks_gap": report.gap,
        "digest": report.digest,
    }))
}

fn cmd_build(cli: &Cli) -> Result<Value> {
    let cfg = load_config(cli)?;
    let model = load_model(&cfg.model)?;
    let clients = cfg.clients();
    let pipeline = Pipeline::new(&cfg, &model, &clients)?;
    let report = pipeline.build_dataset()?;
    let s = &report.manifest.header.summary;
    Ok(merge(
        json!({
            "root": pipeline.root(),
            "manifest": pipeline.root().join("manifest.jsonl"),
            "baseline": s.baseline,
            "hard_mined": s.hard_mined,
            "pose_bank": s.pose_bank,
            "motion_sequences": s.motion_sequences,
            "mean_oks_baseline": s.mean_oks_baseline,
            "mean_oks_hard_mined": s.mean_oks_hard_mined,
            "gbdt": s.gbdt,
            "digest": report.digest,
        }),
        status_counts(&report.manifest),
    ))
}

fn cmd_stats(path: &Path, out: Option<&Path>) -> Result<Value> {
    let manifest = load_manifest(path)?;
    let verdicts: Vec<_> = manifest.records.iter().filter_map(|r| r.verdict.clone()).collect();
    let stats = filter_stats(&verdicts);
    let dir = out.map_or_else(|| manifest_dir(path), Path::to_path_buf);
    meshforge::pipeline::atomic_write(&dir.join("stats.json"), stats.to_json().as_bytes())?;
    meshforge::pipeline::atomic_write(&dir.join("stats.csv"), stats.to_csv().as_bytes())?;
    Ok(json!({
        "stats_json": dir.join("stats.json"),
        "stats_csv": dir.join("stats.csv"),
        "total": stats.total,
        "passed": stats.passed,
        "failed": stats.failed,
        "pass_rate": stats.pass_rate,
        "stage_pass_rates": stats.stage_pass_rates,
        "no_detection": stats.no_detection,
        "oks_histogram": stats.oks_histogram.counts,
    }))
}

fn run(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::Render {
            model,
            params,
            camera,
            out,
            colors,
        } => cmd_render(model, params, camera.as_deref(), out, *colors, cli),
        Command::Score { manifest } => cmd_score(manifest, cli),
        Command::Filter { manifest } => cmd_filter(manifest, cli),
        Command::Mine { manifest, n, gbdt } => cmd_mine(manifest, *n, gbdt.as_deref(), cli),
        Command::Pairs => cmd_pairs(cli),
        Command::Build => cmd_build(cli),
        Command::Stats { manifest, out } => cmd_stats(manifest, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(&cli) {
        Ok(value) => {
            if let Some(w) = value.get("warning").and_then(Value::as_str) {
                log::warn!("{w}");
            }
            emit(cli.json, &value);
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
