//! Command-line front end: argument parsing and stage dispatch.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use relightkit::edit::{apply_edit, EditRequest, SceneLibrary};
use relightkit::mask::MaskPredictor;
use relightkit::pipeline::{run_stage, stage_eval_from, IntrinsicsSource, PipelineConfig, Stage};
use serde::Serialize;

use crate::service::{serve, AppState};

/// Exit code for a stage or module failure.
pub const EXIT_FAILURE: i32 = 1;
/// Exit code for bad flags (matches clap's usage errors).
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "relightkit", version, about = "Relighting pipeline and service")]
pub struct Cli {
    /// Pipeline config (TOML or JSON); defaults are used when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output root.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the multi-view, multi-light dataset.
    Gen,
    /// Sample relighting pairs from the manifest.
    Pairs,
    /// Extract ground-truth lighting masks for every pair.
    MaskGt,
    /// Train the mask predictor.
    TrainMask,
    /// Fit the proxy encoder on supervised records.
    FitProxy,
    /// Preference-refine the fitted encoder.
    Dpo,
    /// Relight eval pairs, or replay an exported edit list.
    Relight(RelightArgs),
    /// Score predictions; exits nonzero if any pair is missing.
    Eval(EvalArgs),
    /// Run every stage in order.
    Run,
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RelightArgs {
    /// JSON array of edits to replay against the dataset scenes.
    #[arg(long)]
    pub edits: Option<PathBuf>,
    /// Use re-rendered G-buffers instead of the proxy encoder.
    #[arg(long)]
    pub oracle_intrinsics: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction directory (default: the pipeline's own predictions).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Serve N procedural scenes instead of the dataset.
    #[arg(long)]
    pub procedural: Option<usize>,
    /// Preview resolution for procedural scenes.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Trained mask predictor; masks fall back to image differences without it.
    #[arg(long)]
    pub mask_predictor: Option<PathBuf>,
    /// Static UI assets served outside /v1.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub exposure: f64,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| anyhow::anyhow!("config: {e}"))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.output {
        cfg.paths.output = out.clone();
    }
    Ok(cfg)
}

fn stage_of(command: &Command) -> Option<Stage> {
    Some(match command {
        Command::Gen => Stage::Gen,
        Command::Pairs => Stage::Pairs,
        Command::MaskGt => Stage::MaskGt,
        Command::TrainMask => Stage::TrainMask,
        Command::FitProxy => Stage::FitProxy,
        Command::Dpo => Stage::Dpo,
        Command::Relight(_) | Command::Eval(_) | Command::Run | Command::Serve(_) => return None,
    })
}

fn run_one(stage: Stage, cfg: &PipelineConfig) -> anyhow::Result<i32> {
    let outcome = run_stage(stage, cfg).map_err(|e| anyhow::anyhow!("{}: {e}", stage.name()))?;
    println!("{}", outcome.summary);
    Ok(if outcome.complete { 0 } else { EXIT_FAILURE })
}

fn execute(cli: Cli) -> anyhow::Result<i32> {
    let mut cfg = load_config(&cli)?;
    if let Some(stage) = stage_of(&cli.command) {
        return run_one(stage, &cfg);
    }
    match &cli.command {
        Command::Run => {
            for stage in Stage::ALL {
                let code = run_one(stage, &cfg)?;
                if code != 0 {
                    return Ok(code);
                }
            }
            Ok(0)
        }
        Command::Relight(args) => match &args.edits {
            Some(edits) => replay_edits(&cfg, edits),
            None => {
                if args.oracle_intrinsics {
                    cfg.relight.intrinsics = IntrinsicsSource::Gbuffer;
                }
                run_one(Stage::Relight, &cfg)
            }
        },
        Command::Eval(args) => {
            let predictions = args
                .predictions
                .clone()
                .unwrap_or_else(|| cfg.layout().predictions_dir());
            let (outcome, report) =
                stage_eval_from(&cfg, &predictions).map_err(|e| anyhow::anyhow!("eval: {e}"))?;
            println!("{}", outcome.summary);
            for err in &report.errors {
                eprintln!("eval: {}: {}", err.pair_id, err.message);
            }
            Ok(if outcome.complete { 0 } else { EXIT_FAILURE })
        }
        Command::Serve(args) => serve_command(&cfg, args),
        _ => unreachable!("stage commands handled above"),
    }
}

#[derive(Serialize)]
struct ReplayEntry {
    scene_id: String,
    png: String,
    delta_l: relightkit::light::DeltaL,
    target_light: relightkit::light::LightParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<relightkit::metrics::PairScores>,
}

/// Replays exported edit states and writes one PNG per edit.
fn replay_edits(cfg: &PipelineConfig, path: &Path) -> anyhow::Result<i32> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("relight: {}: {e}", path.display()))?;
    let edits: Vec<EditRequest> =
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("relight: {}: {e}", path.display()))?;
    let layout = cfg.layout();
    let library = SceneLibrary::from_manifest(&layout.manifest()).map_err(|e| anyhow::anyhow!("relight: {e}"))?;
    let out_dir = layout.root.join("edits");
    let mut entries = Vec::with_capacity(edits.len());
    for (i, req) in edits.iter().enumerate() {
        let scene = library
            .get(&req.scene_id)
            .ok_or_else(|| anyhow::anyhow!("relight: edit {i}: unknown scene {:?}", req.scene_id))?;
        let out = apply_edit(&scene, req, None, cfg.eval.exposure)
            .map_err(|e| anyhow::anyhow!("relight: edit {i}: {e}"))?;
        let name = format!("{i:03}_{}.png", req.scene_id);
        relightkit::image::write_file(&out_dir.join(&name), &out.png)?;
        entries.push(ReplayEntry {
            scene_id: req.scene_id.clone(),
            png: name,
            delta_l: out.delta,
            target_light: out.target_light,
            metrics: out.metrics,
        });
    }
    relightkit::image::write_file(
        &out_dir.join("results.json"),
        format!("{}\n", relightkit::json::to_string(&entries)?).as_bytes(),
    )?;
    println!("relight: {} edits replayed -> {}", entries.len(), out_dir.display());
    Ok(0)
}

fn serve_command(cfg: &PipelineConfig, args: &ServeArgs) -> anyhow::Result<i32> {
    let library = match args.procedural {
        Some(n) => SceneLibrary::procedural(n, cfg.seed, args.size),
        None => SceneLibrary::from_manifest(&cfg.layout().manifest()),
    }
    .map_err(|e| anyhow::anyhow!("serve: {e}"))?;
    let predictor = match &args.mask_predictor {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("serve: {}: {e}", p.display()))?;
            Some(Arc::new(MaskPredictor::from_json(&text).map_err(|e| anyhow::anyhow!("serve: {e}"))?))
        }
        None => None,
    };
    if !(args.exposure > 0.0 && args.exposure.is_finite()) {
        anyhow::bail!("serve: exposure must be > 0");
    }
    let state = AppState {
        library: Arc::new(library),
        predictor,
        exposure: args.exposure,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(state, args.static_dir.clone(), args.addr))?;
    Ok(0)
}
