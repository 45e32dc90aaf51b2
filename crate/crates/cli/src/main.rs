//! `densecorr`: dataset generation, training, evaluation, matching and the
//! grasp demo.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 no
//! match, 4 no feasible grasp.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use densecorr_core::net::{load_checkpoint, Checkpoint};
use densecorr_core::pipeline::{
    evaluate, find_match_in_dataset, generate_dataset, grasp_demo, read_dataset, sample_eval_pairs, train,
    write_dataset, write_eval, write_match_visualization, DatasetConfig, EvalConfig, GraspDemoConfig, MatchQuery,
    TrainConfig, TrainingMode,
};
use densecorr_core::{Error, Pixel};

#[derive(Parser)]
#[command(
    name = "densecorr",
    version,
    about = "Self-supervised dense descriptors on synthetic RGBD scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file. Relative paths inside it are resolved
    /// against its directory.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render, reconstruct and write a dataset.
    GenDataset(Common),
    /// Train a descriptor network on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Override the configured number of steps.
        #[arg(long, value_name = "N")]
        steps: Option<usize>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<TrainingMode>,
    },
    /// Evaluate a checkpoint on held-out scenes.
    Eval(Common),
    /// Find the best match of one pixel in another image.
    FindMatch(Common),
    /// Match a clicked point into a test scene and grasp it.
    GraspDemo(Common),
}

fn parse_mode(s: &str) -> Result<TrainingMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFile {
    dataset: PathBuf,
    checkpoint: PathBuf,
    #[serde(default)]
    eval: EvalConfig,
}

fn default_margin() -> f64 {
    0.5
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchFile {
    dataset: PathBuf,
    checkpoint: PathBuf,
    #[serde(default = "default_margin")]
    margin: f64,
    query: MatchQuery,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraspFile {
    dataset: PathBuf,
    checkpoint: PathBuf,
    #[serde(default)]
    demo: GraspDemoConfig,
}

#[derive(Serialize)]
struct MatchOutput {
    best_pixel: Pixel,
    best_distance: f64,
    valid: bool,
    oracle_pixel: Option<Pixel>,
}

fn config_error(msg: String) -> anyhow::Error {
    Error::Config(msg).into()
}

fn base_dir(config: Option<&Path>) -> PathBuf {
    config.and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn required_config<T: DeserializeOwned>(common: &Common) -> anyhow::Result<(T, PathBuf)> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| config_error("--config is required for this command".into()))?;
    Ok((read_config(path)?, base_dir(Some(path))))
}

/// `run/checkpoints/final` (optionally with `.json`) names a checkpoint.
fn load_named_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let path = if path.extension().is_some_and(|e| e == "json" || e == "bin") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let stem = path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| config_error(format!("bad checkpoint path {}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    load_checkpoint(dir, stem).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn gen_dataset(common: Common) -> anyhow::Result<ExitCode> {
    let cfg: DatasetConfig = match &common.config {
        Some(p) => read_config(p)?,
        None => DatasetConfig::default(),
    };
    let out = common.out.unwrap_or_else(|| "dataset".into());
    let ds = generate_dataset(&cfg, common.seed.unwrap_or(0))?;
    write_dataset(&out, &ds)?;
    println!(
        "wrote {} scenes, {} frames to {}",
        ds.scenes.len(),
        ds.total_frames(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(common: Common, steps: Option<usize>, mode: Option<TrainingMode>) -> anyhow::Result<ExitCode> {
    let mut cfg: TrainConfig = match &common.config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    let base = base_dir(common.config.as_deref());
    // The cross-object flag follows the mode.
    let mode = mode.unwrap_or(cfg.mode);
    cfg = cfg.with_mode(mode);
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dataset = resolve(
        &base,
        cfg.dataset
            .as_deref()
            .ok_or_else(|| config_error("train config needs a dataset path".into()))?,
    );
    cfg.dataset = Some(dataset.clone());
    let ds = read_dataset(&dataset).with_context(|| format!("reading dataset {}", dataset.display()))?;
    let out = common.out.unwrap_or_else(|| "run".into());
    std::fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    let outcome = train(&ds, &cfg, Some(&out))?;
    let last = outcome.log.last().map_or(f64::NAN, |l| l.l_total);
    println!(
        "trained {} steps, final loss {last:.5}, output in {}",
        cfg.steps,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(common: Common) -> anyhow::Result<ExitCode> {
    let (mut file, base): (EvalFile, _) = required_config(&common)?;
    if let Some(s) = common.seed {
        file.eval.seed = s;
    }
    let ds = read_dataset(&resolve(&base, &file.dataset))?;
    let ckpt = load_named_checkpoint(&resolve(&base, &file.checkpoint))?;
    let pairs = sample_eval_pairs(&ds, file.eval.n_pairs, file.eval.seed, file.eval.max_attempts)?;
    let report = evaluate(&ckpt.params, &ckpt.arch, &ds, &pairs, &file.eval)?;
    let out = common.out.unwrap_or_else(|| "eval".into());
    write_eval(&out, &report)?;
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(ExitCode::SUCCESS)
}

fn find_match_cmd(common: Common) -> anyhow::Result<ExitCode> {
    let (file, base): (MatchFile, _) = required_config(&common)?;
    let ds = read_dataset(&resolve(&base, &file.dataset))?;
    let ckpt = load_named_checkpoint(&resolve(&base, &file.checkpoint))?;
    let q = &file.query;
    let (decision, oracle) = find_match_in_dataset(&ckpt.params, &ckpt.arch, &ds, q, file.margin)?;
    let output = MatchOutput {
        best_pixel: decision.best_pixel,
        best_distance: decision.best_distance,
        valid: decision.valid,
        oracle_pixel: oracle,
    };
    println!("{}", serde_json::to_string_pretty(&output)?);
    if let Some(out) = &common.out {
        write_json(&out.join("match.json"), &output)?;
        let rgb = |s: usize, f: usize| &ds.scenes[s].frames[f].frame.rgb;
        write_match_visualization(
            &out.join("match.ppm"),
            rgb(q.reference_scene, q.reference_frame),
            Pixel::at(q.pixel[0], q.pixel[1]),
            rgb(q.target_scene, q.target_frame),
            decision.best_pixel,
        )?;
    }
    Ok(if decision.valid {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn grasp_demo_cmd(common: Common) -> anyhow::Result<ExitCode> {
    let (mut file, base): (GraspFile, _) = required_config(&common)?;
    if let Some(s) = common.seed {
        file.demo.seed = s;
    }
    let ds = read_dataset(&resolve(&base, &file.dataset))?;
    let ckpt = load_named_checkpoint(&resolve(&base, &file.checkpoint))?;
    let report = grasp_demo(&ckpt.params, &ckpt.arch, &ds, &file.demo)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &common.out {
        write_json(&out.join("grasp.json"), &report)?;
        let d = &file.demo;
        write_match_visualization(
            &out.join("match.ppm"),
            &ds.scenes[d.reference_scene].frames[d.reference_frame].frame.rgb,
            report.reference_pixel,
            &ds.scenes[d.test_scene].frames[report.target.view].frame.rgb,
            report.target.pixel,
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidDistribution) => 2,
        Some(Error::NoMatch) => 3,
        Some(Error::NoFeasibleGrasp | Error::TargetUnreachable { .. }) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenDataset(c) => gen_dataset(c),
        Command::Train { common, steps, mode } => train_cmd(common, steps, mode),
        Command::Eval(c) => eval_cmd(c),
        Command::FindMatch(c) => find_match_cmd(c),
        Command::GraspDemo(c) => grasp_demo_cmd(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
