//! Command-line front end: one binary, one subcommand per pipeline step.
//!
//! Errors print a single `error[<category>]: <message>` line on stderr and map
//! to exit codes 2 (config), 3 (data), 4 (training abort) and 5 (stage order).

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use config::{EvalSettings, Overrides, ProviderSpec, RunConfig, TrainSettings};

use crate::dataio::synthetic::{write_fixture_raw, FixtureSpec, PERSON};
use crate::dataio::{
    apply_mask, build_dataset, crop_face, list_stills, synthesize_hmd_mask, DatasetManifest, FrameRef, Split,
};
use crate::error::{Error, Result};
use crate::evaluation::{ablation_configs, evaluate_with, make_grid, AblationReport, MetricsReport};
use crate::image::{BinaryMask, Image, FACE_SIZE};
use crate::training::{
    gradient_flow_probe, load_checkpoint_for, reconstruct, run_pretrain, run_stage1, run_stage2, RunOutput, Stage,
    TrainOutcome, TrainState,
};

#[derive(Debug, Parser)]
#[command(name = "deocc", version, about = "Person-specific face de-occlusion pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory name under `runs_dir` (default: timestamp and command).
    #[arg(long, global = true)]
    pub run_name: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub lambda_rec: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_adv: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_ssim: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_mask: Option<f64>,
    /// Disable attention fusion at inference and evaluation time.
    #[arg(long, global = true)]
    pub no_attention: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic raw dataset and a matching config.
    Synth(SynthArgs),
    /// Crop, mask and index raw sequences into a dataset.
    Prepare(PrepareArgs),
    /// Pretrain on generic faces.
    Pretrain(TrainArgs),
    /// Stage 1: identity reconstruction on the person's unoccluded frames.
    Stage1(TrainArgs),
    /// Stage 2: end-to-end fine-tuning with attention on occluded frames.
    Stage2(TrainArgs),
    /// Reconstruct occluded images.
    Infer(InferArgs),
    /// Compute SSIM / PSNR / LPIPS reports.
    Evaluate(EvaluateArgs),
    /// Render a comparison grid.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub generic: usize,
    #[arg(long, default_value_t = 4)]
    pub generic_frames: usize,
    #[arg(long, default_value_t = 16)]
    pub person_frames: usize,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared dataset directory (or its manifest.json).
    #[arg(long)]
    pub data: PathBuf,
    /// Initial checkpoint; required for stage1 and stage2.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image file or directory of images.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory (default: `<run dir>/outputs`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Binary mask image applied to every input; without it masks come from landmarks.
    #[arg(long)]
    pub mask_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "ablation")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "eval")]
    pub split: String,
    /// Checkpoints trained with the four loss configurations, in order.
    #[arg(long, num_args = 1.., conflicts_with = "checkpoint")]
    pub ablation: Option<Vec<PathBuf>>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "eval")]
    pub split: String,
    #[arg(long, default_value_t = 2)]
    pub count: usize,
    /// Extra checkpoints rendered as additional columns.
    #[arg(long)]
    pub baseline: Vec<PathBuf>,
    /// Output PNG (default: `<run dir>/grid.png`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    fn overrides(&self, steps: Option<u64>) -> Overrides {
        Overrides {
            seed: self.seed,
            steps,
            lambda_rec: self.lambda_rec,
            lambda_adv: self.lambda_adv,
            lambda_ssim: self.lambda_ssim,
            lambda_mask: self.lambda_mask,
            no_attention: self.no_attention,
        }
    }
}

/// An immutable per-invocation output directory with the effective config echoed into it.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(cfg: &RunConfig, name: Option<&str>, command: &str, extra: serde_json::Value) -> Result<Self> {
        let name = match name {
            Some(n) => n.to_string(),
            None => format!("{}-{command}", chrono::Local::now().format("%Y%m%d-%H%M%S")),
        };
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(Error::Config(format!("invalid run name `{name}`")));
        }
        let path = cfg.runs_dir.join(name);
        if path.exists() {
            return Err(Error::Config(format!(
                "run directory {} already exists",
                path.display()
            )));
        }
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        let cfg_path = path.join("config.toml");
        fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
        let run = json!({
            "command": command,
            "seed": cfg.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "inputs": extra,
        });
        let run_path = path.join("run.json");
        fs::write(&run_path, serde_json::to_string_pretty(&run).unwrap() + "\n")
            .map_err(|e| Error::io(&run_path, e))?;
        // kept apart from run.json so identical runs produce identical files apart from this one
        let ts = path.join("started_at");
        fs::write(&ts, chrono::Local::now().to_rfc3339() + "\n").map_err(|e| Error::io(&ts, e))?;
        Ok(Self { path })
    }
}

fn path_json(p: &Path) -> serde_json::Value {
    json!(p.display().to_string())
}

/// Split assignment matching the layout written by `synth`.
pub fn fixture_splits(generic: usize) -> BTreeMap<String, Vec<Split>> {
    let mut m = BTreeMap::new();
    for i in 0..generic {
        m.insert(format!("generic-{i:02}/*"), vec![Split::Pretrain]);
    }
    m.insert(format!("{PERSON}/seq-00"), vec![Split::Stage1, Split::Stage2]);
    m.insert(format!("{PERSON}/seq-01"), vec![Split::Eval]);
    m
}

pub fn cmd_synth(args: &SynthArgs, cfg: &RunConfig) -> Result<()> {
    let spec = FixtureSpec {
        generic_identities: args.generic,
        generic_frames: args.generic_frames,
        person_sequences: 2,
        person_frames: args.person_frames,
        seed: cfg.seed,
        ..FixtureSpec::default()
    };
    let raw = args.out.join("raw");
    write_fixture_raw(&raw, &spec)?;
    let mut out_cfg = cfg.clone();
    out_cfg.data.splits = fixture_splits(args.generic);
    let p = args.out.join("config.toml");
    fs::write(&p, out_cfg.to_toml()).map_err(|e| Error::io(&p, e))?;
    println!("raw: {}", raw.display());
    println!("config: {}", p.display());
    Ok(())
}

pub fn cmd_prepare(args: &PrepareArgs, cfg: &RunConfig) -> Result<DatasetManifest> {
    let provider = cfg.landmarks.build()?;
    let dcfg = cfg.dataset_config();
    match build_dataset(&args.raw, &args.out, &dcfg, provider.as_ref()) {
        Ok(m) => {
            let p = args.out.join("prepare-config.toml");
            fs::write(&p, cfg.to_toml()).map_err(|e| Error::io(&p, e))?;
            for s in Split::ALL {
                println!("{s}: {}", m.records(s).count());
            }
            println!("manifest: {}", args.out.join(crate::dataio::MANIFEST_FILE).display());
            Ok(m)
        }
        Err(Error::Dataset { summary, report }) => {
            let p = args.out.join("prepare-failures.txt");
            if fs::create_dir_all(&args.out).is_ok() {
                let _ = fs::write(&p, report.join("\n") + "\n");
            }
            Err(Error::Dataset {
                summary: format!("{summary}; per-frame report in {}", p.display()),
                report,
            })
        }
        Err(e) => Err(e),
    }
}

fn load_init(path: &Path, cfg: &RunConfig, stage: Stage) -> Result<TrainState> {
    let init = load_checkpoint_for(path, &cfg.model)?;
    if !stage.accepted_init().contains(&init.stage) {
        return Err(Error::StageOrder(format!(
            "{stage} needs a {} checkpoint, got {} ({})",
            stage
                .accepted_init()
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(" or "),
            init.stage,
            path.display()
        )));
    }
    Ok(init)
}

pub fn cmd_train(stage: Stage, args: &TrainArgs, cfg: &RunConfig, run_name: Option<&str>) -> Result<TrainOutcome> {
    // stage order is checked before any expensive work
    let init = match &args.checkpoint {
        Some(p) => Some(load_init(p, cfg, stage)?),
        None if stage.may_start_fresh() => None,
        None => {
            return Err(Error::StageOrder(format!(
                "{stage} requires a {} checkpoint (--checkpoint)",
                stage.accepted_init()[0]
            )))
        }
    };
    gradient_flow_probe(&cfg.model)?;
    let dataset = DatasetManifest::load(&args.data)?;
    let tcfg = cfg.train_config(stage);
    let run = RunDir::create(
        cfg,
        run_name,
        stage.as_str(),
        json!({
            "data": path_json(&args.data),
            "checkpoint": args.checkpoint.as_deref().map(path_json),
        }),
    )?;
    let out = RunOutput::dir(&run.path);
    log::info!("{stage}: {} steps, run directory {}", tcfg.steps, run.path.display());
    let outcome = match (stage, init) {
        (Stage::Pretrain, init) => run_pretrain(&dataset, &tcfg, &cfg.model, init, &out)?,
        (Stage::Stage1, Some(init)) => run_stage1(&dataset, &tcfg, init, &out)?,
        (Stage::Stage2, Some(init)) => run_stage2(&dataset, &tcfg, init, &out)?,
        _ => unreachable!("checked above"),
    };
    if let Some(last) = outcome.reports.last() {
        println!("final: {}", last.to_log_line());
    }
    if let Some(p) = &outcome.final_checkpoint {
        println!("checkpoint: {}", p.display());
    }
    Ok(outcome)
}

/// Attention is applied only to models whose attention module was trained.
fn inference_attention(state: &TrainState, cfg: &RunConfig) -> bool {
    cfg.eval.use_attention && state.stage == Stage::Stage2
}

fn input_images(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let v = list_stills(input)?;
        if v.is_empty() {
            return Err(Error::EmptyInput(format!("no images in {}", input.display())));
        }
        Ok(v)
    } else if input.is_file() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(Error::EmptyInput(format!("{} does not exist", input.display())))
    }
}

pub fn cmd_infer(args: &InferArgs, cfg: &RunConfig, run_name: Option<&str>) -> Result<Vec<PathBuf>> {
    let state = load_checkpoint_for(&args.checkpoint, &cfg.model)?;
    let inputs = input_images(&args.input)?;
    let file_mask = args.mask_file.as_deref().map(BinaryMask::load).transpose()?;
    let provider = if file_mask.is_none() {
        Some(cfg.landmarks.build()?)
    } else {
        None
    };
    let mut prepared = Vec::with_capacity(inputs.len());
    for (i, path) in inputs.iter().enumerate() {
        let img = Image::load(path)?;
        let (face, mask) = match (&file_mask, &provider) {
            (Some(m), _) => {
                img.ensure_face_size()?;
                (img, m.clone())
            }
            (None, Some(p)) => {
                let frame = FrameRef {
                    frame_id: i as u64,
                    sidecar: Some(path.with_extension("landmarks")),
                };
                let lm = p.detect(&img, &frame)?;
                let (face, lm) = if img.dims() == (FACE_SIZE, FACE_SIZE) {
                    (img, lm)
                } else {
                    crop_face(&img, &lm)?
                };
                let mask = synthesize_hmd_mask(&lm, &cfg.data.geometry, FACE_SIZE, FACE_SIZE)?;
                (face, mask)
            }
            (None, None) => unreachable!(),
        };
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{i:06}"));
        prepared.push((name, face, mask));
    }
    let run = RunDir::create(
        cfg,
        run_name,
        "infer",
        json!({
            "checkpoint": path_json(&args.checkpoint),
            "input": path_json(&args.input),
            "mask_file": args.mask_file.as_deref().map(path_json),
        }),
    )?;
    let out_dir = args.out.clone().unwrap_or_else(|| run.path.join("outputs"));
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let attention = inference_attention(&state, cfg);
    let mut written = Vec::new();
    for (name, face, mask) in prepared {
        let occ = apply_mask(&face, &mask, cfg.data.fill)?;
        let rec = reconstruct(&state.generator, &occ, &mask, attention)?;
        let dest = out_dir.join(format!("{name}.png"));
        rec.save_png(&dest)?;
        written.push(dest);
    }
    println!("outputs: {}", out_dir.display());
    Ok(written)
}

fn evaluate_checkpoint(path: &Path, dataset: &DatasetManifest, split: Split, cfg: &RunConfig) -> Result<MetricsReport> {
    let state = load_checkpoint_for(path, &cfg.model)?;
    let samples = dataset.load_split(split)?;
    let backbone = cfg.eval.backbone.build()?;
    let attention = inference_attention(&state, cfg);
    evaluate_with(
        &samples,
        |s| reconstruct(&state.generator, &s.occ, &s.mask, attention),
        backbone.as_deref(),
        &path.display().to_string(),
        &format!("{}:{split}", dataset.root.display()),
    )
}

pub fn cmd_evaluate(args: &EvaluateArgs, cfg: &RunConfig, run_name: Option<&str>) -> Result<PathBuf> {
    let split: Split = args.split.parse()?;
    // fail on a missing backbone before touching the data
    cfg.eval.backbone.build()?;
    let dataset = DatasetManifest::load(&args.data)?;
    if dataset.records(split).next().is_none() {
        return Err(Error::EmptyInput(format!("{split} split is empty")));
    }
    let run = RunDir::create(
        cfg,
        run_name,
        "evaluate",
        json!({
            "data": path_json(&args.data),
            "split": split,
            "checkpoint": args.checkpoint.as_deref().map(path_json),
            "ablation": args.ablation.as_ref().map(|v| v.iter().map(|p| path_json(p)).collect::<Vec<_>>()),
        }),
    )?;
    if let Some(ckpts) = &args.ablation {
        let labels = ablation_configs(&cfg.train.weights);
        if ckpts.len() != labels.len() {
            return Err(Error::Config(format!(
                "ablation expects {} checkpoints (one per loss configuration), got {}",
                labels.len(),
                ckpts.len()
            )));
        }
        let mut entries = Vec::new();
        for ((label, _), ckpt) in labels.iter().zip(ckpts) {
            entries.push((label.clone(), evaluate_checkpoint(ckpt, &dataset, split, cfg)?));
        }
        let report = AblationReport::from_reports(&entries)?;
        let p = run.path.join("ablation.json");
        report.save(&p)?;
        let t = run.path.join("ablation.txt");
        fs::write(&t, report.to_table()).map_err(|e| Error::io(&t, e))?;
        print!("{}", report.to_table());
        println!("report: {}", p.display());
        return Ok(p);
    }
    let ckpt = args
        .checkpoint
        .as_deref()
        .expect("clap enforces checkpoint or ablation");
    let report = evaluate_checkpoint(ckpt, &dataset, split, cfg)?;
    let p = run.path.join("report.json");
    report.save(&p)?;
    let a = &report.aggregate;
    println!(
        "ssim {:.4} psnr {:.3} lpips {}",
        a.ssim,
        a.psnr,
        a.lpips.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
    );
    println!("report: {}", p.display());
    Ok(p)
}

pub fn cmd_grid(args: &GridArgs, cfg: &RunConfig, run_name: Option<&str>) -> Result<PathBuf> {
    let split: Split = args.split.parse()?;
    if args.count == 0 {
        return Err(Error::Config("--count must be at least 1".into()));
    }
    let dataset = DatasetManifest::load(&args.data)?;
    let mut models = vec![load_checkpoint_for(&args.checkpoint, &cfg.model)?];
    for b in &args.baseline {
        models.push(load_checkpoint_for(b, &cfg.model)?);
    }
    let records: Vec<_> = dataset.records(split).take(args.count).cloned().collect();
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("{split} split is empty")));
    }
    let run = RunDir::create(
        cfg,
        run_name,
        "grid",
        json!({ "checkpoint": path_json(&args.checkpoint), "data": path_json(&args.data), "split": split }),
    )?;
    let mut captions = vec!["occluded".to_string(), "reconstructed".to_string()];
    for b in &args.baseline {
        captions.push(
            b.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    captions.push("ground truth".into());
    let mut rows = Vec::new();
    for r in &records {
        let s = dataset.load_sample(r)?;
        let mut row = vec![s.occ.clone()];
        for m in &models {
            row.push(reconstruct(&m.generator, &s.occ, &s.mask, inference_attention(m, cfg))?);
        }
        row.push(s.gt.clone());
        rows.push(row);
    }
    let out = args.out.clone().unwrap_or_else(|| run.path.join("grid.png"));
    let (w, h) = make_grid(&rows, &captions, &out)?;
    println!("grid: {} ({w}x{h})", out.display());
    Ok(out)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    match cmd {
        Command::Pretrain(_) => Some(Stage::Pretrain),
        Command::Stage1(_) => Some(Stage::Stage1),
        Command::Stage2(_) => Some(Stage::Stage2),
        _ => None,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let steps = match &cli.command {
        Command::Pretrain(a) | Command::Stage1(a) | Command::Stage2(a) => a.steps,
        _ => None,
    };
    let stage = stage_of(&cli.command);
    if cli.common.no_attention && stage == Some(Stage::Stage2) {
        return Err(Error::Config(
            "stage2 always trains the attention module; --no-attention is not allowed".into(),
        ));
    }
    let cfg = RunConfig::resolve(cli.common.config.as_deref(), &cli.common.overrides(steps), stage)?;
    let name = cli.common.run_name.as_deref();
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &cfg),
        Command::Prepare(a) => cmd_prepare(a, &cfg).map(|_| ()),
        Command::Pretrain(a) | Command::Stage1(a) | Command::Stage2(a) => {
            cmd_train(stage.expect("training command"), a, &cfg, name).map(|_| ())
        }
        Command::Infer(a) => cmd_infer(a, &cfg, name).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(a, &cfg, name).map(|_| ()),
        Command::Grid(a) => cmd_grid(a, &cfg, name).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_exit_2_and_help_exits_0() {
        assert_eq!(main_with(["deocc", "frobnicate"]), 2);
        assert_eq!(main_with(["deocc", "--help"]), 0);
    }

    #[test]
    fn stage2_without_checkpoint_is_a_stage_order_error() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("nothing");
        let code = main_with(["deocc", "stage2", "--data", data.to_str().unwrap()]);
        assert_eq!(code, 5);
    }
}
