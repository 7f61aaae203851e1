//! Pretraining and the two-stage person-specific fine-tuning schedule.

mod checkpoint;
mod probe;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use probe::gradient_flow_probe;

use crate::dataio::{DatasetManifest, FaceSample, Split};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::losses::{
    adversarial_losses, l1_loss_with_grad, mask_loss_with_grad, ssim_loss_with_grad, total_loss, LossParts, LossReport,
    LossWeights,
};
use crate::model::{
    composite, image_grad_to_tensor, network_input, output_image, score_from_logit, Discriminator, Generator,
    GeneratorNodes, ModelConfig,
};
use crate::nn::{Adam, Graph, NodeId, Tensor};

pub const DEFAULT_LR: f32 = 2e-4;
pub const ADAM_BETAS: (f32, f32) = (0.5, 0.999);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Stage1,
    Stage2,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Pretrain, Stage::Stage1, Stage::Stage2];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }

    pub fn split(self) -> Split {
        match self {
            Stage::Pretrain => Split::Pretrain,
            Stage::Stage1 => Split::Stage1,
            Stage::Stage2 => Split::Stage2,
        }
    }

    pub fn uses_attention(self) -> bool {
        self == Stage::Stage2
    }

    /// Stage tags an initial checkpoint may carry. The same tag means resume.
    pub fn accepted_init(self) -> &'static [Stage] {
        match self {
            Stage::Pretrain => &[Stage::Pretrain],
            Stage::Stage1 => &[Stage::Pretrain, Stage::Stage1],
            Stage::Stage2 => &[Stage::Stage1, Stage::Stage2],
        }
    }

    /// Whether a run of this stage may start without a checkpoint.
    pub fn may_start_fresh(self) -> bool {
        self == Stage::Pretrain
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: u64,
    pub batch_size: usize,
    pub lr_g: f32,
    pub lr_d: f32,
    #[serde(default)]
    pub weights: LossWeights,
    pub seed: u64,
    /// Steps between periodic checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub attention: bool,
}

impl TrainConfig {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            steps: match stage {
                Stage::Pretrain => 200,
                Stage::Stage1 => 300,
                Stage::Stage2 => 1000,
            },
            batch_size: 1,
            lr_g: DEFAULT_LR,
            lr_d: DEFAULT_LR,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_interval: 0,
            attention: stage.uses_attention(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        for (name, lr) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        if self.attention != self.stage.uses_attention() {
            return Err(Error::Config(format!(
                "attention must be {} in {}",
                if self.stage.uses_attention() { "on" } else { "off" },
                self.stage
            )));
        }
        self.weights.validate()
    }

    /// Parameters the generator optimizer may touch in this stage.
    pub fn trains_generator_param(&self, name: &str) -> bool {
        self.attention || !Generator::is_attention_param(name)
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub stage: Stage,
    /// Steps completed in `stage`.
    pub step: u64,
    pub seed: u64,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub last_report: Option<LossReport>,
}

impl TrainState {
    /// Freshly initialized networks and optimizers.
    pub fn new(model: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        let generator = Generator::new(*model, cfg.seed)?;
        let discriminator = Discriminator::new(*model, cfg.seed ^ 0xD15C)?;
        let opt_g = Adam::new(&generator.params, cfg.lr_g, ADAM_BETAS.0, ADAM_BETAS.1);
        let opt_d = Adam::new(&discriminator.params, cfg.lr_d, ADAM_BETAS.0, ADAM_BETAS.1);
        Ok(Self {
            stage: cfg.stage,
            step: 0,
            seed: cfg.seed,
            generator,
            discriminator,
            opt_g,
            opt_d,
            last_report: None,
        })
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.generator.config
    }

    /// Carries the networks of `init` into a run of `cfg`: resumes when the
    /// stage tag matches, otherwise starts the stage with fresh optimizers.
    pub fn continue_from(init: TrainState, cfg: &TrainConfig) -> Result<Self> {
        if !cfg.stage.accepted_init().contains(&init.stage) {
            return Err(Error::StageOrder(format!(
                "{} cannot start from a {} checkpoint (expected {})",
                cfg.stage,
                init.stage,
                cfg.stage
                    .accepted_init()
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(" or ")
            )));
        }
        if init.stage == cfg.stage {
            let mut s = init;
            s.opt_g.lr = cfg.lr_g;
            s.opt_d.lr = cfg.lr_d;
            return Ok(s);
        }
        let mut generator = init.generator;
        if cfg.stage == Stage::Stage2 {
            generator.reset_attention(cfg.seed ^ 0xA77E_4710);
        }
        let opt_g = Adam::new(&generator.params, cfg.lr_g, ADAM_BETAS.0, ADAM_BETAS.1);
        let opt_d = Adam::new(&init.discriminator.params, cfg.lr_d, ADAM_BETAS.0, ADAM_BETAS.1);
        Ok(Self {
            stage: cfg.stage,
            step: 0,
            seed: cfg.seed,
            generator,
            discriminator: init.discriminator,
            opt_g,
            opt_d,
            last_report: None,
        })
    }
}

/// Sample indices for a step. Each pass over the data uses a permutation
/// seeded by (seed, pass), so the order depends only on the step count.
pub fn batch_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    assert!(n > 0, "empty sample set");
    let mut perms: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    (0..batch as u64)
        .map(|j| {
            let pos = step * batch as u64 + j;
            let pass = pos / n as u64;
            let perm = perms.entry(pass).or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ pass.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                p
            });
            perm[(pos % n as u64) as usize]
        })
        .collect()
}

/// Network input, compositing region and mask-loss region for a sample in a stage.
struct StageView {
    input: Image,
    input_mask: BinaryMask,
    /// Pixels taken from the raw output when forming X_rec.
    recon_region: BinaryMask,
}

fn stage_view(stage: Stage, s: &FaceSample) -> StageView {
    let (h, w) = s.gt.dims();
    match stage {
        // identity reconstruction: unoccluded input, empty mask channel, whole image reconstructed
        Stage::Stage1 => StageView {
            input: s.gt.clone(),
            input_mask: BinaryMask::zeros(h, w),
            recon_region: BinaryMask::ones(h, w),
        },
        Stage::Pretrain | Stage::Stage2 => StageView {
            input: s.occ.clone(),
            input_mask: s.mask.clone(),
            recon_region: s.mask.clone(),
        },
    }
}

struct Forward {
    graph: Graph,
    nodes: GeneratorNodes,
    view: StageView,
    rec: Image,
}

fn generator_forward(gen: &Generator, stage: Stage, use_attention: bool, s: &FaceSample) -> Result<Forward> {
    let view = stage_view(stage, s);
    let x = network_input(&view.input, &view.input_mask)?;
    let mut graph = Graph::new();
    let xi = graph.input(x, false);
    let nodes = gen.forward_nodes(&mut graph, xi, use_attention);
    let raw = output_image(graph.value(nodes.output))?;
    let rec = composite(&raw, &view.input, &view.recon_region)?;
    Ok(Forward {
        graph,
        nodes,
        view,
        rec,
    })
}

/// Mean logit node for an image with the input gradient tracked.
fn disc_forward(d: &Discriminator, img: &Image) -> (Graph, NodeId, NodeId) {
    let mut g = Graph::new();
    let x = g.input(img.to_signed_tensor(), true);
    let z = d.logit_node(&mut g, x);
    (g, x, z)
}

fn scalar(v: f64) -> Tensor {
    Tensor::vector(vec![v as f32])
}

fn check_finite(v: f64, term: &str, step: u64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingAbort {
            step,
            term: term.into(),
            last_good: "none".into(),
        })
    }
}

fn accumulate(into: &mut BTreeMap<String, Tensor>, from: BTreeMap<String, Tensor>) {
    for (k, t) in from {
        match into.get_mut(&k) {
            Some(acc) => acc.add_assign(&t),
            None => {
                into.insert(k, t);
            }
        }
    }
}

fn grads_finite(grads: &BTreeMap<String, Tensor>) -> bool {
    grads.values().all(|t| t.all_finite())
}

/// One discriminator update on (X_gt, X_rec) pairs followed by one generator update on
/// the weighted objective. Batch terms are means over the samples.
pub fn train_step(state: &mut TrainState, batch: &[FaceSample], cfg: &TrainConfig) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch is empty".into()));
    }
    let step = state.step + 1;
    let inv_b = 1.0 / batch.len() as f64;
    let use_attention = cfg.attention;

    let forwards: Vec<Forward> = batch
        .iter()
        .map(|s| generator_forward(&state.generator, cfg.stage, use_attention, s))
        .collect::<Result<_>>()?;

    // discriminator: minimize -[log D(gt) + log(1 - D(rec))]
    let mut d_grads = BTreeMap::new();
    let mut l_adv_d = 0.0;
    for (s, f) in batch.iter().zip(&forwards) {
        let (g_real, _, z_real) = disc_forward(&state.discriminator, &s.gt);
        let (g_fake, _, z_fake) = disc_forward(&state.discriminator, &f.rec);
        let (r, dr) = score_from_logit(g_real.value(z_real).data[0] as f64);
        let (fk, df) = score_from_logit(g_fake.value(z_fake).data[0] as f64);
        let adv = adversarial_losses(r, fk);
        l_adv_d += adv.l_d * inv_b;
        let seed_r = scalar(adv.dld_dreal * dr * inv_b);
        let seed_f = scalar(adv.dld_dfake * df * inv_b);
        accumulate(&mut d_grads, g_real.backward(&[(z_real, seed_r)]).params);
        accumulate(&mut d_grads, g_fake.backward(&[(z_fake, seed_f)]).params);
    }
    check_finite(l_adv_d, "l_adv_d", step)?;
    if !grads_finite(&d_grads) {
        check_finite(f64::NAN, "discriminator gradient", step)?;
    }
    state.opt_d.step(&mut state.discriminator.params, &d_grads, |_| true);

    // generator: weighted objective on X_rec, adversarial term against the updated D
    let w = cfg.weights;
    let mut parts = LossParts::default();
    let mut g_grads = BTreeMap::new();
    for (s, f) in batch.iter().zip(forwards) {
        let (h, wd) = s.gt.dims();
        let (l_rec, g_rec) = l1_loss_with_grad(&f.rec, &s.gt)?;
        let (l_ssim, g_ssim) = ssim_loss_with_grad(&f.rec, &s.gt)?;
        let loss_mask = &f.view.input_mask;
        let (l_mask, g_mask) = mask_loss_with_grad(&f.rec, &s.gt, loss_mask)?;

        let mut grad: Vec<f64> = (0..g_rec.len())
            .map(|i| w.lambda_rec * g_rec[i] + w.lambda_ssim * g_ssim[i] + w.lambda_mask * g_mask[i])
            .collect();

        let (g_fake, x_fake, z_fake) = disc_forward(&state.discriminator, &f.rec);
        let (fk, df) = score_from_logit(g_fake.value(z_fake).data[0] as f64);
        let adv = adversarial_losses(0.5, fk);
        if w.lambda_adv != 0.0 {
            let seed = scalar(w.lambda_adv * adv.dlg_dfake * df);
            let back = g_fake.backward(&[(z_fake, seed)]);
            let dx = back.input(x_fake).expect("tracked input");
            // signed input = 2 * rec - 1
            let p = h * wd;
            for i in 0..p {
                for c in 0..3 {
                    grad[i * 3 + c] += 2.0 * dx.data[c * p + i] as f64;
                }
            }
        }

        parts.l_rec += l_rec * inv_b;
        parts.l_ssim += l_ssim * inv_b;
        parts.l_mask += l_mask * inv_b;
        parts.l_adv_g += adv.l_g * inv_b;

        // X_rec depends on the raw output only inside the reconstruction region
        for (p, &m) in f.view.recon_region.bits().iter().enumerate() {
            for c in 0..3 {
                grad[p * 3 + c] = if m != 0 { grad[p * 3 + c] * inv_b } else { 0.0 };
            }
        }
        let seed = image_grad_to_tensor(&grad, h, wd);
        accumulate(&mut g_grads, f.graph.backward(&[(f.nodes.output, seed)]).params);
    }
    for (term, v) in [
        ("l_rec", parts.l_rec),
        ("l_ssim", parts.l_ssim),
        ("l_mask", parts.l_mask),
        ("l_adv_g", parts.l_adv_g),
    ] {
        check_finite(v, term, step)?;
    }
    if !grads_finite(&g_grads) {
        check_finite(f64::NAN, "generator gradient", step)?;
    }
    let l_final = total_loss(&parts, &w).map_err(|e| match e {
        Error::Numeric { term } => Error::TrainingAbort {
            step,
            term,
            last_good: "none".into(),
        },
        e => e,
    })?;
    state
        .opt_g
        .step(&mut state.generator.params, &g_grads, |n| cfg.trains_generator_param(n));

    state.step = step;
    let report = LossReport {
        step,
        l_rec: parts.l_rec,
        l_adv_g: parts.l_adv_g,
        l_adv_d,
        l_ssim: parts.l_ssim,
        l_mask: parts.l_mask,
        l_final,
    };
    state.last_report = Some(report);
    Ok(report)
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Reports of the steps executed by this run (not earlier resumed steps).
    pub reports: Vec<LossReport>,
    pub final_checkpoint: Option<PathBuf>,
}

/// Where a run writes its log and checkpoints. `None` keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
}

impl RunOutput {
    pub fn in_memory() -> Self {
        Self { dir: None }
    }

    pub fn dir(path: impl Into<PathBuf>) -> Self {
        Self { dir: Some(path.into()) }
    }

    pub fn checkpoint_path(&self, stage: Stage, step: u64) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join("checkpoints").join(format!("{stage}-{step:06}.ckpt")))
    }
}

/// Runs `cfg.steps - state.step` steps over `samples`, logging one JSON line per
/// step to `<dir>/train.log` and writing checkpoints under `<dir>/checkpoints/`.
pub fn run_steps(
    samples: &[FaceSample],
    cfg: &TrainConfig,
    mut state: TrainState,
    out: &RunOutput,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("{} split is empty", cfg.stage.split())));
    }
    if state.stage != cfg.stage {
        return Err(Error::StageOrder(format!(
            "state is tagged {} but the run is {}",
            state.stage, cfg.stage
        )));
    }
    let mut log = match &out.dir {
        Some(d) => {
            fs::create_dir_all(d.join("checkpoints")).map_err(|e| Error::io(d, e))?;
            let path = d.join("train.log");
            let exists = path.exists();
            let file = File::options()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            if !exists {
                let header = serde_json::json!({ "config": cfg, "model": state.model_config() });
                writeln!(w, "{header}").map_err(|e| Error::io(&path, e))?;
            }
            Some((w, path))
        }
        None => None,
    };

    let mut reports = Vec::new();
    let mut last_good = "none".to_string();
    while state.step < cfg.steps {
        let idx = batch_indices(cfg.seed, state.step, cfg.batch_size, samples.len());
        let batch: Vec<FaceSample> = idx.iter().map(|&i| samples[i].clone()).collect();
        let report = match train_step(&mut state, &batch, cfg) {
            Ok(r) => r,
            Err(Error::TrainingAbort { step, term, .. }) => {
                return Err(Error::TrainingAbort { step, term, last_good });
            }
            Err(e) => return Err(e),
        };
        if let Some((w, path)) = &mut log {
            writeln!(w, "{}", report.to_log_line()).map_err(|e| Error::io(&*path, e))?;
        }
        log::debug!("{} step {}: l_final {:.5}", cfg.stage, report.step, report.l_final);
        reports.push(report);
        if cfg.checkpoint_interval > 0 && state.step.is_multiple_of(cfg.checkpoint_interval) && state.step < cfg.steps {
            if let Some(p) = out.checkpoint_path(cfg.stage, state.step) {
                save_checkpoint(&state, Some(cfg), &p)?;
                last_good = p.display().to_string();
            }
        }
    }
    if let Some((w, path)) = &mut log {
        w.flush().map_err(|e| Error::io(&*path, e))?;
    }
    let final_checkpoint = match out.checkpoint_path(cfg.stage, state.step) {
        Some(p) => {
            save_checkpoint(&state, Some(cfg), &p)?;
            Some(p)
        }
        None => None,
    };
    Ok(TrainOutcome {
        state,
        reports,
        final_checkpoint,
    })
}

fn split_samples(dataset: &DatasetManifest, stage: Stage) -> Result<Vec<FaceSample>> {
    let samples = dataset.load_split(stage.split())?;
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("{} split is empty", stage.split())));
    }
    Ok(samples)
}

fn expect_stage(cfg: &TrainConfig, stage: Stage) -> Result<()> {
    if cfg.stage != stage {
        return Err(Error::Config(format!("config is for {}, expected {stage}", cfg.stage)));
    }
    Ok(())
}

/// Generic-face pretraining with attention excluded. `init` resumes an earlier pretrain run.
pub fn run_pretrain(
    dataset: &DatasetManifest,
    cfg: &TrainConfig,
    model: &ModelConfig,
    init: Option<TrainState>,
    out: &RunOutput,
) -> Result<TrainOutcome> {
    expect_stage(cfg, Stage::Pretrain)?;
    cfg.validate()?;
    let samples = split_samples(dataset, Stage::Pretrain)?;
    let state = match init {
        Some(s) => {
            ensure_model(&s, model)?;
            TrainState::continue_from(s, cfg)?
        }
        None => TrainState::new(model, cfg)?,
    };
    run_steps(&samples, cfg, state, out)
}

/// Identity reconstruction on the person's unoccluded frames, attention excluded.
pub fn run_stage1(
    dataset: &DatasetManifest,
    cfg: &TrainConfig,
    init: TrainState,
    out: &RunOutput,
) -> Result<TrainOutcome> {
    expect_stage(cfg, Stage::Stage1)?;
    cfg.validate()?;
    let state = TrainState::continue_from(init, cfg)?;
    let samples = split_samples(dataset, Stage::Stage1)?;
    run_steps(&samples, cfg, state, out)
}

/// End-to-end fine-tuning on occluded frames with a freshly initialized attention module.
pub fn run_stage2(
    dataset: &DatasetManifest,
    cfg: &TrainConfig,
    init: TrainState,
    out: &RunOutput,
) -> Result<TrainOutcome> {
    expect_stage(cfg, Stage::Stage2)?;
    cfg.validate()?;
    let state = TrainState::continue_from(init, cfg)?;
    let samples = split_samples(dataset, Stage::Stage2)?;
    run_steps(&samples, cfg, state, out)
}

fn ensure_model(state: &TrainState, model: &ModelConfig) -> Result<()> {
    if state.model_config() != model {
        return Err(Error::Config(format!(
            "checkpoint model config {:?} does not match requested {:?}",
            state.model_config(),
            model
        )));
    }
    Ok(())
}

/// Masked-region L1 of the composited reconstruction, averaged over samples.
pub fn masked_l1(gen: &Generator, samples: &[FaceSample], use_attention: bool) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let f = generator_forward(gen, Stage::Stage2, use_attention, s)?;
        total += crate::losses::mask_loss(&f.rec, &s.gt, &s.mask)?;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Composited reconstruction X_rec for an occluded sample.
pub fn reconstruct(gen: &Generator, occ: &Image, mask: &BinaryMask, use_attention: bool) -> Result<Image> {
    let x = network_input(occ, mask)?;
    let mut g = Graph::new();
    let xi = g.input(x, false);
    let nodes = gen.forward_nodes(&mut g, xi, use_attention);
    let raw = output_image(g.value(nodes.output))?;
    composite(&raw, occ, mask)
}
