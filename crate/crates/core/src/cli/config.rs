use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{CommandProvider, DatasetConfig, FixtureProvider, LandmarkProvider, SidecarProvider};
use crate::error::{Error, Result};
use crate::evaluation::BackboneSpec;
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::training::{Stage, TrainConfig, DEFAULT_LR};

/// Training settings shared by all stages; step counts are per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub lr_g: f32,
    pub lr_d: f32,
    pub checkpoint_interval: u64,
    pub weights: LossWeights,
    pub pretrain_steps: u64,
    pub stage1_steps: u64,
    pub stage2_steps: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch_size: 1,
            lr_g: DEFAULT_LR,
            lr_d: DEFAULT_LR,
            checkpoint_interval: 0,
            weights: LossWeights::default(),
            pretrain_steps: 200,
            stage1_steps: 300,
            stage2_steps: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub backbone: BackboneSpec,
    pub use_attention: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            backbone: BackboneSpec::None,
            use_attention: true,
        }
    }
}

/// Landmark source used by `prepare` and by `infer` in landmark mode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderSpec {
    #[default]
    Sidecar,
    Fixture {
        dir: PathBuf,
    },
    Command {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl ProviderSpec {
    pub fn build(&self) -> Result<Box<dyn LandmarkProvider>> {
        Ok(match self {
            ProviderSpec::Sidecar => Box::new(SidecarProvider),
            ProviderSpec::Fixture { dir } => Box::new(FixtureProvider::from_dir(dir)?),
            ProviderSpec::Command { program, args } => Box::new(CommandProvider {
                program: program.clone(),
                args: args.clone(),
            }),
        })
    }
}

/// Everything a run needs, merged from defaults, the config file and flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub runs_dir: PathBuf,
    pub model: ModelConfig,
    pub data: DatasetConfig,
    pub train: TrainSettings,
    pub eval: EvalSettings,
    pub landmarks: ProviderSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            runs_dir: PathBuf::from("runs"),
            model: ModelConfig::default(),
            data: DatasetConfig::default(),
            train: TrainSettings::default(),
            eval: EvalSettings::default(),
            landmarks: ProviderSpec::default(),
        }
    }
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub lambda_rec: Option<f64>,
    pub lambda_adv: Option<f64>,
    pub lambda_ssim: Option<f64>,
    pub lambda_mask: Option<f64>,
    pub no_attention: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Defaults, then the optional file, then flags. The result is validated.
    pub fn resolve(path: Option<&Path>, over: &Overrides, stage: Option<Stage>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = over.seed {
            cfg.seed = s;
        }
        let w = &mut cfg.train.weights;
        for (slot, v) in [
            (&mut w.lambda_rec, over.lambda_rec),
            (&mut w.lambda_adv, over.lambda_adv),
            (&mut w.lambda_ssim, over.lambda_ssim),
            (&mut w.lambda_mask, over.lambda_mask),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let (Some(steps), Some(stage)) = (over.steps, stage) {
            *cfg.steps_mut(stage) = steps;
        }
        if over.no_attention {
            cfg.eval.use_attention = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn steps_mut(&mut self, stage: Stage) -> &mut u64 {
        match stage {
            Stage::Pretrain => &mut self.train.pretrain_steps,
            Stage::Stage1 => &mut self.train.stage1_steps,
            Stage::Stage2 => &mut self.train.stage2_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        for s in Stage::ALL {
            self.train_config(s).validate()?;
        }
        Ok(())
    }

    pub fn train_config(&self, stage: Stage) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            stage,
            steps: match stage {
                Stage::Pretrain => t.pretrain_steps,
                Stage::Stage1 => t.stage1_steps,
                Stage::Stage2 => t.stage2_steps,
            },
            batch_size: t.batch_size,
            lr_g: t.lr_g,
            lr_d: t.lr_d,
            weights: t.weights,
            seed: self.seed,
            checkpoint_interval: t.checkpoint_interval,
            attention: stage.uses_attention(),
        }
    }

    /// Dataset settings with the run seed applied.
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.seed,
            ..self.data.clone()
        }
    }
}
