use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{train_step, Stage, TrainConfig, TrainState};
use crate::dataio::FaceSample;
use crate::dataio::{Label, LandmarkSet};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::nn::{Adam, ParamStore};

const PROBE_WIDTH: usize = 2;

fn jitter(ps: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let n = Normal::new(0.0f32, 0.1).unwrap();
    for (_, t) in ps.iter_mut() {
        for v in t.data.iter_mut() {
            *v += n.sample(rng);
        }
    }
}

/// Checks that every generator and discriminator parameter of a narrow copy of
/// `model` receives a nonzero gradient from one stage-2 step on a random sample.
/// All parameters are randomized first, so zero-initialized layers do not mask
/// a missing connection.
pub fn gradient_flow_probe(model: &ModelConfig) -> Result<()> {
    let tiny = ModelConfig {
        base_width: model.base_width.min(PROBE_WIDTH),
        attention: true,
        ..*model
    };
    let mut cfg = TrainConfig::new(Stage::Stage2);
    cfg.weights = LossWeights {
        lambda_rec: 1.0,
        lambda_adv: 1.0,
        lambda_ssim: 1.0,
        lambda_mask: 1.0,
    };
    cfg.lr_g = 1.0;
    cfg.lr_d = 1.0;
    let mut state = TrainState::new(&tiny, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9808E);
    jitter(&mut state.generator.params, &mut rng);
    jitter(&mut state.discriminator.params, &mut rng);
    state.stage = Stage::Stage2;

    let r = tiny.resolution;
    let gt = Image::from_fn(r, r, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
    let mask = BinaryMask::from_fn(r, r, |y, x| {
        (r / 4..r / 2).contains(&y) && (r / 8..r - r / 8).contains(&x)
    });
    let landmarks = LandmarkSet::from_pairs(&[
        (Label::LeftEyeOuter, (0.2, 0.4)),
        (Label::LeftEyeInner, (0.4, 0.4)),
        (Label::RightEyeInner, (0.6, 0.4)),
        (Label::RightEyeOuter, (0.8, 0.4)),
        (Label::NoseTip, (0.5, 0.6)),
    ])?;
    let sample = FaceSample::new(gt, mask, landmarks, "probe", 0, 0.0)?;

    // one step with lr = 1 on fresh moments moves every parameter with a
    // nonzero gradient by about 1 (Adam's first step is lr * sign(g))
    let before_g = state.generator.params.clone();
    let before_d = state.discriminator.params.clone();
    state.opt_g = Adam::new(&state.generator.params, 1.0, 0.5, 0.999);
    state.opt_d = Adam::new(&state.discriminator.params, 1.0, 0.5, 0.999);
    train_step(&mut state, &[sample], &cfg)?;

    let mut dead = Vec::new();
    for (before, after) in [
        (&before_g, &state.generator.params),
        (&before_d, &state.discriminator.params),
    ] {
        for (name, t) in before.iter() {
            let moved = t.data.iter().zip(&after.get(name).data).any(|(a, b)| a != b);
            if !moved {
                dead.push(name.clone());
            }
        }
    }
    if dead.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "parameters without gradient: {}",
            dead.join(", ")
        )))
    }
}
