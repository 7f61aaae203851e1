//! Training objectives. All reductions are means, so weights do not depend on
//! resolution. Each generator-side loss also exposes its gradient with
//! respect to the reconstruction, in the interleaved layout of [`Image`].

mod ssim;

use serde::{Deserialize, Serialize};

pub use ssim::{gaussian_taps, ssim, ssim_with_grad, window_for, C1, C2, MIN_WINDOW, SIGMA, WINDOW};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};

/// Discriminator scores are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const SCORE_EPS: f64 = 1e-7;

/// Mean absolute difference over every element.
pub fn l1_loss(rec: &Image, gt: &Image) -> Result<f64> {
    Ok(l1_loss_with_grad(rec, gt)?.0)
}

pub fn l1_loss_with_grad(rec: &Image, gt: &Image) -> Result<(f64, Vec<f64>)> {
    rec.ensure_same_dims(gt)?;
    let n = rec.data().len() as f64;
    let mut sum = 0.0;
    let grad = rec
        .data()
        .iter()
        .zip(gt.data())
        .map(|(r, g)| {
            let d = r - g;
            sum += d.abs();
            sign(d) / n
        })
        .collect();
    Ok((sum / n, grad))
}

/// Mean absolute difference over masked elements only; zero for an empty mask.
pub fn mask_loss(rec: &Image, gt: &Image, mask: &BinaryMask) -> Result<f64> {
    Ok(mask_loss_with_grad(rec, gt, mask)?.0)
}

pub fn mask_loss_with_grad(rec: &Image, gt: &Image, mask: &BinaryMask) -> Result<(f64, Vec<f64>)> {
    rec.ensure_same_dims(gt)?;
    mask.ensure_matches(rec)?;
    let mut grad = vec![0.0; rec.data().len()];
    let n = (mask.count() * 3) as f64;
    if n == 0.0 {
        return Ok((0.0, grad));
    }
    let mut sum = 0.0;
    for (p, &on) in mask.bits().iter().enumerate() {
        if on == 0 {
            continue;
        }
        for c in 0..3 {
            let i = p * 3 + c;
            let d = rec.data()[i] - gt.data()[i];
            sum += d.abs();
            grad[i] = sign(d) / n;
        }
    }
    Ok((sum / n, grad))
}

/// `1 - SSIM(rec, gt)`, in `[0, 2]`.
pub fn ssim_loss(rec: &Image, gt: &Image) -> Result<f64> {
    Ok(1.0 - ssim(rec, gt)?)
}

pub fn ssim_loss_with_grad(rec: &Image, gt: &Image) -> Result<(f64, Vec<f64>)> {
    let (s, g) = ssim_with_grad(rec, gt, true)?;
    let g = g.expect("gradient requested").into_iter().map(|v| -v).collect();
    Ok((1.0 - s, g))
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Discriminator and generator adversarial objectives for one pair of scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialLosses {
    /// `-[log D(real) + log(1 - D(fake))]`
    pub l_d: f64,
    /// Non-saturating generator objective `-log D(fake)`.
    pub l_g: f64,
    pub dld_dreal: f64,
    pub dld_dfake: f64,
    pub dlg_dfake: f64,
}

pub fn adversarial_losses(d_real: f64, d_fake: f64) -> AdversarialLosses {
    let clamp = |v: f64| v.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    let (r, f) = (clamp(d_real), clamp(d_fake));
    let inside = |v: f64| v > SCORE_EPS && v < 1.0 - SCORE_EPS;
    AdversarialLosses {
        l_d: -(r.ln() + (1.0 - f).ln()),
        l_g: -f.ln(),
        dld_dreal: if inside(d_real) { -1.0 / r } else { 0.0 },
        dld_dfake: if inside(d_fake) { 1.0 / (1.0 - f) } else { 0.0 },
        dlg_dfake: if inside(d_fake) { -1.0 / f } else { 0.0 },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub lambda_ssim: f64,
    pub lambda_mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_adv: 0.01,
            lambda_ssim: 1.0,
            lambda_mask: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_rec, self.lambda_adv, self.lambda_ssim, self.lambda_mask];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {all:?}"
            )));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> LossWeights {
        LossWeights {
            lambda_rec: self.lambda_rec * k,
            lambda_adv: self.lambda_adv * k,
            lambda_ssim: self.lambda_ssim * k,
            lambda_mask: self.lambda_mask * k,
        }
    }
}

/// Generator-side loss terms that enter the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub l_rec: f64,
    pub l_adv_g: f64,
    pub l_ssim: f64,
    pub l_mask: f64,
}

/// Weighted sum of the four generator-side terms.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    for (term, v) in [
        ("l_rec", parts.l_rec),
        ("l_adv", parts.l_adv_g),
        ("l_ssim", parts.l_ssim),
        ("l_mask", parts.l_mask),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric { term: term.into() });
        }
    }
    Ok(w.lambda_rec * parts.l_rec
        + w.lambda_adv * parts.l_adv_g
        + w.lambda_ssim * parts.l_ssim
        + w.lambda_mask * parts.l_mask)
}

/// Per-step record written to the training log as one JSON line.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub l_rec: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
    pub l_ssim: f64,
    pub l_mask: f64,
    pub l_final: f64,
}

impl LossReport {
    pub fn parts(&self) -> LossParts {
        LossParts {
            l_rec: self.l_rec,
            l_adv_g: self.l_adv_g,
            l_ssim: self.l_ssim,
            l_mask: self.l_mask,
        }
    }

    pub fn to_log_line(&self) -> String {
        serde_json::to_string(self).expect("loss report serializes")
    }
}
