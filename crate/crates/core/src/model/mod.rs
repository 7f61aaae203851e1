//! Generator (encoder, decoder, attention fusion), patch discriminator and compositing.

mod config;
mod discriminator;
mod generator;
mod layers;

pub use config::{ModelConfig, DEPTH, LATENT_DIM, SKIP_BLOCK};
pub use discriminator::{score_from_logit, Discriminator};
pub use generator::{
    image_grad_to_tensor, network_input, output_image, AttentionPair, FeatureMap, Generator, GeneratorNodes,
    ATTENTION_PREFIX,
};

use crate::error::Result;
use crate::image::{BinaryMask, Image};

/// `mask ⊙ raw + (1 − mask) ⊙ occ`; unmasked pixels are copied from `occ` bit for bit.
pub fn composite(raw_out: &Image, occ: &Image, mask: &BinaryMask) -> Result<Image> {
    raw_out.ensure_same_dims(occ)?;
    mask.ensure_matches(occ)?;
    let mut out = occ.clone();
    let w = occ.width();
    for (p, &m) in mask.bits().iter().enumerate() {
        if m != 0 {
            let (y, x) = (p / w, p % w);
            for c in 0..3 {
                out.set(y, x, c, raw_out.get(y, x, c));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_endpoints() {
        let raw = Image::from_fn(8, 8, |y, x| [y as f64 / 8.0, x as f64 / 8.0, 0.1]);
        let occ = Image::from_fn(8, 8, |y, x| [0.9, (x * y) as f64 / 64.0, 0.4]);
        assert_eq!(composite(&raw, &occ, &BinaryMask::zeros(8, 8)).unwrap(), occ);
        assert_eq!(composite(&raw, &occ, &BinaryMask::ones(8, 8)).unwrap(), raw);
        assert!(composite(&raw, &occ, &BinaryMask::zeros(8, 7)).is_err());
    }
}
