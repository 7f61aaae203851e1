use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{register_conv, register_conv_nobias, register_norm, Layers, LEAK};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{ConvGeom, Graph, NodeId, ParamStore};

const DOWN4: ConvGeom = ConvGeom {
    k: 4,
    stride: 2,
    pad: 1,
};
const HEAD: ConvGeom = ConvGeom {
    k: 3,
    stride: 1,
    pad: 1,
};
/// Mean logits are clipped to this magnitude so the score stays strictly inside (0, 1).
const LOGIT_CLIP: f64 = 30.0;

/// Four-layer strided patch classifier; patch logits are averaged into one score.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Discriminator {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let w = config.base_width;
        register_conv(&mut ps, &mut rng, "disc.l0", 3, w, 4);
        register_conv_nobias(&mut ps, &mut rng, "disc.l1", w, 2 * w, 4);
        register_norm(&mut ps, "disc.n1", 2 * w);
        register_conv_nobias(&mut ps, &mut rng, "disc.l2", 2 * w, 4 * w, 4);
        register_norm(&mut ps, "disc.n2", 4 * w);
        register_conv(&mut ps, &mut rng, "disc.head", 4 * w, 1, 3);
        Ok(Self { config, params: ps })
    }

    /// Builds the classifier on a signed RGB node; returns the mean-logit node.
    pub fn logit_node(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let mut l = Layers { g, p: &self.params };
        let h = l.conv(x, "disc.l0", DOWN4);
        let h = l.g.leaky_relu(h, LEAK);
        let h = l.conv(h, "disc.l1", DOWN4);
        let h = l.norm_act(h, "disc.n1");
        let h = l.conv(h, "disc.l2", DOWN4);
        let h = l.norm_act(h, "disc.n2");
        let patches = l.conv(h, "disc.head", HEAD);
        l.g.mean(patches)
    }

    /// Probability-like realness score in (0, 1).
    pub fn discriminate(&self, img: &Image) -> Result<f64> {
        let r = self.config.resolution;
        if img.dims() != (r, r) {
            return Err(Error::shape(
                format!("{r}x{r}x3"),
                format!("{}x{}x3", img.height(), img.width()),
            ));
        }
        let mut g = Graph::new();
        let x = g.input(img.to_signed_tensor(), false);
        let z = self.logit_node(&mut g, x);
        Ok(score_from_logit(g.value(z).data[0] as f64).0)
    }
}

/// Sigmoid of the clipped mean logit, and d score / d logit.
pub fn score_from_logit(z: f64) -> (f64, f64) {
    let zc = z.clamp(-LOGIT_CLIP, LOGIT_CLIP);
    let s = 1.0 / (1.0 + (-zc).exp());
    let ds = if z.abs() < LOGIT_CLIP { s * (1.0 - s) } else { 0.0 };
    (s, ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_is_strictly_inside_unit_interval() {
        for z in [-1e6, -40.0, -1.0, 0.0, 3.0, 40.0, 1e6] {
            let (s, _) = score_from_logit(z);
            assert!(s > 0.0 && s < 1.0, "{z} -> {s}");
        }
        assert_eq!(score_from_logit(0.0).0, 0.5);
    }
}
