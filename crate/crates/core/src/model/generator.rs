//! Encoder–decoder generator with a spatial attention fusion at the 64×64 stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, DEPTH, SKIP_BLOCK};
use super::layers::{
    register_conv, register_conv_zero, register_linear, register_norm, register_res_block, Layers, Resample, CONV3,
};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::nn::{Graph, NodeId, ParamStore, Tensor};

/// Activations flowing through the network, shape (C, H, W).
pub type FeatureMap = Tensor;

/// Every attention-module parameter name starts with this prefix.
pub const ATTENTION_PREFIX: &str = "gen.attn.";

/// Per-pixel blend weights for the encoder and decoder features. They sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPair {
    pub attn_enc: Tensor,
    pub attn_dec: Tensor,
}

/// Tape nodes produced by one generator forward pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorNodes {
    pub latent: NodeId,
    pub f_enc: NodeId,
    pub f_dec: NodeId,
    pub f_fused: Option<NodeId>,
    /// Two-channel attention map (encoder weight first).
    pub attn: Option<NodeId>,
    /// Raw output mapped to `[0, 1]`.
    pub output: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn enc_block(level: usize, i: usize) -> String {
    format!("gen.enc.l{level}.b{i}")
}

fn dec_block(level: usize, i: usize) -> String {
    format!("gen.dec.l{level}.b{i}")
}

impl Generator {
    /// Randomly initialized generator; the attention module starts at a uniform 0.5/0.5 blend.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let w = config.base_width;
        let side = config.bottleneck_side();

        register_conv(&mut ps, &mut rng, "gen.enc.stem", config.input_channels, w, 3);
        let enc = config.encoder_widths();
        let mut cin = w;
        for (level, &cout) in enc.iter().enumerate() {
            register_res_block(&mut ps, &mut rng, &enc_block(level, 0), cin, cout);
            for i in 1..config.blocks_per_level {
                register_res_block(&mut ps, &mut rng, &enc_block(level, i), cout, cout);
            }
            cin = cout;
        }
        register_norm(&mut ps, "gen.enc.out_norm", cin);
        register_linear(&mut ps, &mut rng, "gen.enc.proj", cin, config.latent_dim);

        let dec = config.decoder_widths();
        let mut cin = dec[0];
        register_linear(&mut ps, &mut rng, "gen.dec.proj", config.latent_dim, cin * side * side);
        for (level, &cout) in dec.iter().enumerate() {
            register_res_block(&mut ps, &mut rng, &dec_block(level, 0), cin, cout);
            for i in 1..config.blocks_per_level {
                register_res_block(&mut ps, &mut rng, &dec_block(level, i), cout, cout);
            }
            cin = cout;
        }
        register_norm(&mut ps, "gen.dec.out_norm", cin);
        register_conv(&mut ps, &mut rng, "gen.dec.head", cin, 3, 3);

        let mut gen = Self { config, params: ps };
        gen.reset_attention(seed ^ 0xA77E_4710);
        Ok(gen)
    }

    /// (Re)initializes the attention module: random hidden layer, zero logit layer,
    /// so the initial maps are exactly 0.5 / 0.5.
    pub fn reset_attention(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = self.config.skip_channels();
        register_conv(&mut self.params, &mut rng, "gen.attn.c1", 2 * c, c, 3);
        register_conv_zero(&mut self.params, "gen.attn.c2", c, 2, 3);
    }

    pub fn is_attention_param(name: &str) -> bool {
        name.starts_with(ATTENTION_PREFIX)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let r = self.config.resolution;
        if x.shape() != (self.config.input_channels, r, r) {
            return Err(Error::shape(
                format!("{}x{r}x{r}", self.config.input_channels),
                format!("{}x{}x{}", x.c, x.h, x.w),
            ));
        }
        Ok(())
    }

    fn check_skip(&self, f: &Tensor, what: &str) -> Result<()> {
        let s = self.config.skip_side();
        let c = self.config.skip_channels();
        if f.shape() != (c, s, s) {
            return Err(Error::shape(
                format!("{what} {c}x{s}x{s}"),
                format!("{}x{}x{}", f.c, f.h, f.w),
            ));
        }
        Ok(())
    }

    /// Encoder: returns (latent, skip feature) nodes.
    pub fn encode_nodes(&self, g: &mut Graph, x: NodeId) -> (NodeId, NodeId) {
        let mut l = Layers { g, p: &self.params };
        let mut h = l.conv(x, "gen.enc.stem", CONV3);
        let mut f_enc = h;
        for level in 0..DEPTH {
            h = l.res_block(h, &enc_block(level, 0), Resample::Down);
            for i in 1..self.config.blocks_per_level {
                h = l.res_block(h, &enc_block(level, i), Resample::None);
            }
            if level == SKIP_BLOCK {
                f_enc = h;
            }
        }
        let h = l.norm_act(h, "gen.enc.out_norm");
        let pooled = l.g.global_avg_pool(h);
        let latent = l.linear(pooled, "gen.enc.proj");
        (latent, f_enc)
    }

    /// Attention sub-network and weighted fusion; returns (fused, two-channel map).
    pub fn fuse_nodes(&self, g: &mut Graph, f_enc: NodeId, f_dec: NodeId) -> (NodeId, NodeId) {
        let mut l = Layers { g, p: &self.params };
        let cat = l.g.concat(f_enc, f_dec);
        let h = l.conv(cat, "gen.attn.c1", CONV3);
        let h = l.g.leaky_relu(h, super::layers::LEAK);
        let logits = l.conv(h, "gen.attn.c2", CONV3);
        let attn = l.g.softmax2(logits);
        let a_enc = l.g.slice_channels(attn, 0, 1);
        let a_dec = l.g.slice_channels(attn, 1, 1);
        let we = l.g.mul_broadcast(f_enc, a_enc);
        let wd = l.g.mul_broadcast(f_dec, a_dec);
        (l.g.add(we, wd), attn)
    }

    /// Decoder from a latent node; `f_enc` is fused in iff `use_attention`.
    pub fn decode_nodes(&self, g: &mut Graph, latent: NodeId, f_enc: NodeId, use_attention: bool) -> GeneratorNodes {
        let side = self.config.bottleneck_side();
        let dec = self.config.decoder_widths();
        let fuse_at = self.config.fuse_block();
        let mut l = Layers { g, p: &self.params };
        let v = l.linear(latent, "gen.dec.proj");
        let mut h = l.g.reshape(v, dec[0], side, side);
        let mut f_dec = h;
        let mut fused = None;
        let mut attn = None;
        for level in 0..DEPTH {
            h = l.res_block(h, &dec_block(level, 0), Resample::Up);
            for i in 1..self.config.blocks_per_level {
                h = l.res_block(h, &dec_block(level, i), Resample::None);
            }
            if level == fuse_at {
                f_dec = h;
                if use_attention {
                    let (f, a) = self.fuse_nodes(l.g, f_enc, h);
                    fused = Some(f);
                    attn = Some(a);
                    h = f;
                }
            }
        }
        let h = l.norm_act(h, "gen.dec.out_norm");
        let h = l.conv(h, "gen.dec.head", CONV3);
        let t = l.g.tanh(h);
        let output = l.g.affine(t, 0.5, 0.5);
        GeneratorNodes {
            latent,
            f_enc,
            f_dec,
            f_fused: fused,
            attn,
            output,
        }
    }

    /// Full forward pass on a tape.
    pub fn forward_nodes(&self, g: &mut Graph, x: NodeId, use_attention: bool) -> GeneratorNodes {
        let (latent, f_enc) = self.encode_nodes(g, x);
        self.decode_nodes(g, latent, f_enc, use_attention)
    }

    /// Encodes a 4-channel input (signed RGB + mask) into the latent code and skip feature.
    pub fn encode(&self, x: &Tensor) -> Result<(Vec<f32>, FeatureMap)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xi = g.input(x.clone(), false);
        let (latent, f_enc) = self.encode_nodes(&mut g, xi);
        Ok((g.value(latent).data.clone(), g.value(f_enc).clone()))
    }

    /// Decodes to a 3×256×256 raw output in `[0, 1]`.
    pub fn decode(&self, latent: &[f32], f_enc: &FeatureMap, use_attention: bool) -> Result<Tensor> {
        if latent.len() != self.config.latent_dim {
            return Err(Error::shape(
                format!("latent of length {}", self.config.latent_dim),
                latent.len(),
            ));
        }
        self.check_skip(f_enc, "f_enc")?;
        let mut g = Graph::new();
        let li = g.input(Tensor::vector(latent.to_vec()), false);
        let fi = g.input(f_enc.clone(), false);
        let nodes = self.decode_nodes(&mut g, li, fi, use_attention);
        Ok(g.value(nodes.output).clone())
    }

    /// Fuses encoder and decoder skip features with learned spatial attention.
    pub fn attention_fuse(&self, f_enc: &FeatureMap, f_dec: &FeatureMap) -> Result<(FeatureMap, AttentionPair)> {
        if f_enc.shape() != f_dec.shape() {
            return Err(Error::shape(
                format!("{}x{}x{}", f_enc.c, f_enc.h, f_enc.w),
                format!("{}x{}x{}", f_dec.c, f_dec.h, f_dec.w),
            ));
        }
        if f_enc.c != self.config.skip_channels() {
            return Err(Error::shape(
                format!("{} channels", self.config.skip_channels()),
                f_enc.c,
            ));
        }
        let mut g = Graph::new();
        let e = g.input(f_enc.clone(), false);
        let d = g.input(f_dec.clone(), false);
        let (fused, attn) = self.fuse_nodes(&mut g, e, d);
        let a = g.value(attn);
        let p = a.plane();
        let pair = AttentionPair {
            attn_enc: Tensor::from_vec(1, a.h, a.w, a.data[..p].to_vec()),
            attn_dec: Tensor::from_vec(1, a.h, a.w, a.data[p..].to_vec()),
        };
        Ok((g.value(fused).clone(), pair))
    }

    /// Raw network output for an occluded image and its mask (attention per config).
    pub fn generate(&self, occ: &Image, mask: &BinaryMask) -> Result<Image> {
        let x = network_input(occ, mask)?;
        self.check_input(&x)?;
        let mut g = Graph::new();
        let xi = g.input(x, false);
        let nodes = self.forward_nodes(&mut g, xi, self.config.attention);
        output_image(g.value(nodes.output))
    }
}

/// Stacks the signed RGB channels of `occ` with the mask channel.
pub fn network_input(occ: &Image, mask: &BinaryMask) -> Result<Tensor> {
    mask.ensure_matches(occ)?;
    let rgb = occ.to_signed_tensor();
    let m = mask.to_tensor();
    let mut data = rgb.data;
    data.extend_from_slice(&m.data);
    Ok(Tensor::from_vec(4, occ.height(), occ.width(), data))
}

/// Converts a channel-major `[0, 1]` output tensor to an [`Image`].
pub fn output_image(t: &Tensor) -> Result<Image> {
    if t.c != 3 {
        return Err(Error::shape("3 channels", t.c));
    }
    let p = t.plane();
    Ok(Image::from_fn(t.h, t.w, |y, x| {
        let i = y * t.w + x;
        [t.data[i] as f64, t.data[p + i] as f64, t.data[2 * p + i] as f64]
    }))
}

/// Gradient w.r.t. the `[0, 1]` output tensor from an interleaved image gradient.
pub fn image_grad_to_tensor(grad: &[f64], h: usize, w: usize) -> Tensor {
    let p = h * w;
    let mut t = Tensor::zeros(3, h, w);
    for i in 0..p {
        for c in 0..3 {
            t.data[c * p + i] = grad[i * 3 + c] as f32;
        }
    }
    t
}
