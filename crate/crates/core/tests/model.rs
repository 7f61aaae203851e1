mod common;

use std::collections::BTreeMap;

use deocc::image::{BinaryMask, Image};
use deocc::losses::adversarial_losses;
use deocc::model::{composite, network_input, score_from_logit, Discriminator, Generator, ModelConfig};
use deocc::nn::{init_normal, Adam, Graph, Tensor};
use deocc::training::ADAM_BETAS;
use rand::Rng;

fn random_tensor(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn input(seed: u64) -> Tensor {
    let mut r = common::rng(seed);
    let img = common::random_image(&mut r, 256, 256);
    network_input(&img, &BinaryMask::zeros(256, 256)).unwrap()
}

#[test]
fn encoder_skip_is_64_by_64_and_deterministic() {
    let gen = Generator::new(common::tiny_model(), 1).unwrap();
    let x = input(2);
    let (latent, f_enc) = gen.encode(&x).unwrap();
    assert_eq!(latent.len(), 256);
    assert_eq!((f_enc.h, f_enc.w), (64, 64));
    let (latent2, f_enc2) = gen.encode(&x).unwrap();
    assert!(latent.iter().zip(&latent2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(f_enc
        .data
        .iter()
        .zip(&f_enc2.data)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn zero_projection_gives_the_bias_as_latent() {
    let mut gen = Generator::new(common::tiny_model(), 1).unwrap();
    let w = gen.params.get_mut("gen.enc.proj.w").unwrap();
    w.data.iter_mut().for_each(|v| *v = 0.0);
    let bias: Vec<f32> = (0..256).map(|i| i as f32 * 0.01 - 1.0).collect();
    gen.params.get_mut("gen.enc.proj.b").unwrap().data = bias.clone();
    let (latent, _) = gen.encode(&Tensor::zeros(4, 256, 256)).unwrap();
    assert_eq!(latent, bias);
}

#[test]
fn decoder_bounds_and_skip_independence() {
    let gen = Generator::new(common::tiny_model(), 3).unwrap();
    let (latent, f_enc) = gen.encode(&input(4)).unwrap();
    let out = gen.decode(&latent, &f_enc, true).unwrap();
    assert_eq!(out.shape(), (3, 256, 256));
    assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));

    let mut other = f_enc.clone();
    other.data.iter_mut().for_each(|v| *v = -*v + 0.5);
    let a = gen.decode(&latent, &f_enc, false).unwrap();
    let b = gen.decode(&latent, &other, false).unwrap();
    assert_eq!(a, b);
}

#[test]
fn output_responds_to_the_latent() {
    let gen = Generator::new(common::tiny_model(), 5).unwrap();
    let (latent, f_enc) = gen.encode(&input(6)).unwrap();
    let h = 1e-2;
    let mut moved = 0;
    for i in (0..256).step_by(32) {
        let mut p = latent.clone();
        p[i] += h;
        let mut m = latent.clone();
        m[i] -= h;
        let op = gen.decode(&p, &f_enc, false).unwrap();
        let om = gen.decode(&m, &f_enc, false).unwrap();
        let fd: f64 = op
            .data
            .iter()
            .zip(&om.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / (2.0 * h as f64);
        if fd > 0.0 {
            moved += 1;
        }
    }
    assert_eq!(moved, 8);
}

fn fusion_model() -> ModelConfig {
    ModelConfig {
        base_width: 1,
        ..ModelConfig::default()
    }
}

#[test]
fn fusion_endpoints() {
    let mut gen = Generator::new(fusion_model(), 1).unwrap();
    let mut r = common::rng(7);
    let f_enc = random_tensor(&mut r, 2, 4, 4);
    let f_dec = random_tensor(&mut r, 2, 4, 4);

    // zero-initialized logits: uniform blend
    let (_, attn) = gen.attention_fuse(&f_enc, &f_dec).unwrap();
    assert!(attn.attn_enc.data.iter().all(|&a| a == 0.5));

    gen.params.get_mut("gen.attn.c2.b").unwrap().data = vec![1000.0, -1000.0];
    let (fused, attn) = gen.attention_fuse(&f_enc, &f_dec).unwrap();
    assert!(attn.attn_enc.data.iter().all(|&a| a == 1.0));
    assert_eq!(fused, f_enc);

    let same = random_tensor(&mut r, 2, 4, 4);
    let mut gen = Generator::new(fusion_model(), 2).unwrap();
    let w = gen.params.get_mut("gen.attn.c2.w").unwrap();
    let n = w.len();
    *w = init_normal(&mut r, w.c, w.h, 1, n);
    let (fused, _) = gen.attention_fuse(&same, &same).unwrap();
    for (a, b) in fused.data.iter().zip(&same.data) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
    }
}

#[test]
fn fusion_matches_an_elementwise_loop() {
    let mut r = common::rng(8);
    for case in 0..10 {
        let mut gen = Generator::new(fusion_model(), case).unwrap();
        for name in ["gen.attn.c2.w", "gen.attn.c2.b"] {
            let t = gen.params.get_mut(name).unwrap();
            t.data.iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
        }
        let f_enc = random_tensor(&mut r, 2, 4, 4);
        let f_dec = random_tensor(&mut r, 2, 4, 4);
        let (fused, attn) = gen.attention_fuse(&f_enc, &f_dec).unwrap();
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    let (ae, ad) = (attn.attn_enc.at(0, y, x), attn.attn_dec.at(0, y, x));
                    assert!((ae + ad - 1.0).abs() <= 1e-6);
                    let want = f_enc.at(c, y, x) as f64 * ae as f64 + f_dec.at(c, y, x) as f64 * ad as f64;
                    assert!((fused.at(c, y, x) as f64 - want).abs() <= 1e-6);
                }
            }
        }
    }
}

#[test]
fn generator_sees_the_hole() {
    let gen = Generator::new(common::tiny_model(), 9).unwrap();
    let mut r = common::rng(10);
    let gt = common::random_image(&mut r, 256, 256);
    let mask = BinaryMask::from_fn(256, 256, |y, x| (96..160).contains(&y) && (48..208).contains(&x));
    let occ0 = deocc::dataio::apply_mask(&gt, &mask, 0.0).unwrap();
    let occ1 = deocc::dataio::apply_mask(&gt, &mask, 1.0).unwrap();
    let a = gen.generate(&occ0, &mask).unwrap();
    assert_eq!(a.dims(), (256, 256));
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a, gen.generate(&occ0, &mask).unwrap());
    assert_ne!(a, gen.generate(&occ1, &mask).unwrap());
}

#[test]
fn compositing_endpoints_and_oracle() {
    let mut r = common::rng(11);
    let raw = common::random_image(&mut r, 8, 8);
    let occ = common::random_image(&mut r, 8, 8);
    assert_eq!(composite(&raw, &occ, &BinaryMask::zeros(8, 8)).unwrap(), occ);
    assert_eq!(composite(&raw, &occ, &BinaryMask::ones(8, 8)).unwrap(), raw);
    let mask = common::random_mask(&mut r, 8, 8);
    let out = composite(&raw, &occ, &mask).unwrap();
    for y in 0..8 {
        for x in 0..8 {
            for c in 0..3 {
                let m = mask.value(y, x);
                let want = m * raw.get(y, x, c) + (1.0 - m) * occ.get(y, x, c);
                assert_eq!(out.get(y, x, c).to_bits(), want.to_bits());
            }
        }
    }
    assert!(composite(&raw, &Image::filled(8, 9, 0.0), &mask).is_err());
}

#[test]
fn discriminator_learns_a_separable_toy_set() {
    let model = common::tiny_model();
    let mut d = Discriminator::new(model, 12).unwrap();
    let real = Image::filled(256, 256, 1.0);
    let fake = Image::filled(256, 256, 0.0);
    for img in [&real, &fake] {
        let s = d.discriminate(img).unwrap();
        assert!(s > 0.0 && s < 1.0);
        assert_eq!(s, d.discriminate(img).unwrap());
    }
    let mut opt = Adam::new(&d.params, 2e-4, ADAM_BETAS.0, ADAM_BETAS.1);
    for _ in 0..200 {
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut logits = Vec::new();
        let mut graphs = Vec::new();
        for img in [&real, &fake] {
            let mut g = Graph::new();
            let x = g.input(img.to_signed_tensor(), false);
            let z = d.logit_node(&mut g, x);
            logits.push(score_from_logit(g.value(z).data[0] as f64));
            graphs.push((g, z));
        }
        let adv = adversarial_losses(logits[0].0, logits[1].0);
        let seeds = [adv.dld_dreal * logits[0].1, adv.dld_dfake * logits[1].1];
        for ((g, z), s) in graphs.into_iter().zip(seeds) {
            for (k, t) in g.backward(&[(z, Tensor::vector(vec![s as f32]))]).params {
                match grads.get_mut(&k) {
                    Some(acc) => acc.add_assign(&t),
                    None => {
                        grads.insert(k, t);
                    }
                }
            }
        }
        opt.step(&mut d.params, &grads, |_| true);
    }
    assert!(d.discriminate(&real).unwrap() > d.discriminate(&fake).unwrap());
}
