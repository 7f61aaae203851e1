#![allow(dead_code, clippy::needless_range_loop)]

use std::path::Path;

use deocc::cli::fixture_splits;
use deocc::dataio::synthetic::{write_fixture_raw, FixtureSpec};
use deocc::dataio::{build_dataset, DatasetConfig, DatasetManifest, SidecarProvider};
use deocc::image::{BinaryMask, Image};
use deocc::model::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(0.5))
}

/// Smooth image that keeps finite differences well conditioned.
pub fn gradient_image(h: usize, w: usize, phase: f64) -> Image {
    Image::from_fn(h, w, |y, x| {
        let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
        [
            0.1 + 0.8 * fx,
            0.2 + 0.6 * fy,
            0.5 + 0.4 * ((fx + fy) * 3.0 + phase).sin(),
        ]
    })
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        base_width: 2,
        ..ModelConfig::default()
    }
}

pub fn small_spec() -> FixtureSpec {
    FixtureSpec {
        generic_identities: 2,
        generic_frames: 2,
        person_sequences: 2,
        person_frames: 4,
        ..FixtureSpec::default()
    }
}

/// Writes the synthetic raw layout for `spec` and prepares it with the standard split map.
pub fn prepared_fixture(dir: &Path, spec: &FixtureSpec) -> DatasetManifest {
    let raw = dir.join("raw");
    write_fixture_raw(&raw, spec).unwrap();
    let cfg = DatasetConfig {
        splits: fixture_splits(spec.generic_identities),
        seed: spec.seed,
        ..DatasetConfig::default()
    };
    build_dataset(&raw, &dir.join("data"), &cfg, &SidecarProvider).unwrap()
}

/// Direct 2-D SSIM: every valid 11×11 window, Gaussian weights built in two dimensions.
pub fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let k = 11;
    let sigma: f64 = 1.5;
    let mut wts = vec![vec![0.0; k]; k];
    let mut z = 0.0;
    for (i, row) in wts.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            z += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (h, w) = a.dims();
    let mut total = 0.0;
    let mut count = 0;
    for c in 0..3 {
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let q = wts[i][j] / z;
                        let (p, r) = (a.get(y0 + i, x0 + j, c), b.get(y0 + i, x0 + j, c));
                        ma += q * p;
                        mb += q * r;
                        saa += q * p * p;
                        sbb += q * r * r;
                        sab += q * p * r;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Direct PSNR for unit dynamic range.
pub fn psnr_oracle(a: &Image, b: &Image) -> f64 {
    let (h, w) = a.dims();
    let mut se = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let d = a.get(y, x, c) - b.get(y, x, c);
                se += d * d;
            }
        }
    }
    10.0 * (1.0 / (se / (h * w * 3) as f64)).log10()
}

/// Ten fixture pairs: smooth fields, noise, and mixtures at several sizes.
pub fn fixture_pairs() -> Vec<(Image, Image)> {
    let mut r = rng(21);
    (0..10)
        .map(|i| {
            let (h, w) = (16 + 2 * i, 16 + 3 * (i % 4));
            let a = gradient_image(h, w, i as f64);
            let b = match i % 3 {
                0 => gradient_image(h, w, i as f64 + 0.7),
                1 => random_image(&mut r, h, w),
                _ => Image::from_fn(h, w, |y, x| {
                    let p = a.pixel(y, x);
                    let n: f64 = r.gen_range(-0.1..0.1);
                    [(p[0] + n).clamp(0.0, 1.0), p[1], (p[2] * 0.8).clamp(0.0, 1.0)]
                }),
            };
            (a, b)
        })
        .collect()
}

/// Largest relative error between analytic and central-difference gradients.
pub fn max_gradient_error(rec: &Image, analytic: &[f64], f: impl Fn(&Image) -> f64) -> f64 {
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for i in 0..analytic.len() {
        let mut p = rec.clone();
        p.data_mut()[i] += h;
        let mut m = rec.clone();
        m.data_mut()[i] -= h;
        let fd = (f(&p) - f(&m)) / (2.0 * h);
        let scale = fd.abs().max(analytic[i].abs()).max(1e-8);
        worst = worst.max((fd - analytic[i]).abs() / scale);
    }
    worst
}
