//! Structural similarity with an 11×11 Gaussian window (σ = 1.5), computed
//! over valid window positions and averaged over channels. Images narrower
//! than the window use the largest odd window that fits.

use crate::error::{Error, Result};
use crate::image::Image;

pub const WINDOW: usize = 11;
/// Smallest window accepted for small images.
pub const MIN_WINDOW: usize = 3;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps of odd length `n`; the 2-D window is their outer product.
pub fn gaussian_taps(n: usize) -> Vec<f64> {
    let mut taps = vec![0.0; n];
    let mid = (n / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Window side used for an `h`×`w` image.
pub fn window_for(h: usize, w: usize) -> usize {
    let side = h.min(w).min(WINDOW);
    if side.is_multiple_of(2) {
        side - 1
    } else {
        side
    }
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        let r = &src[y * w..(y + 1) * w];
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().zip(&r[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..k).map(|i| taps[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads a (ho, wo) map back onto (h, w).
fn filter_valid_adjoint(g: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..ho {
        for x in 0..wo {
            let v = g[y * wo + x];
            for (i, t) in taps.iter().enumerate() {
                rows[(y + i) * wo + x] += t * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..wo {
            let v = rows[y * wo + x];
            for (i, t) in taps.iter().enumerate() {
                out[y * w + x + i] += t * v;
            }
        }
    }
    out
}

fn planes(img: &Image) -> [Vec<f64>; 3] {
    let mut p: [Vec<f64>; 3] = Default::default();
    for (c, plane) in p.iter_mut().enumerate() {
        *plane = img.data().iter().skip(c).step_by(3).copied().collect();
    }
    p
}

fn check(a: &Image, b: &Image) -> Result<()> {
    a.ensure_same_dims(b)?;
    if a.height() < MIN_WINDOW || a.width() < MIN_WINDOW {
        return Err(Error::Geometry(format!(
            "image {}x{} is smaller than the {MIN_WINDOW}x{MIN_WINDOW} SSIM window",
            a.height(),
            a.width()
        )));
    }
    Ok(())
}

struct Moments {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    e_aa: Vec<f64>,
    e_bb: Vec<f64>,
    e_ab: Vec<f64>,
}

fn moments(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> Moments {
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    Moments {
        mu_a: filter_valid(a, h, w, taps),
        mu_b: filter_valid(b, h, w, taps),
        e_aa: filter_valid(&sq(a, a), h, w, taps),
        e_bb: filter_valid(&sq(b, b), h, w, taps),
        e_ab: filter_valid(&sq(a, b), h, w, taps),
    }
}

/// Mean SSIM index of `a` against `b`, in `[-1, 1]`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_with_grad(a, b, false)?.0)
}

/// SSIM and, if requested, its gradient with respect to `a` in interleaved layout.
pub fn ssim_with_grad(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check(a, b)?;
    let (h, w) = a.dims();
    let k = window_for(h, w);
    let taps = gaussian_taps(k);
    let (pa, pb) = (planes(a), planes(b));
    let n = ((h - k + 1) * (w - k + 1) * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; h * w * 3]);
    for c in 0..3 {
        let m = moments(&pa[c], &pb[c], h, w, &taps);
        let k = m.mu_a.len();
        let (mut d_mu, mut d_eaa, mut d_eab) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        for i in 0..k {
            let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
            let s_aa = m.e_aa[i] - ma * ma;
            let s_bb = m.e_bb[i] - mb * mb;
            let s_ab = m.e_ab[i] - ma * mb;
            let a1 = 2.0 * ma * mb + C1;
            let a2 = 2.0 * s_ab + C2;
            let b1 = ma * ma + mb * mb + C1;
            let b2 = s_aa + s_bb + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                d_mu[i] = s * (2.0 * mb / a1 - 2.0 * mb / a2 - 2.0 * ma / b1 + 2.0 * ma / b2) / n;
                d_eaa[i] = -s / b2 / n;
                d_eab[i] = 2.0 * s / a2 / n;
            }
        }
        if let Some(g) = grad.as_mut() {
            let g_mu = filter_valid_adjoint(&d_mu, h, w, &taps);
            let g_aa = filter_valid_adjoint(&d_eaa, h, w, &taps);
            let g_ab = filter_valid_adjoint(&d_eab, h, w, &taps);
            for q in 0..h * w {
                g[q * 3 + c] = g_mu[q] + 2.0 * pa[c][q] * g_aa[q] + pb[c][q] * g_ab[q];
            }
        }
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_normalized_and_symmetric() {
        for n in [3, 7, WINDOW] {
            let t = gaussian_taps(n);
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..n {
                assert_eq!(t[i], t[n - 1 - i]);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let (h, w) = (14, 13);
        let taps = gaussian_taps(WINDOW);
        let x: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.3).sin()).collect();
        let y: Vec<f64> = (0..(h - 10) * (w - 10)).map(|i| (i as f64 * 0.7).cos()).collect();
        let lhs: f64 = filter_valid(&x, h, w, &taps).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = filter_valid_adjoint(&y, h, w, &taps)
            .iter()
            .zip(&x)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn small_images_shrink_the_window() {
        assert_eq!(window_for(256, 256), WINDOW);
        assert_eq!(window_for(8, 16), 7);
        assert_eq!(window_for(10, 9), 9);
        let a = Image::filled(8, 8, 0.5);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let tiny = Image::filled(2, 32, 0.5);
        assert!(matches!(ssim(&tiny, &tiny), Err(Error::Geometry(_))));
    }
}
