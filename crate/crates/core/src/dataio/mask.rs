//! Headset-shaped occlusion masks and their application.

use serde::{Deserialize, Serialize};

use super::landmarks::{Label, LandmarkSet};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};

pub const MIN_MASK_AREA: f64 = 0.05;
pub const MAX_MASK_AREA: f64 = 0.45;

/// Rounded horizontal band; all lengths are multiples of the inter-ocular distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskGeometry {
    /// Horizontal extension beyond each outer eye corner.
    pub margin_x: f64,
    /// Half-height of the band around the eye line.
    pub v_scale: f64,
    /// Corner radius.
    pub radius: f64,
}

impl Default for MaskGeometry {
    fn default() -> Self {
        Self {
            margin_x: 0.15,
            v_scale: 0.55,
            radius: 0.1,
        }
    }
}

impl MaskGeometry {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.margin_x) && ok(self.radius) && self.v_scale.is_finite() && self.v_scale > 0.0) {
            return Err(Error::Geometry(format!("invalid mask geometry {self:?}")));
        }
        Ok(())
    }
}

/// Band extents in pixels: (left, right, top, bottom, radius).
pub fn band_extents(lm: &LandmarkSet, geom: &MaskGeometry, height: usize, width: usize) -> (f64, f64, f64, f64, f64) {
    let iod = lm.inter_ocular_px(height, width);
    let px = lm.to_pixels(height, width);
    let eyes = [
        Label::LeftEyeOuter,
        Label::LeftEyeInner,
        Label::RightEyeInner,
        Label::RightEyeOuter,
    ];
    let eye_y = eyes.iter().map(|l| px[l].1).sum::<f64>() / 4.0;
    let left = px[&Label::LeftEyeOuter].0 - geom.margin_x * iod;
    let right = px[&Label::RightEyeOuter].0 + geom.margin_x * iod;
    let half = geom.v_scale * iod;
    let r = (geom.radius * iod).min((right - left) / 2.0).min(half).max(0.0);
    (left, right, eye_y - half, eye_y + half, r)
}

/// Rasterizes the headset band at the given size. Pixels whose centres fall
/// inside the rounded rectangle are set.
pub fn synthesize_hmd_mask(lm: &LandmarkSet, geom: &MaskGeometry, height: usize, width: usize) -> Result<BinaryMask> {
    geom.validate()?;
    let iod = lm.inter_ocular_px(height, width);
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(iod > 0.0) {
        return Err(Error::Geometry("degenerate inter-ocular distance".into()));
    }
    let (l, r, t, b, rad) = band_extents(lm, geom, height, width);
    let mask = BinaryMask::from_fn(height, width, |y, x| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        if px < l || px > r || py < t || py > b {
            return false;
        }
        let dx = (l + rad - px).max(px - (r - rad)).max(0.0);
        let dy = (t + rad - py).max(py - (b - rad)).max(0.0);
        dx * dx + dy * dy <= rad * rad
    });
    let area = mask.area_fraction();
    if !(MIN_MASK_AREA..=MAX_MASK_AREA).contains(&area) {
        return Err(Error::Geometry(format!(
            "mask covers {:.1}% of the image (allowed {:.0}%..{:.0}%)",
            area * 100.0,
            MIN_MASK_AREA * 100.0,
            MAX_MASK_AREA * 100.0
        )));
    }
    if mask.component_count() != 1 {
        return Err(Error::Geometry("mask is not a single connected region".into()));
    }
    Ok(mask)
}

/// Replaces masked pixels by `fill`; unmasked pixels are copied unchanged.
pub fn apply_mask(gt: &Image, mask: &BinaryMask, fill: f64) -> Result<Image> {
    mask.ensure_matches(gt)?;
    if !(0.0..=1.0).contains(&fill) {
        return Err(Error::Config(format!("fill value {fill} outside [0, 1]")));
    }
    let mut out = gt.clone();
    let w = gt.width();
    for (p, &m) in mask.bits().iter().enumerate() {
        if m != 0 {
            for c in 0..3 {
                out.set(p / w, p % w, c, fill);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frontal() -> LandmarkSet {
        LandmarkSet::from_pairs(&[
            (Label::LeftEyeOuter, (0.27, 0.42)),
            (Label::LeftEyeInner, (0.42, 0.425)),
            (Label::RightEyeInner, (0.58, 0.425)),
            (Label::RightEyeOuter, (0.73, 0.42)),
            (Label::NoseTip, (0.5, 0.78)),
        ])
        .unwrap()
    }

    #[test]
    fn covers_eyes_but_not_nose() {
        let lm = frontal();
        let m = synthesize_hmd_mask(&lm, &MaskGeometry::default(), 256, 256).unwrap();
        let at = |l: Label| {
            let (x, y) = lm.req(l);
            m.is_set((y * 256.0) as usize, (x * 256.0) as usize)
        };
        for l in [
            Label::LeftEyeOuter,
            Label::LeftEyeInner,
            Label::RightEyeInner,
            Label::RightEyeOuter,
        ] {
            assert!(at(l), "{l} not covered");
        }
        assert!(!at(Label::NoseTip));
        assert_eq!(m.component_count(), 1);
        assert_eq!(m, synthesize_hmd_mask(&lm, &MaskGeometry::default(), 256, 256).unwrap());
    }

    #[test]
    fn zero_margins_give_the_closed_form_rectangle() {
        let lm = frontal();
        let geom = MaskGeometry {
            margin_x: 0.0,
            v_scale: 0.55,
            radius: 0.0,
        };
        let m = synthesize_hmd_mask(&lm, &geom, 256, 256).unwrap();
        let iod = 0.46 * 256.0;
        let eye_y = (0.42 + 0.425 + 0.425 + 0.42) / 4.0 * 256.0;
        let (l, r) = (0.27 * 256.0, 0.73 * 256.0);
        let (t, b) = (eye_y - 0.55 * iod, eye_y + 0.55 * iod);
        // pixel centres j + 0.5 inside [lo, hi]
        let count = |lo: f64, hi: f64| ((hi - 0.5).floor() - (lo - 0.5).ceil() + 1.0) as usize;
        assert_eq!(m.count(), count(l, r) * count(t, b));
        for y in 0..256 {
            for x in 0..256 {
                let inside =
                    (x as f64 + 0.5) >= l && (x as f64 + 0.5) <= r && (y as f64 + 0.5) >= t && (y as f64 + 0.5) <= b;
                assert_eq!(m.is_set(y, x), inside);
            }
        }
    }

    #[test]
    fn area_guard() {
        let lm = frontal();
        let tiny = MaskGeometry {
            margin_x: 0.0,
            v_scale: 0.01,
            radius: 0.0,
        };
        assert!(matches!(
            synthesize_hmd_mask(&lm, &tiny, 256, 256),
            Err(Error::Geometry(_))
        ));
        let huge = MaskGeometry {
            margin_x: 0.5,
            v_scale: 1.5,
            radius: 0.1,
        };
        assert!(matches!(
            synthesize_hmd_mask(&lm, &huge, 256, 256),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn apply_mask_matches_per_pixel_selection() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let gt = Image::from_fn(8, 8, |_, _| [rng.gen(), 0.0, 0.0]);
        let gt = Image::from_fn(8, 8, |y, x| [gt.get(y, x, 0), (y * x) as f64 / 49.0, 0.7]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let bits: Vec<f64> = (0..64).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let mask = BinaryMask::from_values(8, 8, &bits).unwrap();
        let occ = apply_mask(&gt, &mask, 0.0).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    let expect = if bits[y * 8 + x] == 1.0 { 0.0 } else { gt.get(y, x, c) };
                    assert_eq!(occ.get(y, x, c).to_bits(), expect.to_bits());
                }
            }
        }
        assert_eq!(apply_mask(&gt, &BinaryMask::zeros(8, 8), 0.0).unwrap(), gt);
        assert_eq!(
            apply_mask(&gt, &BinaryMask::ones(8, 8), 0.0).unwrap(),
            Image::filled(8, 8, 0.0)
        );
        assert!(apply_mask(&gt, &BinaryMask::ones(8, 7), 0.0).is_err());
    }
}
