use std::collections::BTreeMap;

use super::landmarks::LandmarkSet;
use crate::error::{Error, Result};
use crate::image::{Image, FACE_SIZE};

/// Crop side as a multiple of the outer-eye-corner distance.
pub const CROP_SCALE: f64 = 2.2;

/// Square crop window in source pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
}

/// Square window centred on the landmark centroid, `CROP_SCALE` inter-ocular
/// distances wide, shifted (and if necessary shrunk) to stay inside the image.
pub fn crop_box(height: usize, width: usize, lm: &LandmarkSet) -> Result<CropBox> {
    let iod = lm.inter_ocular_px(height, width);
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(iod > 1e-6 * height.max(width) as f64) {
        return Err(Error::Geometry(format!(
            "degenerate inter-ocular distance {iod:.3e} px"
        )));
    }
    let px = lm.to_pixels(height, width);
    let n = px.len() as f64;
    let cx = px.values().map(|p| p.0).sum::<f64>() / n;
    let cy = px.values().map(|p| p.1).sum::<f64>() / n;
    let side = (CROP_SCALE * iod).min(height as f64).min(width as f64);
    Ok(CropBox {
        x0: (cx - side / 2.0).clamp(0.0, width as f64 - side),
        y0: (cy - side / 2.0).clamp(0.0, height as f64 - side),
        side,
    })
}

/// Crops the face and resamples it bilinearly to 256×256; landmarks are
/// re-expressed in normalized crop coordinates.
pub fn crop_face(img: &Image, lm: &LandmarkSet) -> Result<(Image, LandmarkSet)> {
    let b = crop_box(img.height(), img.width(), lm)?;
    let scale = b.side / FACE_SIZE as f64;
    let out = Image::from_fn(FACE_SIZE, FACE_SIZE, |i, j| {
        let sy = b.y0 + (i as f64 + 0.5) * scale - 0.5;
        let sx = b.x0 + (j as f64 + 0.5) * scale - 0.5;
        img.sample_bilinear(sy, sx)
    });
    let points: BTreeMap<_, _> = lm
        .to_pixels(img.height(), img.width())
        .into_iter()
        .map(|(l, (x, y))| {
            (
                l,
                (
                    ((x - b.x0) / b.side).clamp(0.0, 1.0),
                    ((y - b.y0) / b.side).clamp(0.0, 1.0),
                ),
            )
        })
        .collect();
    Ok((out, LandmarkSet::new(points)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::landmarks::Label;

    fn lm_at(cx: f64, cy: f64, iod: f64) -> LandmarkSet {
        // symmetric layout whose centroid is exactly (cx, cy)
        LandmarkSet::from_pairs(&[
            (Label::LeftEyeOuter, (cx - iod / 2.0, cy - 0.1)),
            (Label::LeftEyeInner, (cx - iod / 6.0, cy - 0.1)),
            (Label::RightEyeInner, (cx + iod / 6.0, cy - 0.1)),
            (Label::RightEyeOuter, (cx + iod / 2.0, cy - 0.1)),
            (Label::NoseTip, (cx, cy + 0.4)),
        ])
        .unwrap()
    }

    fn textured(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x| {
            [
                ((x * 7 + y * 3) % 256) as f64 / 255.0,
                ((x ^ y) % 256) as f64 / 255.0,
                (y % 256) as f64 / 255.0,
            ]
        })
    }

    #[test]
    fn canonical_face_is_a_fixed_point() {
        let img = textured(256, 256);
        let lm = lm_at(0.5, 0.5, 1.0 / CROP_SCALE);
        let (out, out_lm) = crop_face(&img, &lm).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        for ((_, p), (_, q)) in out_lm.iter().zip(lm.iter()) {
            assert!((p.0 - q.0).abs() < 1e-9 && (p.1 - q.1).abs() < 1e-9);
        }
    }

    #[test]
    fn border_faces_are_clamped() {
        let img = textured(300, 400);
        // centroid near the top-left corner
        let lm = lm_at(0.08, 0.1, 0.15);
        let b = crop_box(300, 400, &lm).unwrap();
        assert_eq!((b.x0, b.y0), (0.0, 0.0));
        assert!((b.side - CROP_SCALE * 0.15 * 400.0).abs() < 1e-9);
        let (out, out_lm) = crop_face(&img, &lm).unwrap();
        assert_eq!(out.dims(), (256, 256));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(out_lm
            .iter()
            .all(|(_, (x, y))| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)));
        // an oversized face shrinks the window to the image
        let huge = lm_at(0.5, 0.5, 0.9);
        let b = crop_box(300, 400, &huge).unwrap();
        assert_eq!(b.side, 300.0);
        assert!(b.x0 >= 0.0 && b.x0 + b.side <= 400.0);
    }

    #[test]
    fn degenerate_landmarks_fail() {
        let lm = lm_at(0.5, 0.5, 0.0);
        assert!(matches!(crop_face(&textured(64, 64), &lm), Err(Error::Geometry(_))));
    }
}
