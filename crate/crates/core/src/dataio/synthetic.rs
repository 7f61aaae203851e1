//! Procedural face renderer used for fixtures and desk-scale experiments.
//!
//! Each identity has fixed proportions and colours; each frame perturbs head
//! position, gaze, blink and mouth opening. Landmarks are exact by construction.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::landmarks::{Label, LandmarkSet};
use crate::error::{Error, Result};
use crate::image::Image;

/// Fixed appearance of one synthetic person.
#[derive(Clone, Debug)]
pub struct Identity {
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub iris: [f64; 3],
    pub lips: [f64; 3],
    pub background: [[f64; 3]; 2],
    /// Face ellipse half-axes as fractions of the image size.
    pub face_rx: f64,
    pub face_ry: f64,
    /// Eye centre offset from the midline and eye half-width, fractions of the image size.
    pub eye_dx: f64,
    pub eye_rx: f64,
    pub eye_ry: f64,
    pub brow: f64,
}

impl Identity {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut col = |lo: f64, hi: f64| [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
        let tone = col(0.35, 0.9);
        let skin = [tone[0], tone[0] * 0.78, tone[0] * 0.62];
        let hair = col(0.02, 0.45);
        let iris = col(0.1, 0.7);
        let lips = [0.55 + 0.3 * tone[1], 0.25, 0.3];
        let background = [col(0.1, 0.9), col(0.1, 0.9)];
        Self {
            skin,
            hair,
            iris,
            lips,
            background,
            face_rx: rng.gen_range(0.29..0.34),
            face_ry: rng.gen_range(0.38..0.43),
            eye_dx: rng.gen_range(0.115..0.13),
            eye_rx: rng.gen_range(0.055..0.065),
            eye_ry: rng.gen_range(0.026..0.034),
            brow: rng.gen_range(0.05..0.07),
        }
    }
}

/// Per-frame pose and expression.
#[derive(Clone, Copy, Debug, Default)]
pub struct Expression {
    pub shift_x: f64,
    pub shift_y: f64,
    pub gaze_x: f64,
    pub gaze_y: f64,
    /// 0 = open, 1 = closed.
    pub blink: f64,
    pub mouth_open: f64,
}

impl Expression {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Self {
            shift_x: rng.gen_range(-0.03..0.03),
            shift_y: rng.gen_range(-0.03..0.03),
            gaze_x: rng.gen_range(-0.5..0.5),
            gaze_y: rng.gen_range(-0.3..0.3),
            blink: if rng.gen_bool(0.2) {
                rng.gen_range(0.5..0.9)
            } else {
                0.0
            },
            mouth_open: rng.gen_range(0.0..1.0),
        }
    }
}

fn smooth_inside(d: f64, soft: f64) -> f64 {
    // d < 0 inside; linear ramp across `soft` pixels
    (0.5 - d / soft).clamp(0.0, 1.0)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Signed distance (in pixels, approximately) to an axis-aligned ellipse.
fn ellipse_sd(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let (rx, ry) = (rx.max(1e-3), ry.max(1e-3));
    let k = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
    (k - 1.0) * rx.min(ry)
}

/// Renders one frame and its landmarks.
pub fn render_face(id: &Identity, ex: &Expression, size: usize) -> (Image, LandmarkSet) {
    let s = size as f64;
    let cx = (0.5 + ex.shift_x) * s;
    let cy = (0.52 + ex.shift_y) * s;
    let eye_y = cy - 0.08 * s;
    let (fx, fy) = (id.face_rx * s, id.face_ry * s);
    let (edx, erx) = (id.eye_dx * s, id.eye_rx * s);
    let ery = id.eye_ry * s * (1.0 - ex.blink).max(0.08);
    let iris_r = id.eye_ry * s * 0.95;
    let iod = 2.0 * (edx + erx);
    let nose_y = eye_y + 0.7 * iod;
    let mouth_y = eye_y + 1.02 * iod;
    let mouth_w = 0.32 * iod;
    let mouth_h = (0.02 + 0.05 * ex.mouth_open) * iod;

    let img = Image::from_fn(size, size, |yy, xx| {
        let (x, y) = (xx as f64 + 0.5, yy as f64 + 0.5);
        let mut c = mix(id.background[0], id.background[1], y / s);
        // hair cap behind the face
        let hair = smooth_inside(ellipse_sd(x, y, cx, cy - 0.12 * s, fx * 1.12, fy * 0.95), 1.5);
        c = mix(c, id.hair, hair);
        // face with soft radial shading
        let face = smooth_inside(ellipse_sd(x, y, cx, cy, fx, fy), 1.5);
        let r2 = ((x - cx) / fx).powi(2) + ((y - cy) / fy).powi(2);
        let shade = 1.0 - 0.25 * r2.min(1.0);
        let skin = id.skin.map(|v| v * shade);
        c = mix(c, skin, face);
        // fringe over the forehead
        let fringe = smooth_inside(ellipse_sd(x, y, cx, cy - 0.86 * fy, fx * 0.95, fy * 0.3), 1.5);
        c = mix(c, id.hair, fringe * face);
        for side in [-1.0, 1.0] {
            let ex_c = cx + side * edx;
            // brow
            let brow = smooth_inside(ellipse_sd(x, y, ex_c, eye_y - id.brow * s, erx * 1.1, 0.012 * s), 1.2);
            c = mix(c, id.hair, brow);
            // eye white, iris and pupil, clipped to the lid opening
            let white = smooth_inside(ellipse_sd(x, y, ex_c, eye_y, erx, ery), 1.0);
            let ic = (ex_c + ex.gaze_x * erx * 0.45, eye_y + ex.gaze_y * ery * 0.4);
            let iris = smooth_inside(ellipse_sd(x, y, ic.0, ic.1, iris_r, iris_r), 1.0);
            let pupil = smooth_inside(ellipse_sd(x, y, ic.0, ic.1, iris_r * 0.45, iris_r * 0.45), 1.0);
            let mut e = mix([0.95, 0.95, 0.93], id.iris, iris);
            e = mix(e, [0.03, 0.03, 0.04], pupil);
            c = mix(c, e, white);
            // lid line
            let lid = smooth_inside(
                ellipse_sd(x, y, ex_c, eye_y, erx * 1.05, ery * 1.05 + 1.0).abs() - 0.9,
                1.0,
            );
            c = mix(c, id.hair.map(|v| v * 0.6), lid * 0.8);
        }
        // nose shadow
        let nose = smooth_inside(ellipse_sd(x, y, cx, nose_y - 0.01 * s, 0.03 * s, 0.018 * s), 2.0);
        c = mix(c, id.skin.map(|v| v * 0.7), nose * 0.6);
        // mouth
        let mouth = smooth_inside(ellipse_sd(x, y, cx, mouth_y, mouth_w, mouth_h), 1.2);
        c = mix(c, id.lips, mouth);
        let inner = smooth_inside(
            ellipse_sd(x, y, cx, mouth_y, mouth_w * 0.8, (mouth_h - 0.02 * iod).max(0.0)),
            1.0,
        );
        c = mix(c, [0.15, 0.05, 0.05], inner * ex.mouth_open.min(1.0));
        c
    })
    .quantized();

    let n = |px: f64, py: f64| ((px / s).clamp(0.0, 1.0), (py / s).clamp(0.0, 1.0));
    let lm = LandmarkSet::from_pairs(&[
        (Label::LeftEyeOuter, n(cx - edx - erx, eye_y)),
        (Label::LeftEyeInner, n(cx - edx + erx, eye_y)),
        (Label::RightEyeInner, n(cx + edx - erx, eye_y)),
        (Label::RightEyeOuter, n(cx + edx + erx, eye_y)),
        (Label::NoseTip, n(cx, nose_y)),
        (Label::MouthLeft, n(cx - mouth_w, mouth_y)),
        (Label::MouthRight, n(cx + mouth_w, mouth_y)),
    ])
    .expect("rendered landmarks are valid");
    (img, lm)
}

/// Writes `frames` rendered frames of one identity as a frame-directory
/// sequence (`<frame:06>.png` + `<frame:06>.landmarks`).
pub fn write_sequence(dir: &Path, id: &Identity, frames: usize, size: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for f in 0..frames {
        let ex = Expression::random(&mut rng);
        let (img, lm) = render_face(id, &ex, size);
        img.save_png(&dir.join(format!("{f:06}.png")))?;
        lm.save(&dir.join(format!("{f:06}.landmarks")))?;
    }
    Ok(())
}

/// Raw directory with many generic identities (one short sequence each) and
/// one target person with several sequences.
#[derive(Clone, Debug)]
pub struct FixtureSpec {
    pub generic_identities: usize,
    pub generic_frames: usize,
    pub person_sequences: usize,
    pub person_frames: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            generic_identities: 8,
            generic_frames: 4,
            person_sequences: 2,
            person_frames: 16,
            size: 300,
            seed: 1,
        }
    }
}

pub const PERSON: &str = "person";

/// Materializes the fixture raw layout under `raw_dir`:
/// `generic-XX/seq-00/` for the generic identities and `person/seq-XX/` for the target.
pub fn write_fixture_raw(raw_dir: &Path, spec: &FixtureSpec) -> Result<()> {
    for i in 0..spec.generic_identities {
        let id = Identity::random(spec.seed.wrapping_mul(1000).wrapping_add(i as u64));
        let dir = raw_dir.join(format!("generic-{i:02}")).join("seq-00");
        write_sequence(&dir, &id, spec.generic_frames, spec.size, spec.seed ^ (i as u64 + 17))?;
    }
    let person = Identity::random(spec.seed.wrapping_mul(1000).wrapping_add(999));
    for s in 0..spec.person_sequences {
        let dir = raw_dir.join(PERSON).join(format!("seq-{s:02}"));
        write_sequence(
            &dir,
            &person,
            spec.person_frames,
            spec.size,
            spec.seed ^ (0xF00 + s as u64),
        )?;
    }
    Ok(())
}
