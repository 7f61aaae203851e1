//! Facial landmarks and the pluggable providers that produce them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;

/// Semantic landmark labels. "Left" means the image-left side (smaller x).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    LeftEyeOuter,
    LeftEyeInner,
    RightEyeInner,
    RightEyeOuter,
    NoseTip,
    MouthLeft,
    MouthRight,
    Chin,
}

impl Label {
    pub const REQUIRED: [Label; 5] = [
        Label::LeftEyeOuter,
        Label::LeftEyeInner,
        Label::RightEyeInner,
        Label::RightEyeOuter,
        Label::NoseTip,
    ];

    pub const ALL: [Label; 8] = [
        Label::LeftEyeOuter,
        Label::LeftEyeInner,
        Label::RightEyeInner,
        Label::RightEyeOuter,
        Label::NoseTip,
        Label::MouthLeft,
        Label::MouthRight,
        Label::Chin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::LeftEyeOuter => "left-eye-outer",
            Label::LeftEyeInner => "left-eye-inner",
            Label::RightEyeInner => "right-eye-inner",
            Label::RightEyeOuter => "right-eye-outer",
            Label::NoseTip => "nose-tip",
            Label::MouthLeft => "mouth-left",
            Label::MouthRight => "mouth-right",
            Label::Chin => "chin",
        }
    }

    /// The label a point carries after a horizontal flip.
    pub fn mirrored(self) -> Label {
        match self {
            Label::LeftEyeOuter => Label::RightEyeOuter,
            Label::RightEyeOuter => Label::LeftEyeOuter,
            Label::LeftEyeInner => Label::RightEyeInner,
            Label::RightEyeInner => Label::LeftEyeInner,
            Label::MouthLeft => Label::MouthRight,
            Label::MouthRight => Label::MouthLeft,
            other => other,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Landmarks(format!("unknown landmark label `{s}`")))
    }
}

/// Landmark points in normalized image coordinates, `(x, y) ∈ [0, 1]²`.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: BTreeMap<Label, (f64, f64)>,
}

impl LandmarkSet {
    /// Validates coordinate range and presence of every required label.
    pub fn new(points: BTreeMap<Label, (f64, f64)>) -> Result<Self> {
        for (label, &(x, y)) in &points {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(Error::Landmarks(format!("{label} at ({x}, {y}) outside [0,1]²")));
            }
        }
        if let Some(missing) = Label::REQUIRED.iter().find(|l| !points.contains_key(l)) {
            return Err(Error::Landmarks(format!("required label {missing} missing")));
        }
        Ok(Self { points })
    }

    pub fn from_pairs(pairs: &[(Label, (f64, f64))]) -> Result<Self> {
        let mut points = BTreeMap::new();
        for &(l, p) in pairs {
            if points.insert(l, p).is_some() {
                return Err(Error::Landmarks(format!("label {l} given more than once")));
            }
        }
        Self::new(points)
    }

    pub fn get(&self, label: Label) -> Option<(f64, f64)> {
        self.points.get(&label).copied()
    }

    /// Coordinates of a required label.
    pub fn req(&self, label: Label) -> (f64, f64) {
        self.points[&label]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Label, (f64, f64))> + '_ {
        self.points.iter().map(|(l, p)| (*l, *p))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Landmarks of the horizontally flipped image: `x ↦ 1 − x`, left/right labels swapped.
    pub fn mirrored(&self) -> LandmarkSet {
        LandmarkSet {
            points: self
                .points
                .iter()
                .map(|(l, &(x, y))| (l.mirrored(), (1.0 - x, y)))
                .collect(),
        }
    }

    /// Points in pixel units for an image of the given size.
    pub fn to_pixels(&self, height: usize, width: usize) -> BTreeMap<Label, (f64, f64)> {
        self.points
            .iter()
            .map(|(l, &(x, y))| (*l, (x * width as f64, y * height as f64)))
            .collect()
    }

    /// Distance between the outer eye corners, in pixels.
    pub fn inter_ocular_px(&self, height: usize, width: usize) -> f64 {
        let (ax, ay) = self.req(Label::LeftEyeOuter);
        let (bx, by) = self.req(Label::RightEyeOuter);
        let dx = (bx - ax) * width as f64;
        let dy = (by - ay) * height as f64;
        (dx * dx + dy * dy).sqrt()
    }

    /// Parses the sidecar format: one `label x y` line per point; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [label, x, y] = fields[..] else {
                return Err(Error::Landmarks(format!(
                    "line {}: expected `label x y`, got `{line}`",
                    n + 1
                )));
            };
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Landmarks(format!("line {}: bad coordinate `{s}`", n + 1)))
            };
            pairs.push((label.parse()?, (parse(x)?, parse(y)?)));
        }
        Self::from_pairs(&pairs)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (l, (x, y)) in self.iter() {
            s.push_str(&format!("{l} {x} {y}\n"));
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Per-face blocks in detector output are separated by lines containing only `---`.
fn parse_detections(text: &str, frame_id: u64) -> Result<LandmarkSet> {
    let blocks: Vec<&str> = text
        .split("\n---")
        .map(|b| b.trim_start_matches("---"))
        .filter(|b| b.lines().any(|l| !l.split('#').next().unwrap_or("").trim().is_empty()))
        .collect();
    match blocks.len() {
        0 => Err(Error::NoFace { frame_id }),
        1 => LandmarkSet::parse(blocks[0]),
        count => Err(Error::MultipleFaces { frame_id, count }),
    }
}

/// Where a frame came from; providers may use any of it.
#[derive(Clone, Debug, Default)]
pub struct FrameRef {
    pub frame_id: u64,
    /// Sidecar landmark file associated with the frame, if the source has one.
    pub sidecar: Option<PathBuf>,
}

impl FrameRef {
    pub fn new(frame_id: u64) -> Self {
        Self {
            frame_id,
            sidecar: None,
        }
    }
}

/// Source of landmarks for a single-face image.
pub trait LandmarkProvider: Sync {
    fn detect(&self, img: &Image, frame: &FrameRef) -> Result<LandmarkSet>;
}

/// Convenience wrapper over a provider.
pub fn detect_landmarks(provider: &dyn LandmarkProvider, img: &Image, frame: &FrameRef) -> Result<LandmarkSet> {
    provider.detect(img, frame)
}

/// Reads the sidecar named by the frame reference. A missing sidecar means no face.
#[derive(Clone, Copy, Debug, Default)]
pub struct SidecarProvider;

impl LandmarkProvider for SidecarProvider {
    fn detect(&self, _img: &Image, frame: &FrameRef) -> Result<LandmarkSet> {
        let Some(path) = frame.sidecar.as_deref().filter(|p| p.is_file()) else {
            return Err(Error::NoFace {
                frame_id: frame.frame_id,
            });
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_detections(&text, frame.frame_id)
    }
}

/// Content-addressed registry of known images and their landmarks.
///
/// Lookups that miss are retried on the mirrored image, in which case the
/// mirrored landmarks are returned. Anything else has no face.
#[derive(Clone, Debug, Default)]
pub struct FixtureProvider {
    entries: HashMap<[u8; 32], LandmarkSet>,
}

fn content_key(img: &Image) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((img.height() as u64).to_le_bytes());
    h.update((img.width() as u64).to_le_bytes());
    for v in img.to_rgb8().as_raw() {
        h.update([*v]);
    }
    h.finalize().into()
}

impl FixtureProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, img: &Image, lm: LandmarkSet) {
        self.entries.insert(content_key(img), lm);
    }

    /// Registers every `*.png` in `dir` that has a `.landmarks` sidecar with the same stem.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut p = Self::new();
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        entries.sort();
        for img_path in entries {
            let side = img_path.with_extension("landmarks");
            if side.is_file() {
                p.register(&Image::load(&img_path)?, LandmarkSet::load(&side)?);
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl LandmarkProvider for FixtureProvider {
    fn detect(&self, img: &Image, frame: &FrameRef) -> Result<LandmarkSet> {
        if let Some(lm) = self.entries.get(&content_key(img)) {
            return Ok(lm.clone());
        }
        if let Some(lm) = self.entries.get(&content_key(&img.flip_horizontal())) {
            return Ok(lm.mirrored());
        }
        Err(Error::NoFace {
            frame_id: frame.frame_id,
        })
    }
}

/// Adapter for an external detector executable.
///
/// The program is invoked as `program [args..] <image.png>` and must print
/// landmarks in the sidecar format on stdout, one `---`-separated block per face.
#[derive(Clone, Debug)]
pub struct CommandProvider {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl LandmarkProvider for CommandProvider {
    fn detect(&self, img: &Image, frame: &FrameRef) -> Result<LandmarkSet> {
        let dir = std::env::temp_dir().join(format!("deocc-detect-{}", std::process::id()));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{:06}.png", frame.frame_id));
        img.save_png(&path)?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&path)
            .output()
            .map_err(|e| Error::io(&self.program, e));
        let _ = fs::remove_file(&path);
        let out = out?;
        if !out.status.success() {
            return Err(Error::Landmarks(format!(
                "detector {} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        parse_detections(&String::from_utf8_lossy(&out.stdout), frame.frame_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn frontal() -> LandmarkSet {
        LandmarkSet::from_pairs(&[
            (Label::LeftEyeOuter, (0.27, 0.42)),
            (Label::LeftEyeInner, (0.42, 0.42)),
            (Label::RightEyeInner, (0.58, 0.42)),
            (Label::RightEyeOuter, (0.73, 0.42)),
            (Label::NoseTip, (0.5, 0.62)),
        ])
        .unwrap()
    }

    #[test]
    fn text_round_trip_and_validation() {
        let lm = frontal();
        assert_eq!(LandmarkSet::parse(&lm.to_text()).unwrap(), lm);
        assert!(LandmarkSet::parse("left-eye-outer 0.1 0.1\n").is_err());
        assert!(LandmarkSet::parse(&(lm.to_text() + "nose-tip 0.5 0.5\n")).is_err());
        assert!(LandmarkSet::parse("left-eye-outer 1.5 0.1").is_err());
        assert!(LandmarkSet::parse("forehead 0.1 0.1").is_err());
    }

    #[test]
    fn mirroring_swaps_sides() {
        let m = frontal().mirrored();
        assert!((m.req(Label::LeftEyeOuter).0 - 0.27).abs() < 1e-12);
        assert!((m.req(Label::RightEyeInner).0 - 0.58).abs() < 1e-12);
        for ((_, a), (_, b)) in m.mirrored().iter().zip(frontal().iter()) {
            assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn detection_blocks() {
        let one = frontal().to_text();
        assert!(parse_detections(&one, 3).is_ok());
        assert!(matches!(parse_detections("", 3), Err(Error::NoFace { frame_id: 3 })));
        let two = format!("{one}---\n{one}");
        assert!(matches!(
            parse_detections(&two, 4),
            Err(Error::MultipleFaces { frame_id: 4, count: 2 })
        ));
    }

    #[test]
    fn sidecar_provider_reads_sidecar_or_reports_no_face() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("000001.landmarks");
        frontal().save(&p).unwrap();
        let img = Image::filled(4, 4, 0.5);
        let frame = FrameRef {
            frame_id: 1,
            sidecar: Some(p),
        };
        assert_eq!(SidecarProvider.detect(&img, &frame).unwrap(), frontal());
        assert!(matches!(
            SidecarProvider.detect(&img, &FrameRef::new(9)),
            Err(Error::NoFace { frame_id: 9 })
        ));
    }
}
