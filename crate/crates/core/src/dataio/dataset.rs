//! Dataset materialization and the on-disk layout
//! `out_dir/<subject>/<split>/<frame:06>.{gt,occ,mask}.png` + `<frame:06>.landmarks`,
//! indexed by `out_dir/manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::crop::crop_face;
use super::frames::{extract_indexed_frames, list_stills};
use super::landmarks::{FrameRef, LandmarkProvider, LandmarkSet};
use super::mask::{apply_mask, synthesize_hmd_mask, MaskGeometry};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image, FACE_SIZE};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Pretrain,
    Stage1,
    Stage2,
    Eval,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Pretrain, Split::Stage1, Split::Stage2, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::Stage1 => "stage1",
            Split::Stage2 => "stage2",
            Split::Eval => "eval",
        }
    }

    pub fn is_training(self) -> bool {
        self != Split::Eval
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

/// Aligned training/evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceSample {
    pub gt: Image,
    pub occ: Image,
    pub mask: BinaryMask,
    pub landmarks: LandmarkSet,
    pub subject_id: String,
    pub frame_id: u64,
}

impl FaceSample {
    /// Builds a sample by occluding `gt` with `mask`.
    pub fn new(
        gt: Image,
        mask: BinaryMask,
        landmarks: LandmarkSet,
        subject_id: &str,
        frame_id: u64,
        fill: f64,
    ) -> Result<Self> {
        let occ = apply_mask(&gt, &mask, fill)?;
        Ok(Self {
            gt,
            occ,
            mask,
            landmarks,
            subject_id: subject_id.to_string(),
            frame_id,
        })
    }

    /// Checks size, and that `occ` equals `gt` off the mask and `fill` on it.
    pub fn validate(&self, fill: f64) -> Result<()> {
        self.gt.ensure_face_size()?;
        self.gt.ensure_same_dims(&self.occ)?;
        self.mask.ensure_matches(&self.gt)?;
        let w = self.gt.width();
        for (p, &m) in self.mask.bits().iter().enumerate() {
            for c in 0..3 {
                let (y, x) = (p / w, p % w);
                let expect = if m != 0 { fill } else { self.gt.get(y, x, c) };
                if self.occ.get(y, x, c).to_bits() != expect.to_bits() {
                    return Err(Error::Dataset {
                        summary: format!(
                            "sample {}/{} violates occlusion invariant at ({y}, {x})",
                            self.subject_id, self.frame_id
                        ),
                        report: vec![],
                    });
                }
            }
        }
        Ok(())
    }
}

/// Settings for [`build_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Keep every `stride`-th source frame.
    pub stride: usize,
    /// `"subject/sequence"` → the splits it feeds. Glob `"subject/*"` covers every sequence of a subject.
    pub splits: BTreeMap<String, Vec<Split>>,
    pub seed: u64,
    pub geometry: MaskGeometry,
    /// Relative per-frame perturbation of margin and band height, drawn from the seed.
    pub mask_jitter: f64,
    pub fill: f64,
    pub max_failure_rate: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            splits: BTreeMap::new(),
            seed: 0,
            geometry: MaskGeometry::default(),
            mask_jitter: 0.1,
            fill: 0.0,
            max_failure_rate: 0.2,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fill) {
            return Err(Error::Config(format!("fill {} outside [0, 1]", self.fill)));
        }
        if !(0.0..0.5).contains(&self.mask_jitter) {
            return Err(Error::Config(format!(
                "mask_jitter {} outside [0, 0.5)",
                self.mask_jitter
            )));
        }
        self.geometry.validate()?;
        for (key, splits) in &self.splits {
            let has_eval = splits.contains(&Split::Eval);
            if has_eval && splits.iter().any(|s| s.is_training()) {
                return Err(Error::Config(format!(
                    "sequence `{key}` is assigned to both eval and a training split"
                )));
            }
            if splits.is_empty() {
                return Err(Error::Config(format!("sequence `{key}` has no split")));
            }
        }
        Ok(())
    }

    /// Splits for a sequence; exact keys take precedence over `subject/*`.
    pub fn splits_for(&self, subject: &str, sequence: &str) -> Option<&[Split]> {
        self.splits
            .get(&format!("{subject}/{sequence}"))
            .or_else(|| self.splits.get(&format!("{subject}/*")))
            .map(Vec::as_slice)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub subject_id: String,
    pub sequence: String,
    pub source_frame: usize,
    pub frame_id: u64,
    pub split: Split,
    pub gt: PathBuf,
    pub occ: PathBuf,
    pub mask: PathBuf,
    pub landmarks: PathBuf,
}

/// Index of a materialized dataset; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub stride: usize,
    pub fill: f64,
    pub mask_jitter: f64,
    pub geometry: MaskGeometry,
    pub records: Vec<Record>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Dataset {
            summary: format!("malformed manifest {}: {e}", path.display()),
            report: vec![],
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Config(format!("unsupported manifest version {}", m.version)));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check_disjoint()?;
        Ok(m)
    }

    pub fn save(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Sequences used for evaluation never appear in a training split.
    pub fn check_disjoint(&self) -> Result<()> {
        let key = |r: &Record| format!("{}/{}", r.subject_id, r.sequence);
        let train: BTreeSet<String> = self.records.iter().filter(|r| r.split.is_training()).map(key).collect();
        let eval: BTreeSet<String> = self.records(Split::Eval).map(key).collect();
        let shared: Vec<_> = train.intersection(&eval).cloned().collect();
        if !shared.is_empty() {
            return Err(Error::Dataset {
                summary: format!("{} sequence(s) appear in both training and eval splits", shared.len()),
                report: shared,
            });
        }
        Ok(())
    }

    pub fn load_sample(&self, r: &Record) -> Result<FaceSample> {
        let gt = Image::load(&self.root.join(&r.gt))?;
        let occ = Image::load(&self.root.join(&r.occ))?;
        let mask = BinaryMask::load(&self.root.join(&r.mask))?;
        let landmarks = LandmarkSet::load(&self.root.join(&r.landmarks))?;
        let s = FaceSample {
            gt,
            occ,
            mask,
            landmarks,
            subject_id: r.subject_id.clone(),
            frame_id: r.frame_id,
        };
        s.validate(self.fill)?;
        Ok(s)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<FaceSample>> {
        self.records(split).map(|r| self.load_sample(r)).collect()
    }
}

/// One capture sequence found in the raw directory.
struct Sequence {
    subject: String,
    name: String,
    source: PathBuf,
    /// Directory holding `<index:06>.landmarks` sidecars for container sources.
    sidecar_dir: Option<PathBuf>,
}

fn discover(raw_dir: &Path) -> Result<Vec<Sequence>> {
    let mut subjects: Vec<PathBuf> = fs::read_dir(raw_dir)
        .map_err(|e| Error::io(raw_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subjects.sort();
    let mut out = Vec::new();
    for sdir in subjects {
        let subject = sdir.file_name().unwrap().to_string_lossy().into_owned();
        let mut entries: Vec<PathBuf> = fs::read_dir(&sdir)
            .map_err(|e| Error::io(&sdir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() && p.extension().is_none_or(|e| e != "landmarks") {
                if !list_stills(&p)?.is_empty() {
                    out.push(Sequence {
                        subject: subject.clone(),
                        name: p.file_name().unwrap().to_string_lossy().into_owned(),
                        source: p,
                        sidecar_dir: None,
                    });
                }
            } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("gif")) {
                let name = p.file_stem().unwrap().to_string_lossy().into_owned();
                out.push(Sequence {
                    subject: subject.clone(),
                    sidecar_dir: Some(sdir.join(format!("{name}.landmarks"))),
                    name,
                    source: p,
                });
            }
        }
    }
    Ok(out)
}

fn frame_seed(seed: u64, subject: &str, sequence: &str, frame: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(subject.as_bytes());
    h.update([0]);
    h.update(sequence.as_bytes());
    h.update([0]);
    h.update((frame as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Geometry for one frame: the configured shape, perturbed deterministically.
pub fn jittered_geometry(cfg: &DatasetConfig, subject: &str, sequence: &str, frame: usize) -> MaskGeometry {
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(cfg.seed, subject, sequence, frame));
    let j = cfg.mask_jitter;
    let mut f = || if j > 0.0 { 1.0 + rng.gen_range(-j..=j) } else { 1.0 };
    MaskGeometry {
        margin_x: cfg.geometry.margin_x * f(),
        v_scale: cfg.geometry.v_scale * f(),
        radius: cfg.geometry.radius,
    }
}

/// Crops, masks and writes every usable frame of every assigned sequence in
/// `raw_dir`, then writes the manifest.
///
/// Raw layout: `raw_dir/<subject>/<sequence>/` holding ordered stills with
/// same-stem `.landmarks` sidecars, or `raw_dir/<subject>/<sequence>.gif`
/// with sidecars in `raw_dir/<subject>/<sequence>.landmarks/<index:06>.landmarks`.
pub fn build_dataset(
    raw_dir: &Path,
    out_dir: &Path,
    cfg: &DatasetConfig,
    provider: &dyn LandmarkProvider,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let sequences = discover(raw_dir)?;
    if sequences.is_empty() {
        return Err(Error::EmptyInput(format!("no sequences under {}", raw_dir.display())));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut total = 0usize;
    let mut next_id: BTreeMap<(String, Split), u64> = BTreeMap::new();

    for seq in &sequences {
        let Some(splits) = cfg.splits_for(&seq.subject, &seq.name) else {
            log::info!("skipping unassigned sequence {}/{}", seq.subject, seq.name);
            continue;
        };
        let stills = if seq.sidecar_dir.is_none() {
            list_stills(&seq.source)?
        } else {
            vec![]
        };
        for (index, img) in extract_indexed_frames(&seq.source, cfg.stride)? {
            total += 1;
            let sidecar = match &seq.sidecar_dir {
                Some(d) => d.join(format!("{index:06}.landmarks")),
                None => stills[index].with_extension("landmarks"),
            };
            let frame = FrameRef {
                frame_id: index as u64,
                sidecar: Some(sidecar),
            };
            let prepared = provider.detect(&img, &frame).and_then(|lm| {
                let (face, lm) = crop_face(&img, &lm)?;
                let face = face.quantized();
                let geom = jittered_geometry(cfg, &seq.subject, &seq.name, index);
                let mask = synthesize_hmd_mask(&lm, &geom, FACE_SIZE, FACE_SIZE)?;
                Ok((face, lm, mask))
            });
            let (gt, lm, mask) = match prepared {
                Ok(v) => v,
                Err(e) => {
                    failures.push(format!("{}/{} frame {index}: {e}", seq.subject, seq.name));
                    continue;
                }
            };
            let occ = apply_mask(&gt, &mask, cfg.fill)?;
            for &split in splits {
                let id_slot = next_id.entry((seq.subject.clone(), split)).or_insert(0);
                let frame_id = *id_slot;
                *id_slot += 1;
                let rel_dir = PathBuf::from(&seq.subject).join(split.as_str());
                let abs_dir = out_dir.join(&rel_dir);
                fs::create_dir_all(&abs_dir).map_err(|e| Error::io(&abs_dir, e))?;
                let stem = format!("{frame_id:06}");
                let rec = Record {
                    subject_id: seq.subject.clone(),
                    sequence: seq.name.clone(),
                    source_frame: index,
                    frame_id,
                    split,
                    gt: rel_dir.join(format!("{stem}.gt.png")),
                    occ: rel_dir.join(format!("{stem}.occ.png")),
                    mask: rel_dir.join(format!("{stem}.mask.png")),
                    landmarks: rel_dir.join(format!("{stem}.landmarks")),
                };
                gt.save_png(&out_dir.join(&rec.gt))?;
                occ.save_png(&out_dir.join(&rec.occ))?;
                mask.save_png(&out_dir.join(&rec.mask))?;
                lm.save(&out_dir.join(&rec.landmarks))?;
                records.push(rec);
            }
        }
    }

    if total == 0 {
        return Err(Error::EmptyInput("no frames in any assigned sequence".into()));
    }
    let rate = failures.len() as f64 / total as f64;
    if rate > cfg.max_failure_rate {
        return Err(Error::Dataset {
            summary: format!(
                "landmark/geometry failures on {} of {total} frames ({:.0}% > {:.0}%)",
                failures.len(),
                rate * 100.0,
                cfg.max_failure_rate * 100.0
            ),
            report: failures,
        });
    }
    for f in &failures {
        log::warn!("skipped {f}");
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        stride: cfg.stride,
        fill: cfg.fill,
        mask_jitter: cfg.mask_jitter,
        geometry: cfg.geometry,
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.check_disjoint()?;
    manifest.save()?;
    Ok(manifest)
}
