mod common;

use std::fs::{self, File};
use std::path::Path;

use deocc::dataio::synthetic::{render_face, Expression, Identity};
use deocc::dataio::{
    apply_mask, build_dataset, crop_box, crop_face, detect_landmarks, extract_frames, extract_indexed_frames,
    synthesize_hmd_mask, DatasetConfig, DatasetManifest, FixtureProvider, FrameRef, Label, LandmarkSet, MaskGeometry,
    SidecarProvider, Split,
};
use deocc::image::{BinaryMask, Image};
use deocc::Error;
use image::codecs::gif::GifEncoder;
use image::{Delay, Frame, Rgba, RgbaImage};

/// Frame `i` carries its index as 7 binary blocks along the top.
fn indexed_frame(i: usize) -> RgbaImage {
    RgbaImage::from_fn(56, 8, |x, _| {
        let on = (i >> (x / 8)) & 1 == 1;
        Rgba(if on { [255, 255, 255, 255] } else { [0, 0, 0, 255] })
    })
}

fn read_index(img: &Image) -> usize {
    (0..7)
        .map(|bit| ((img.get(4, bit * 8 + 4, 0) > 0.5) as usize) << bit)
        .sum()
}

fn write_gif(path: &Path, n: usize) {
    let mut enc = GifEncoder::new(File::create(path).unwrap());
    let frames = (0..n).map(|i| Frame::from_parts(indexed_frame(i), 0, 0, Delay::from_numer_denom_ms(33, 1)));
    enc.encode_frames(frames).unwrap();
}

#[test]
fn frame_stride_counts() {
    let dir = tempfile::tempdir().unwrap();
    let clip = dir.path().join("clip.gif");
    write_gif(&clip, 90);
    assert_eq!(extract_frames(&clip, 30).unwrap().len(), 3);
    assert_eq!(extract_frames(&clip, 1).unwrap().len(), 90);
    let short = dir.path().join("short.gif");
    write_gif(&short, 10);
    let idx: Vec<usize> = extract_indexed_frames(&short, 2)
        .unwrap()
        .iter()
        .map(|(i, img)| {
            assert_eq!(*i, read_index(img));
            *i
        })
        .collect();
    assert_eq!(idx, vec![0, 2, 4, 6, 8]);
}

/// Symmetric face whose crop window is exactly the central `side`-pixel square.
fn canonical_landmarks(size: usize, side: f64) -> LandmarkSet {
    let s = size as f64;
    let iod = side / deocc::dataio::CROP_SCALE;
    let (cx, cy, d) = (s / 2.0, s / 2.0, 10.0);
    let n = |x: f64, y: f64| (x / s, y / s);
    LandmarkSet::from_pairs(&[
        (Label::LeftEyeOuter, n(cx - iod / 2.0, cy - d)),
        (Label::LeftEyeInner, n(cx - iod / 4.0, cy - d)),
        (Label::RightEyeInner, n(cx + iod / 4.0, cy - d)),
        (Label::RightEyeOuter, n(cx + iod / 2.0, cy - d)),
        (Label::NoseTip, n(cx, cy + 4.0 * d)),
    ])
    .unwrap()
}

#[test]
fn sidecar_provider_is_the_identity_and_blank_frames_have_no_face() {
    let dir = tempfile::tempdir().unwrap();
    let lm = canonical_landmarks(300, 256.0);
    let side = dir.path().join("f.landmarks");
    lm.save(&side).unwrap();
    let img = Image::filled(300, 300, 0.5);
    let frame = FrameRef {
        frame_id: 4,
        sidecar: Some(side),
    };
    assert_eq!(detect_landmarks(&SidecarProvider, &img, &frame).unwrap(), lm);
    assert!(matches!(
        detect_landmarks(&SidecarProvider, &img, &FrameRef::new(4)),
        Err(Error::NoFace { frame_id: 4 })
    ));
}

#[test]
fn fixture_provider_mirrors_and_rejects_blank_images() {
    let (img, lm) = render_face(&Identity::random(5), &Expression::default(), 128);
    let mut p = FixtureProvider::new();
    p.register(&img, lm.clone());
    assert_eq!(detect_landmarks(&p, &img, &FrameRef::new(0)).unwrap(), lm);

    let flipped = detect_landmarks(&p, &img.flip_horizontal(), &FrameRef::new(0)).unwrap();
    for (label, (x, y)) in lm.iter() {
        let (fx, fy) = flipped.get(label.mirrored()).unwrap();
        assert!((fx - (1.0 - x)).abs() < 1e-12 && (fy - y).abs() < 1e-12, "{label:?}");
    }
    assert!(flipped.req(Label::LeftEyeOuter).0 < flipped.req(Label::RightEyeOuter).0);

    let blank = Image::filled(128, 128, 0.5);
    assert!(matches!(
        detect_landmarks(&p, &blank, &FrameRef::new(0)),
        Err(Error::NoFace { .. })
    ));
}

#[test]
fn canonical_face_crops_to_the_center() {
    let mut r = common::rng(1);
    let img = common::random_image(&mut r, 512, 512);
    let lm = canonical_landmarks(512, 256.0);
    let (face, crop_lm) = crop_face(&img, &lm).unwrap();
    assert_eq!(face.dims(), (256, 256));
    for y in 0..256 {
        for x in 0..256 {
            for c in 0..3 {
                assert!((face.get(y, x, c) - img.get(y + 128, x + 128, c)).abs() < 1e-9);
            }
        }
    }
    for (_, (x, y)) in crop_lm.iter() {
        assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
    }
}

#[test]
fn border_faces_are_clamped() {
    let img = Image::filled(400, 600, 0.3);
    let lm = LandmarkSet::from_pairs(&[
        (Label::LeftEyeOuter, (0.0, 0.02)),
        (Label::LeftEyeInner, (0.05, 0.02)),
        (Label::RightEyeInner, (0.1, 0.02)),
        (Label::RightEyeOuter, (0.15, 0.02)),
        (Label::NoseTip, (0.07, 0.08)),
    ])
    .unwrap();
    let b = crop_box(400, 600, &lm).unwrap();
    assert_eq!((b.x0, b.y0), (0.0, 0.0));
    let (face, clm) = crop_face(&img, &lm).unwrap();
    assert_eq!(face.dims(), (256, 256));
    for (_, (x, y)) in clm.iter() {
        assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
    }
}

#[test]
fn headset_mask_geometry() {
    let (img, lm) = render_face(&Identity::random(2), &Expression::default(), 300);
    let (_, lm) = crop_face(&img, &lm).unwrap();
    let geom = MaskGeometry::default();
    let m = synthesize_hmd_mask(&lm, &geom, 256, 256).unwrap();
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
        assert!(at(l), "{l:?} not covered");
    }
    assert!(!at(Label::NoseTip));
    assert_eq!(m, synthesize_hmd_mask(&lm, &geom, 256, 256).unwrap());

    // margins and radius zero: the rectangle spanned by the outer eye corners and the band height
    let rect = MaskGeometry {
        margin_x: 0.0,
        v_scale: 0.4,
        radius: 0.0,
    };
    let m = synthesize_hmd_mask(&lm, &rect, 256, 256).unwrap();
    let px = lm.to_pixels(256, 256);
    let iod = lm.inter_ocular_px(256, 256);
    let (l, r) = (px[&Label::LeftEyeOuter].0, px[&Label::RightEyeOuter].0);
    let eye_y = [
        Label::LeftEyeOuter,
        Label::LeftEyeInner,
        Label::RightEyeInner,
        Label::RightEyeOuter,
    ]
    .iter()
    .map(|k| px[k].1)
    .sum::<f64>()
        / 4.0;
    let (t, b) = (eye_y - 0.4 * iod, eye_y + 0.4 * iod);
    let expected = BinaryMask::from_fn(256, 256, |y, x| {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        (l..=r).contains(&cx) && (t..=b).contains(&cy)
    });
    assert_eq!(m.count(), expected.count());
    assert_eq!(m, expected);
}

#[test]
fn apply_mask_cases() {
    let mut r = common::rng(3);
    let gt = common::random_image(&mut r, 8, 8);
    assert_eq!(apply_mask(&gt, &BinaryMask::zeros(8, 8), 0.0).unwrap(), gt);
    let black = apply_mask(&gt, &BinaryMask::ones(8, 8), 0.0).unwrap();
    assert!(black.data().iter().all(|&v| v == 0.0));
    let mask = common::random_mask(&mut r, 8, 8);
    let out = apply_mask(&gt, &mask, 0.25).unwrap();
    for y in 0..8 {
        for x in 0..8 {
            for c in 0..3 {
                let want = if mask.is_set(y, x) { 0.25 } else { gt.get(y, x, c) };
                assert_eq!(out.get(y, x, c).to_bits(), want.to_bits());
            }
        }
    }
}

#[test]
fn built_datasets_are_disjoint_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let spec = common::small_spec();
    let m = common::prepared_fixture(dir.path(), &spec);
    m.check_disjoint().unwrap();
    for split in Split::ALL {
        assert!(m.records(split).count() > 0, "{split} empty");
    }
    let eval_seqs: Vec<_> = m.records(Split::Eval).map(|r| r.sequence.clone()).collect();
    assert!(m
        .records(Split::Stage2)
        .all(|r| !eval_seqs.contains(&r.sequence) || r.subject_id != "person"));

    let reloaded = DatasetManifest::load(&dir.path().join("data")).unwrap();
    assert_eq!(reloaded.records, m.records);
    for split in Split::ALL {
        for s in reloaded.load_split(split).unwrap() {
            s.validate(reloaded.fill).unwrap();
        }
    }

    // same seed, fresh output directory: byte-identical masks
    let cfg = DatasetConfig {
        splits: deocc::cli::fixture_splits(spec.generic_identities),
        seed: spec.seed,
        ..DatasetConfig::default()
    };
    let again = build_dataset(
        &dir.path().join("raw"),
        &dir.path().join("again"),
        &cfg,
        &SidecarProvider,
    )
    .unwrap();
    assert_eq!(again.records, m.records);
    for r in &m.records {
        let a = fs::read(dir.path().join("data").join(&r.mask)).unwrap();
        let b = fs::read(dir.path().join("again").join(&r.mask)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn failure_rate_is_reported_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("raw/a/s0");
    fs::create_dir_all(&seq).unwrap();
    for i in 0..3 {
        Image::filled(64, 64, 0.5)
            .save_png(&seq.join(format!("{i:06}.png")))
            .unwrap();
    }
    let mut cfg = DatasetConfig::default();
    cfg.splits.insert("a/*".into(), vec![Split::Stage1]);
    match build_dataset(&dir.path().join("raw"), &dir.path().join("out"), &cfg, &SidecarProvider) {
        Err(Error::Dataset { report, .. }) => assert_eq!(report.len(), 3),
        other => panic!("expected a dataset error, got {other:?}"),
    }
}
