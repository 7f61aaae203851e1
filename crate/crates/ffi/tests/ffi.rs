use std::ffi::{CStr, CString};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use deocc::image::{BinaryMask, Image};
use deocc::model::ModelConfig;
use deocc::training::{reconstruct, save_checkpoint, Stage, TrainConfig, TrainState};
use deocc_ffi::*;

fn tiny_checkpoint(dir: &Path, stage: Stage) -> PathBuf {
    let model = ModelConfig {
        base_width: 2,
        ..ModelConfig::default()
    };
    let mut state = TrainState::new(&model, &TrainConfig::new(stage)).unwrap();
    state.step = 7;
    let p = dir.join(format!("{stage}.ckpt"));
    save_checkpoint(&state, None, &p).unwrap();
    p
}

fn load(path: &Path) -> (DeoccStatus, *mut DeoccModel) {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    let s = unsafe { deocc_model_load(c.as_ptr(), &mut m) };
    (s, m)
}

fn pattern(seed: u32) -> Vec<u8> {
    (0..256 * 256 * 3u32)
        .map(|i| (i.wrapping_mul(2654435761).wrapping_add(seed) >> 24) as u8)
        .collect()
}

#[test]
fn load_inspect_and_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_checkpoint(dir.path(), Stage::Stage2);
    let (s, m) = load(&path);
    assert_eq!(s, DeoccStatus::Ok);
    assert!(!m.is_null());

    let mut info = std::mem::MaybeUninit::<DeoccModelInfo>::uninit();
    assert_eq!(unsafe { deocc_model_info(m, info.as_mut_ptr()) }, DeoccStatus::Ok);
    let info = unsafe { info.assume_init() };
    assert_eq!((info.resolution, info.base_width, info.step), (256, 2, 7));
    assert_eq!(info.stage, DeoccStage::Stage2);
    assert!(info.attention);

    let rgb = pattern(1);
    let mut out = vec![0u8; rgb.len()];
    let zeros = vec![0u8; 256 * 256];
    let s = unsafe { deocc_reconstruct(m, rgb.as_ptr(), zeros.as_ptr(), 256, 256, true, out.as_mut_ptr()) };
    assert_eq!(s, DeoccStatus::Ok);
    assert_eq!(out, rgb);

    // the boundary returns exactly what the library computes
    let hole: Vec<u8> = (0..256 * 256).map(|i| ((i / 256) / 64 == 1) as u8 * 255).collect();
    let s = unsafe { deocc_reconstruct(m, rgb.as_ptr(), hole.as_ptr(), 256, 256, true, out.as_mut_ptr()) };
    assert_eq!(s, DeoccStatus::Ok);
    let state = deocc::training::load_checkpoint(&path).unwrap();
    let occ = Image::new(256, 256, rgb.iter().map(|&v| v as f64 / 255.0).collect()).unwrap();
    let mask = BinaryMask::from_fn(256, 256, |y, _| y / 64 == 1);
    let want = reconstruct(&state.generator, &occ, &mask, true).unwrap().to_rgb8();
    assert_eq!(out, want.into_raw());
    assert_eq!(&out[..64 * 256 * 3], &rgb[..64 * 256 * 3]);

    let s = unsafe { deocc_reconstruct(m, rgb.as_ptr(), zeros.as_ptr(), 128, 128, true, out.as_mut_ptr()) };
    assert_eq!(s, DeoccStatus::InvalidArgument);
    let msg = unsafe { CStr::from_ptr(deocc_last_error_message()) }
        .to_str()
        .unwrap()
        .to_owned();
    assert!(msg.contains("256x256"), "{msg}");
    let s = unsafe {
        deocc_reconstruct(
            ptr::null(),
            rgb.as_ptr(),
            zeros.as_ptr(),
            256,
            256,
            true,
            out.as_mut_ptr(),
        )
    };
    assert_eq!(s, DeoccStatus::NullArgument);

    unsafe { deocc_model_free(m) };
}

#[test]
fn earlier_stage_models_skip_attention() {
    let dir = tempfile::tempdir().unwrap();
    let (s, m) = load(&tiny_checkpoint(dir.path(), Stage::Stage1));
    assert_eq!(s, DeoccStatus::Ok);
    let mut info = std::mem::MaybeUninit::<DeoccModelInfo>::uninit();
    unsafe { deocc_model_info(m, info.as_mut_ptr()) };
    let info = unsafe { info.assume_init() };
    assert_eq!(info.stage, DeoccStage::Stage1);
    assert!(!info.attention);

    let rgb = pattern(2);
    let hole = vec![1u8; 256 * 256];
    let (mut a, mut b) = (vec![0u8; rgb.len()], vec![0u8; rgb.len()]);
    unsafe {
        deocc_reconstruct(m, rgb.as_ptr(), hole.as_ptr(), 256, 256, true, a.as_mut_ptr());
        deocc_reconstruct(m, rgb.as_ptr(), hole.as_ptr(), 256, 256, false, b.as_mut_ptr());
        deocc_model_free(m);
    }
    assert_eq!(a, b);
}

#[test]
fn damaged_checkpoints_report_checkpoint_or_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_checkpoint(dir.path(), Stage::Pretrain);
    let bytes = fs::read(&path).unwrap();

    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 1;
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, &flipped).unwrap();
    let (s, m) = load(&bad);
    assert_eq!(s, DeoccStatus::Checkpoint);
    assert!(m.is_null());

    let mut newer = bytes;
    newer[8] = newer[8].wrapping_add(1);
    fs::write(&bad, &newer).unwrap();
    assert_eq!(load(&bad).0, DeoccStatus::Config);

    let s = unsafe { deocc_model_load(ptr::null(), &mut ptr::null_mut()) };
    assert_eq!(s, DeoccStatus::NullArgument);
}

#[test]
fn header_declares_the_exports_and_parses_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = fs::read_to_string(dir.join("include/deocc.h")).unwrap();
    for name in [
        "deocc_version",
        "deocc_last_error_message",
        "deocc_status_name",
        "deocc_model_load",
        "deocc_model_free",
        "deocc_model_info",
        "deocc_reconstruct",
        "deocc_ssim",
        "deocc_psnr",
        "typedef struct DeoccModel DeoccModel",
        "DEOCC_STATUS_STAGE_ORDER = 8",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }

    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(cc.status.success());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    fs::write(
        &src,
        "#include \"deocc.h\"\n\
         int main(void) {\n\
           DeoccModel *m = NULL;\n\
           DeoccStatus s = deocc_model_load(\"x.ckpt\", &m);\n\
           DeoccModelInfo info;\n\
           if (s == DEOCC_STATUS_OK) { deocc_model_info(m, &info); deocc_model_free(m); }\n\
           return s == DEOCC_STATUS_OK ? 0 : (int)s;\n\
         }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
