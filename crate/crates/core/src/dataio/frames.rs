//! Frame extraction from capture sequences.
//!
//! A sequence is either an animated GIF or a directory of still images whose
//! sorted file names give the temporal order.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use image::codecs::gif::GifDecoder;
use image::AnimationDecoder;

use crate::error::{Error, Result};
use crate::image::Image;

const STILL_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_still(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| STILL_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Sorted still-image files of a frame directory.
pub fn list_stills(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_still(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Every `stride`-th frame of the sequence at `path`, in temporal order.
pub fn extract_frames(path: &Path, stride: usize) -> Result<Vec<Image>> {
    Ok(extract_indexed_frames(path, stride)?
        .into_iter()
        .map(|(_, img)| img)
        .collect())
}

/// Like [`extract_frames`] but also returns each frame's index in the source.
pub fn extract_indexed_frames(path: &Path, stride: usize) -> Result<Vec<(usize, Image)>> {
    if stride == 0 {
        return Err(Error::Config("frame stride must be at least 1".into()));
    }
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let frames: Vec<(usize, Image)> = if path.is_dir() {
        list_stills(path)?
            .iter()
            .enumerate()
            .step_by(stride)
            .map(|(i, p)| Image::load(p).map(|img| (i, img)))
            .collect::<Result<_>>()?
    } else {
        let file = File::open(path).map_err(|e| decode_err(e.to_string()))?;
        let decoder = GifDecoder::new(BufReader::new(file)).map_err(|e| decode_err(e.to_string()))?;
        let mut out = Vec::new();
        for (i, frame) in decoder.into_frames().enumerate() {
            let frame = frame.map_err(|e| decode_err(format!("frame {i}: {e}")))?;
            if i % stride == 0 {
                let rgb = image::DynamicImage::ImageRgba8(frame.into_buffer()).to_rgb8();
                out.push((i, Image::from_rgb8(&rgb)));
            }
        }
        out
    };
    if frames.is_empty() {
        return Err(Error::EmptyInput(format!("no frames in {}", path.display())));
    }
    Ok(frames)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use image::codecs::gif::GifEncoder;
    use image::{Delay, Frame, Rgba, RgbaImage};

    /// Frame `i` carries its index as 4 binary blocks along the top row.
    fn indexed_frame(i: usize) -> RgbaImage {
        RgbaImage::from_fn(32, 16, |x, y| {
            let bit = (x / 8) as usize;
            let on = y < 8 && (i >> bit) & 1 == 1;
            if on {
                Rgba([255, 255, 255, 255])
            } else {
                Rgba([0, 0, 0, 255])
            }
        })
    }

    fn read_index(img: &Image) -> usize {
        (0..4)
            .map(|bit| ((img.get(4, bit * 8 + 4, 0) > 0.5) as usize) << bit)
            .sum()
    }

    pub(crate) fn write_gif(path: &Path, n: usize) {
        let file = File::create(path).unwrap();
        let mut enc = GifEncoder::new(file);
        let frames = (0..n).map(|i| Frame::from_parts(indexed_frame(i), 0, 0, Delay::from_numer_denom_ms(33, 1)));
        enc.encode_frames(frames).unwrap();
    }

    #[test]
    fn gif_stride_selects_embedded_indices() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.gif");
        write_gif(&p, 10);
        let frames = extract_frames(&p, 2).unwrap();
        let idx: Vec<usize> = frames.iter().map(read_index).collect();
        assert_eq!(idx, vec![0, 2, 4, 6, 8]);
        assert_eq!(extract_frames(&p, 1).unwrap().len(), 10);
    }

    #[test]
    fn directory_sequences_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..90 {
            Image::filled(4, 4, (i % 2) as f64)
                .save_png(&dir.path().join(format!("{i:06}.png")))
                .unwrap();
        }
        assert_eq!(extract_frames(dir.path(), 30).unwrap().len(), 3);
        assert_eq!(extract_frames(dir.path(), 1).unwrap().len(), 90);
        let idx: Vec<usize> = extract_indexed_frames(dir.path(), 30)
            .unwrap()
            .iter()
            .map(|f| f.0)
            .collect();
        assert_eq!(idx, vec![0, 30, 60]);
    }

    #[test]
    fn errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.gif");
        fs::write(&p, b"GIF89a not really").unwrap();
        match extract_frames(&p, 1) {
            Err(Error::Decode { path, .. }) => assert_eq!(path, p),
            other => panic!("expected decode error, got {other:?}"),
        }
        let empty = dir.path().join("empty");
        fs::create_dir(&empty).unwrap();
        assert!(matches!(extract_frames(&empty, 1), Err(Error::EmptyInput(_))));
        assert!(extract_frames(&empty, 0).is_err());
    }
}
