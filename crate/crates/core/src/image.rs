//! Raster types shared by every stage of the pipeline.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Side length of every model-facing image.
pub const FACE_SIZE: usize = 256;

/// An RGB raster with interleaved (H, W, 3) values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(
                format!("{height}x{width}x3 = {} values", height * width * 3),
                data.len(),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Geometry(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Self {
            height,
            width,
            data: vec![v.clamp(0.0, 1.0); height * width * 3],
        }
    }

    /// Builds an image from a per-pixel function; outputs are clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to raw values. Callers must keep them inside `[0, 1]`.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v.clamp(0.0, 1.0);
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }

    pub fn ensure_face_size(&self) -> Result<()> {
        if self.dims() != (FACE_SIZE, FACE_SIZE) {
            return Err(Error::shape(
                format!("{FACE_SIZE}x{FACE_SIZE}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }

    /// Rounds every value to the nearest 8-bit level, as a lossless PNG would store it.
    pub fn quantized(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| (v * 255.0).round() / 255.0).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |y, x| self.pixel(y, self.width - 1 - x))
    }

    /// Bilinear sample at continuous pixel-centre coordinates, clamped to the border.
    pub fn sample_bilinear(&self, fy: f64, fx: f64) -> [f64; 3] {
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.get(y0, x0, c) * (1.0 - tx) + self.get(y0, x1, c) * tx;
            let bot = self.get(y1, x0, c) * (1.0 - tx) + self.get(y1, x1, c) * tx;
            *o = top * (1.0 - ty) + bot * ty;
        }
        out
    }

    /// Channel-major tensor with values affinely mapped from `[0, 1]` to `[-1, 1]`.
    pub fn to_signed_tensor(&self) -> Tensor {
        let p = self.height * self.width;
        let mut t = Tensor::zeros(3, self.height, self.width);
        for i in 0..p {
            for c in 0..3 {
                t.data[c * p + i] = (2.0 * self.data[i * 3 + c] - 1.0) as f32;
            }
        }
        t
    }

    /// Inverse of [`Image::to_signed_tensor`]; values are clamped into range.
    pub fn from_signed_tensor(t: &Tensor) -> Result<Image> {
        if t.c != 3 {
            return Err(Error::shape("3 channels", t.c));
        }
        let p = t.plane();
        let mut data = vec![0.0; p * 3];
        for i in 0..p {
            for c in 0..3 {
                data[i * 3 + c] = ((t.data[c * p + i] as f64 + 1.0) * 0.5).clamp(0.0, 1.0);
            }
        }
        Ok(Image {
            height: t.h,
            width: t.w,
            data,
        })
    }

    pub fn to_rgb8(&self) -> RgbImage {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            Rgb(p.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Image {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Image {
            height: h,
            width: w,
            data,
        }
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Image::from_rgb8(&img.to_rgb8()))
    }

    /// Writes an 8-bit lossless PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
    }
}

/// Single-channel {0, 1} raster; 1 marks occluded pixels to be inpainted.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x) as u8);
            }
        }
        Self { height, width, bits }
    }

    /// Accepts only exact 0.0 / 1.0 values.
    pub fn from_values(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(height * width, values.len()));
        }
        let bits = values
            .iter()
            .map(|&v| match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                v => Err(Error::Geometry(format!("mask value {v} is not binary"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(Self { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn is_set(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    #[inline]
    pub fn value(&self, y: usize, x: usize) -> f64 {
        self.bits[y * self.width + x] as f64
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.width + x] = on as u8;
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / (self.height * self.width) as f64
    }

    pub fn ensure_matches(&self, img: &Image) -> Result<()> {
        if self.dims() != img.dims() {
            return Err(Error::shape(
                format!("mask {}x{}", img.height(), img.width()),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }

    pub fn flip_horizontal(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |y, x| self.is_set(y, self.width - 1 - x))
    }

    /// Number of 4-connected components of set pixels.
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.bits.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.bits.len() {
            if self.bits[start] == 0 || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (y, x) = (i / self.width, i % self.width);
                let mut visit = |j: usize| {
                    if self.bits[j] != 0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if y > 0 {
                    visit(i - self.width);
                }
                if y + 1 < self.height {
                    visit(i + self.width);
                }
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < self.width {
                    visit(i + 1);
                }
            }
        }
        count
    }

    /// Channel-major (1, H, W) tensor of 0/1 values.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            1,
            self.height,
            self.width,
            self.bits.iter().map(|&b| b as f32).collect(),
        )
    }

    pub fn to_gray8(&self) -> GrayImage {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.is_set(y as usize, x as usize) { 255 } else { 0 }])
        })
    }

    /// Loads a mask image; any pixel at or above mid-gray counts as occluded.
    pub fn load(path: &Path) -> Result<BinaryMask> {
        let img = image::open(path)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?
            .to_luma8();
        Ok(BinaryMask::from_fn(
            img.height() as usize,
            img.width() as usize,
            |y, x| img.get_pixel(x as u32, y as u32).0[0] >= 128,
        ))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
    }
}
