//! Deterministic image preprocessing into backbone-ready tensors.
//!
//! All operations are pure functions over [`ImageTensor`] (channel-last `f32`).
//! Interpolation is bilinear with half-pixel centers and no antialiasing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Colorspace, ResizePolicy, ViewSpec};
use crate::{Error, Result};

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Default fill for pad-then-scale: white, i.e. histology slide background.
pub const DEFAULT_PAD_FILL: f32 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Image(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Image(format!(
                "data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Image(format!("non-finite pixel value {v}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels]).expect("valid filled image")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel-first copy (`[C, H, W]`), the layout most exported graphs expect.
    pub fn to_chw(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.data.len()];
        let plane = self.height * self.width;
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelNormalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl PixelNormalization {
    /// ImageNet statistics, the contract of nearly every public backbone.
    pub const IMAGENET: PixelNormalization = PixelNormalization {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub const IDENTITY: PixelNormalization = PixelNormalization {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Config(format!(
                "normalization std must be positive, got {:?}",
                self.std
            )));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("normalization mean must be finite".into()));
        }
        Ok(())
    }
}

/// Decodes an 8-bit PNG/JPEG/TIFF into a 3-channel tensor in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    from_dynamic(img)
}

/// Same as [`load_image`] for an in-memory encoded image.
pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))?;
    from_dynamic(img)
}

fn from_dynamic(img: image::DynamicImage) -> Result<ImageTensor> {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, 3, data)
}

/// Quantizes a `[0, 1]` tensor to 8 bits and writes it as PNG.
pub fn save_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    let rgb = match img.channels() {
        3 => img.clone(),
        _ => ImageTensor::new(
            img.height(),
            img.width(),
            3,
            img.data().iter().flat_map(|&v| [v, v, v]).collect(),
        )?,
    };
    let raw: Vec<u8> = rgb
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| Error::Image("buffer size mismatch".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

/// BT.601 luma replicated into all three channels.
pub fn to_grayscale(img: &ImageTensor) -> Result<ImageTensor> {
    if img.channels != 3 {
        return Err(Error::Image(format!(
            "grayscale conversion needs 3 channels, got {}",
            img.channels
        )));
    }
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(3) {
        let luma = LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2];
        data.extend_from_slice(&[luma, luma, luma]);
    }
    Ok(ImageTensor { data, ..*img })
}

/// Bilinear resize to `target x target`.
pub fn resize(img: &ImageTensor, target: usize) -> Result<ImageTensor> {
    resize_to(img, target, target)
}

/// Bilinear resize with half-pixel centers: output pixel `d` samples source
/// coordinate `(d + 0.5) * in / out - 0.5`, clamped to the image.
pub fn resize_to(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Image("resize target must be positive".into()));
    }
    if img.height == 0 || img.width == 0 {
        return Err(Error::Image("cannot resize an empty image".into()));
    }
    let ys = sample_axis(img.height, out_h);
    let xs = sample_axis(img.width, out_w);
    let ch = img.channels;
    let mut data = Vec::with_capacity(out_h * out_w * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let top = lerp(img.get(y0, x0, c), img.get(y0, x1, c), fx);
                let bottom = lerp(img.get(y1, x0, c), img.get(y1, x1, c), fx);
                data.push(lerp(top, bottom, fy));
            }
        }
    }
    Ok(ImageTensor {
        height: out_h,
        width: out_w,
        channels: ch,
        data,
    })
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a * (1.0 - t) + b * t
}

/// For each output index: (lower source index, upper source index, weight of upper).
fn sample_axis(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (s - lo as f64) as f32)
        })
        .collect()
}

/// Integer bilinear upscale by `floor(target / source)` followed by centered constant
/// padding to `target x target`. An odd padding remainder goes right/bottom.
pub fn pad_then_scale(img: &ImageTensor, target: usize, fill: f32) -> Result<ImageTensor> {
    if img.height != img.width {
        return Err(Error::Image(format!(
            "pad_then_scale needs a square source, got {}x{}",
            img.height, img.width
        )));
    }
    if target == 0 {
        return Err(Error::Image("target size must be positive".into()));
    }
    let source = img.height;
    if source > target {
        return Err(Error::Image(format!("source size {source} exceeds target {target}")));
    }
    let factor = target / source;
    let scaled = if factor == 1 {
        img.clone()
    } else {
        resize(img, source * factor)?
    };
    let size = scaled.height;
    let pad = target - size;
    let before = pad / 2;
    let ch = img.channels;
    let mut out = ImageTensor::filled(target, target, ch, fill);
    for y in 0..size {
        let src_row = &scaled.data[y * size * ch..(y + 1) * size * ch];
        let start = ((y + before) * target + before) * ch;
        out.data[start..start + size * ch].copy_from_slice(src_row);
    }
    Ok(out)
}

/// `(x - mean[c]) / std[c]` per channel.
pub fn normalize_pixels(img: &ImageTensor, norm: &PixelNormalization) -> Result<ImageTensor> {
    if img.channels != 3 {
        return Err(Error::Image(format!(
            "pixel normalization needs 3 channels, got {}",
            img.channels
        )));
    }
    norm.validate()?;
    let data = img
        .data
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| (px[c] - norm.mean[c]) / norm.std[c]))
        .collect();
    Ok(ImageTensor { data, ..*img })
}

/// Full per-view pipeline: colorspace, geometry, then pixel normalization.
pub fn prepare_view(
    img: &ImageTensor,
    view: &ViewSpec,
    norm: &PixelNormalization,
    pad_fill: f32,
) -> Result<ImageTensor> {
    let img = match view.colorspace {
        Colorspace::Rgb => img.clone(),
        Colorspace::Grayscale => to_grayscale(img)?,
    };
    let target = view.target_size as usize;
    let img = match view.resize_policy {
        ResizePolicy::Resize => resize(&img, target)?,
        ResizePolicy::PadThenScale => pad_then_scale(&img, target, pad_fill)?,
    };
    normalize_pixels(&img, norm)
}
