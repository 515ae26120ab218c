//! Image normalization and resizing.
//!
//! The fixed preprocessing chain is unit-range conversion, then per-channel
//! mean subtraction, then bilinear resizing to the backbone's input size.
//! Every operation returns a new buffer; inputs are never mutated.

use std::path::Path;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar RGB image with real-valued pixels, laid out channel-major
/// (C, H, W). Channel count is always 3.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    pub fn zeros(height: usize, width: usize) -> ImageBuffer {
        ImageBuffer {
            height,
            width,
            data: vec![0.0; Self::CHANNELS * height * width],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> ImageBuffer {
        let mut buffer = ImageBuffer::zeros(height, width);
        for c in 0..Self::CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    let v = f(c, y, x);
                    buffer.set(c, y, x, v);
                }
            }
        }
        buffer
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Apply `f` to every value, returning a new buffer.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        ImageBuffer {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Per-channel RGB means subtracted after unit-range conversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub channel_means: [f64; 3],
}

impl NormalizationParams {
    pub fn new(channel_means: [f64; 3]) -> Result<NormalizationParams> {
        for (i, mean) in channel_means.iter().enumerate() {
            if !(0.0..=1.0).contains(mean) {
                return Err(Error::Dimension(format!(
                    "channel mean {i} is {mean}, must lie in [0, 1]"
                )));
            }
        }
        Ok(NormalizationParams { channel_means })
    }

    /// Zero means: subtraction is the identity.
    pub fn zero() -> NormalizationParams {
        NormalizationParams {
            channel_means: [0.0; 3],
        }
    }
}

/// Convert an 8-bit RGB image to a unit-range buffer: value = byte / 255.
pub fn to_unit_range(image: &DynamicImage) -> Result<ImageBuffer> {
    let rgb = match image {
        DynamicImage::ImageRgb8(rgb) => rgb,
        other => return Err(Error::ChannelCount(format!("{:?}", other.color()))),
    };
    let (width, height) = rgb.dimensions();
    let mut buffer = ImageBuffer::zeros(height as usize, width as usize);
    for (x, y, pixel) in rgb.enumerate_pixels() {
        for c in 0..3 {
            buffer.set(c, y as usize, x as usize, f64::from(pixel[c]) / 255.0);
        }
    }
    Ok(buffer)
}

/// Open and decode an image file into a unit-range buffer.
pub fn load_unit_image(path: &Path) -> Result<ImageBuffer> {
    let decoded = image::open(path).map_err(|e| Error::ImageRead {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    to_unit_range(&decoded)
}

/// Subtract the per-channel mean from every value.
pub fn subtract_mean(image: &ImageBuffer, params: &NormalizationParams) -> ImageBuffer {
    let mut out = image.clone();
    for c in 0..ImageBuffer::CHANNELS {
        let mean = params.channel_means[c];
        for y in 0..image.height() {
            for x in 0..image.width() {
                out.set(c, y, x, image.get(c, y, x) - mean);
            }
        }
    }
    out
}

/// Bilinear resize with the pixel-center convention, so resizing an image to
/// its own size reproduces it exactly.
pub fn resize(image: &ImageBuffer, target_height: usize, target_width: usize) -> Result<ImageBuffer> {
    if target_height == 0 || target_width == 0 {
        return Err(Error::Dimension(format!(
            "resize target {target_height}x{target_width} must be at least 1x1"
        )));
    }
    let (h, w) = (image.height(), image.width());
    let scale_y = h as f64 / target_height as f64;
    let scale_x = w as f64 / target_width as f64;
    let mut out = ImageBuffer::zeros(target_height, target_width);
    for y in 0..target_height {
        let sy = ((y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..target_width {
            let sx = ((x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for c in 0..ImageBuffer::CHANNELS {
                let top = (1.0 - fx) * image.get(c, y0, x0) + fx * image.get(c, y0, x1);
                let bottom = (1.0 - fx) * image.get(c, y1, x0) + fx * image.get(c, y1, x1);
                out.set(c, y, x, (1.0 - fy) * top + fy * bottom);
            }
        }
    }
    Ok(out)
}
