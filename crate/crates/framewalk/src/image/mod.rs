//! Pixel-space images and resampling.
//!
//! [`ImageBuffer`] is the universal currency between modules: H x W x C
//! row-major f32 pixels in [0, 1]. Every operation keeps values in range by
//! clamping explicitly. All resampling is bilinear with half-pixel-centered
//! sampling.

pub mod io;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{scalar, Element, Tensor};

/// H x W x C image with pixel values in [0, 1], row-major, C in {1, 3}.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Image(format!("degenerate dimensions {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Image(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Image(format!(
                "pixel count {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::Image("pixel values must be finite and within [0, 1]".into()));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
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

    /// (height, width) of the image.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn shorter_side(&self) -> usize {
        self.height.min(self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    /// Build from raw values, clamping into [0, 1]. NaN is an error.
    pub fn from_raw_clamped(height: usize, width: usize, channels: usize, data: &[f32]) -> Result<Self> {
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::Image("NaN pixel value".into()));
        }
        let clamped: Vec<f32> = data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(height, width, channels, clamped)
    }

    /// Tensor view with shape [H, W, C].
    pub fn to_tensor<E: Element>(&self) -> Tensor<E> {
        Tensor::new(
            vec![self.height, self.width, self.channels],
            self.data.iter().map(|&v| scalar(v as f64)).collect(),
        )
        .expect("image invariants imply a valid tensor")
    }

    /// Rebuild from a [H, W, C] tensor, clamping into [0, 1].
    pub fn from_tensor<E: Element>(t: &Tensor<E>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(Error::Image(format!("expected [H, W, C] tensor, got {:?}", s)));
        }
        let data: Vec<f32> = t.data().iter().map(|v| v.to_f64().unwrap() as f32).collect();
        Self::from_raw_clamped(s[0], s[1], s[2], &data)
    }

    /// Mean over all pixels and channels.
    pub fn mean(&self) -> f32 {
        self.data.iter().sum::<f32>() / self.data.len() as f32
    }
}

/// Bilinear resize with half-pixel-centered sampling. Same-size targets
/// return a bit-identical copy.
pub fn resize(img: &ImageBuffer, target_h: usize, target_w: usize) -> Result<ImageBuffer> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::Image("resize target must be positive".into()));
    }
    if (target_h, target_w) == (img.height, img.width) {
        return Ok(img.clone());
    }
    let (h, w, c) = (img.height, img.width, img.channels);
    let sy = h as f32 / target_h as f32;
    let sx = w as f32 / target_w as f32;
    let mut out = vec![0.0f32; target_h * target_w * c];
    for dy in 0..target_h {
        let fy = ((dy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for dx in 0..target_w {
            let fx = ((dx as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for ch in 0..c {
                let v00 = img.get(y0, x0, ch);
                let v01 = img.get(y0, x1, ch);
                let v10 = img.get(y1, x0, ch);
                let v11 = img.get(y1, x1, ch);
                let top = v00 + wx * (v01 - v00);
                let bot = v10 + wx * (v11 - v10);
                out[(dy * target_w + dx) * c + ch] = (top + wy * (bot - top)).clamp(0.0, 1.0);
            }
        }
    }
    ImageBuffer::new(target_h, target_w, c, out)
}

/// Resize so the shorter side equals `r`, preserving aspect ratio
/// (other side rounded to nearest, at least 1).
pub fn resize_shorter_side(img: &ImageBuffer, r: usize) -> Result<ImageBuffer> {
    if r == 0 {
        return Err(Error::Image("target side must be positive".into()));
    }
    let (h, w) = img.dims();
    let (th, tw) = if h <= w {
        (r, (((w as f64) * r as f64 / h as f64).round() as usize).max(1))
    } else {
        ((((h as f64) * r as f64 / w as f64).round() as usize).max(1), r)
    };
    resize(img, th, tw)
}

/// Resolution-band degradation: aspect-preserving downsample so the shorter
/// side equals `r`, then bilinear upsample back to the original dimensions.
pub fn down_up(img: &ImageBuffer, r: usize) -> Result<ImageBuffer> {
    if r == 0 || r > img.shorter_side() {
        return Err(Error::Image(format!(
            "down_up target {} must be in [1, {}]",
            r,
            img.shorter_side()
        )));
    }
    let small = resize_shorter_side(img, r)?;
    resize(&small, img.height, img.width)
}

/// Seeded size x size crop. Offsets are drawn from `rng` as
/// `row = gen_range(0..=H-size)` then `col = gen_range(0..=W-size)`.
pub fn random_crop(img: &ImageBuffer, size: usize, rng: &mut ChaCha8Rng) -> Result<ImageBuffer> {
    let (row, col) = draw_crop_offsets(img.dims(), size, rng)?;
    crop(img, row, col, size, size)
}

/// Offset-draw used by [`random_crop`]; exposed so paired images can share
/// one draw.
pub fn draw_crop_offsets(dims: (usize, usize), size: usize, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
    let (h, w) = dims;
    if size == 0 || size > h || size > w {
        return Err(Error::Image(format!("crop size {} exceeds image {}x{}", size, h, w)));
    }
    let row = rng.gen_range(0..=h - size);
    let col = rng.gen_range(0..=w - size);
    Ok((row, col))
}

pub fn crop(img: &ImageBuffer, row: usize, col: usize, height: usize, width: usize) -> Result<ImageBuffer> {
    if row + height > img.height || col + width > img.width {
        return Err(Error::Image(format!(
            "crop {}x{}+{}+{} exceeds image {}x{}",
            height, width, row, col, img.height, img.width
        )));
    }
    let c = img.channels;
    let mut out = Vec::with_capacity(height * width * c);
    for y in row..row + height {
        let start = (y * img.width + col) * c;
        out.extend_from_slice(&img.data[start..start + width * c]);
    }
    ImageBuffer::new(height, width, c, out)
}
