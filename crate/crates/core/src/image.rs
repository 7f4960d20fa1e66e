//! RGB images with pixels in `[0,1]`, stored height × width × channel.

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{LxlError, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(LxlError::shape("image", "non-zero extent", (height, width)));
        }
        if data.len() != height * width * CHANNELS {
            return Err(LxlError::shape("image", height * width * CHANNELS, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(LxlError::Validation(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Image { height, width, data })
    }

    /// Builds an image, clamping every value into `[0,1]` (NaN becomes 0).
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Image::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Image {
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); height * width * CHANNELS],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * CHANNELS + c] = v.clamp(0.0, 1.0);
    }

    /// Bilinear sample at continuous coordinates (pixel centres at integer + 0.5), with edge clamping.
    pub fn sample_clamped(&self, y: f64, x: f64, c: usize) -> f32 {
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        self.lerp_at(fy, fx, c)
    }

    fn lerp_at(&self, fy: f64, fx: f64, c: usize) -> f32 {
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let top = self.get(y0, x0, c) as f64 * (1.0 - tx) + self.get(y0, x1, c) as f64 * tx;
        let bottom = self.get(y1, x0, c) as f64 * (1.0 - tx) + self.get(y1, x1, c) as f64 * tx;
        (top * (1.0 - ty) + bottom * ty) as f32
    }

    /// Bilinear resize using pixel-centre alignment.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(LxlError::shape("resize", "non-zero extent", (height, width)));
        }
        if (height, width) == self.extent() {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(self.sample_clamped((y as f64 + 0.5) * sy, (x as f64 + 0.5) * sx, c));
                }
            }
        }
        Image::from_clamped(height, width, data)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(LxlError::shape(
                "crop",
                format!("window inside {}x{}", self.height, self.width),
                (top, left, height, width),
            ));
        }
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in top..top + height {
            let row = (y * self.width + left) * CHANNELS;
            data.extend_from_slice(&self.data[row..row + width * CHANNELS]);
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    /// 2×2 box downsampling; extents must be even.
    pub fn downsample2(&self) -> Result<Image> {
        if !self.height.is_multiple_of(2) || !self.width.is_multiple_of(2) {
            return Err(LxlError::shape("downsample2", "even extents", self.extent()));
        }
        let (h, w) = (self.height / 2, self.width / 2);
        let mut data = vec![0.0f32; h * w * CHANNELS];
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..CHANNELS {
                    data[((y / 2) * w + x / 2) * CHANNELS + c] += 0.25 * self.get(y, x, c);
                }
            }
        }
        Image::from_clamped(h, w, data)
    }

    /// Repeated 2×2 box downsampling until the extent equals `target`.
    pub fn downsample_to(&self, target: usize) -> Result<Image> {
        let mut img = self.clone();
        while img.height > target {
            img = img.downsample2()?;
        }
        if img.extent() != (target, target) {
            return Err(LxlError::shape("downsample_to", (target, target), self.extent()));
        }
        Ok(img)
    }

    /// Stacks same-extent images into an `[N, 3, H, W]` tensor.
    pub fn batch_to_tensor(images: &[&Image]) -> Result<Tensor<f32>> {
        let first = images.first().ok_or_else(|| LxlError::Empty("image batch".into()))?;
        let (h, w) = first.extent();
        let plane = h * w;
        let mut data = vec![0.0f32; images.len() * CHANNELS * plane];
        for (n, img) in images.iter().enumerate() {
            if img.extent() != (h, w) {
                return Err(LxlError::shape("image batch", (h, w), img.extent()));
            }
            let base = n * CHANNELS * plane;
            for (p, px) in img.data.chunks_exact(CHANNELS).enumerate() {
                for c in 0..CHANNELS {
                    data[base + c * plane + p] = px[c];
                }
            }
        }
        Tensor::new(vec![images.len(), CHANNELS, h, w], data)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Image::batch_to_tensor(&[self]).expect("single image")
    }

    /// Extracts sample `n` of an `[N, 3, H, W]` tensor, clamping into `[0,1]`.
    pub fn from_tensor(t: &Tensor<f32>, n: usize) -> Result<Image> {
        let s = t.shape();
        if s.len() != 4 || s[1] != CHANNELS || n >= s[0] {
            return Err(LxlError::shape("image tensor", "[N, 3, H, W]", s));
        }
        let (h, w) = (s[2], s[3]);
        let plane = h * w;
        let base = n * CHANNELS * plane;
        let mut data = vec![0.0f32; plane * CHANNELS];
        for p in 0..plane {
            for c in 0..CHANNELS {
                data[p * CHANNELS + c] = t.data()[base + c * plane + p];
            }
        }
        Image::from_clamped(h, w, data)
    }

    pub fn squared_error(&self, other: &Image) -> Result<f64> {
        if self.extent() != other.extent() {
            return Err(LxlError::shape("image comparison", self.extent(), other.extent()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum())
    }

    pub fn l2_distance(&self, other: &Image) -> Result<f64> {
        self.squared_error(other).map(f64::sqrt)
    }

    /// 8-bit RGB PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        encode_png_rgb(self.width as u32, self.height as u32, &bytes)
    }

    pub fn to_png_base64(&self) -> Result<String> {
        Ok(base64::engine::general_purpose::STANDARD.encode(self.to_png()?))
    }

    pub fn from_png(bytes: &[u8]) -> Result<Image> {
        let decoder = png::Decoder::new(bytes);
        let mut reader = decoder.read_info().map_err(|e| LxlError::Format(format!("png: {e}")))?;
        let mut buf = vec![0u8; reader.output_buffer_size()];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| LxlError::Format(format!("png: {e}")))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(LxlError::Format("only 8-bit PNG is supported".into()));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let src = &buf[..info.buffer_size()];
        let stride = match info.color_type {
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Grayscale => 1,
            other => return Err(LxlError::Format(format!("unsupported PNG colour type {other:?}"))),
        };
        let mut data = Vec::with_capacity(w * h * CHANNELS);
        for px in src.chunks_exact(stride) {
            for c in 0..CHANNELS {
                let v = if stride == 1 { px[0] } else { px[c] };
                data.push(v as f32 / 255.0);
            }
        }
        Image::new(h, w, data)
    }
}

pub(crate) fn encode_png_rgb(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| LxlError::Format(format!("png: {e}")))?;
        writer
            .write_image_data(rgb)
            .map_err(|e| LxlError::Format(format!("png: {e}")))?;
    }
    Ok(out)
}
