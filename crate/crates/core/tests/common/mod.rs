#![allow(dead_code)]

use lxl_core::explain::{BlackBoxModel, LatentModel};
use lxl_core::{Image, Result};

pub const TOY_EXTENT: usize = 4;

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// Two-dimensional latent space. Decoding writes sigmoid(z0) and sigmoid(z1) into the first two
/// pixels; validity falls off with the code's norm.
pub struct ToyLatent {
    pub width: f32,
    pub constant_score: Option<f32>,
}

impl Default for ToyLatent {
    fn default() -> Self {
        ToyLatent {
            width: 2.0,
            constant_score: None,
        }
    }
}

impl LatentModel for ToyLatent {
    fn latent_dim(&self) -> usize {
        2
    }

    fn encode(&self, image: &Image) -> Result<Vec<f32>> {
        let logit = |p: f32| {
            let p = p.clamp(1e-4, 1.0 - 1e-4);
            (p / (1.0 - p)).ln()
        };
        Ok(vec![logit(image.get(0, 0, 0)), logit(image.get(0, 1, 0))])
    }

    fn decode_batch(&self, zs: &[&[f32]]) -> Result<Vec<Image>> {
        zs.iter()
            .map(|z| {
                let mut img = Image::filled(TOY_EXTENT, TOY_EXTENT, 0.5);
                img.set(0, 0, 0, sigmoid(z[0]));
                img.set(0, 1, 0, sigmoid(z[1]));
                Ok(img)
            })
            .collect()
    }

    fn discriminate_batch(&self, zs: &[&[f32]]) -> Result<Vec<f32>> {
        Ok(zs
            .iter()
            .map(|z| {
                self.constant_score.unwrap_or_else(|| {
                    let r2: f32 = z.iter().map(|v| v * v).sum();
                    (-r2 / (2.0 * self.width * self.width)).exp()
                })
            })
            .collect())
    }
}

/// Class 0 when the first pixel is above one half, class 1 otherwise; the score of the winning
/// class grows with the margin.
pub struct ToyBlackBox;

impl BlackBoxModel for ToyBlackBox {
    fn classify_batch(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        Ok(images
            .iter()
            .map(|img| {
                let v = img.get(0, 0, 0);
                let mut s = vec![0.0; 8];
                s[0] = v;
                s[1] = 1.0 - v;
                s
            })
            .collect())
    }
}

/// Image whose toy encoding is `z`.
pub fn toy_image(z: [f32; 2]) -> Image {
    ToyLatent::default().decode_batch(&[&z[..]]).unwrap().remove(0)
}
