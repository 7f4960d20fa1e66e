use rand::Rng;

use crate::error::{LxlError, Result};
use crate::image::{Image, CHANNELS};

/// Shorter edge after evaluation rescaling; the centre crop is [`EVAL_CROP`]. The ratio matches
/// the usual 256 → 224 protocol.
pub const EVAL_SHORT_EDGE: usize = 32;
pub const EVAL_CROP: usize = 28;

pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const MAX_ANGLE_DEG: f64 = 25.0;

/// A similarity transform: uniform scale, rotation about the centre, and a crop offset in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    pub angle_deg: f64,
    pub shift: (f64, f64),
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        scale: 1.0,
        angle_deg: 0.0,
        shift: (0.0, 0.0),
    };

    pub fn sample<R: Rng + ?Sized>(extent: usize, rng: &mut R) -> Self {
        let scale = rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        let angle_deg = rng.gen_range(-MAX_ANGLE_DEG..=MAX_ANGLE_DEG);
        // Crop window slack grows with the rescale, plus one pixel of translation jitter.
        let slack = (scale - 1.0).abs() * extent as f64 / 2.0 + 1.0;
        let shift = (rng.gen_range(-slack..=slack), rng.gen_range(-slack..=slack));
        AugmentParams { scale, angle_deg, shift }
    }
}

/// Random rescale, rotation and crop; output extent equals input extent.
pub fn augment<R: Rng + ?Sized>(image: &Image, rng: &mut R) -> Image {
    let params = AugmentParams::sample(image.height().min(image.width()), rng);
    augment_with(image, &params)
}

fn reflect(f: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let period = 2.0 * (n - 1) as f64;
    let m = f.rem_euclid(period);
    if m > (n - 1) as f64 {
        period - m
    } else {
        m
    }
}

/// Applies a fixed similarity transform with reflection padding and bilinear sampling.
pub fn augment_with(image: &Image, p: &AugmentParams) -> Image {
    let (h, w) = image.extent();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (sin, cos) = p.angle_deg.to_radians().sin_cos();
    let mut data = Vec::with_capacity(h * w * CHANNELS);
    for y in 0..h {
        for x in 0..w {
            // Output pixel centre relative to the image centre, minus the crop offset.
            let oy = (y as f64 + 0.5 - cy - p.shift.0) / p.scale;
            let ox = (x as f64 + 0.5 - cx - p.shift.1) / p.scale;
            // Inverse rotation back into the source.
            let sy = cos * oy - sin * ox + cy - 0.5;
            let sx = sin * oy + cos * ox + cx - 0.5;
            let (fy, fx) = (reflect(sy, h), reflect(sx, w));
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            for c in 0..CHANNELS {
                let top = image.get(y0, x0, c) as f64 * (1.0 - tx) + image.get(y0, x1, c) as f64 * tx;
                let bot = image.get(y1, x0, c) as f64 * (1.0 - tx) + image.get(y1, x1, c) as f64 * tx;
                data.push(((top * (1.0 - ty) + bot * ty) as f32).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(h, w, data).expect("convex combination of valid pixels")
}

/// Rescales the shorter edge to [`EVAL_SHORT_EDGE`] (bilinear) and centre-crops
/// [`EVAL_CROP`]×[`EVAL_CROP`].
pub fn preprocess_eval(image: &Image) -> Result<Image> {
    let (h, w) = image.extent();
    if h < 2 || w < 2 {
        return Err(LxlError::shape("preprocess_eval", "extent ≥ 2×2", (h, w)));
    }
    let short = h.min(w);
    let resized = if short == EVAL_SHORT_EDGE {
        image.clone()
    } else {
        let f = EVAL_SHORT_EDGE as f64 / short as f64;
        let nh = ((h as f64 * f).round() as usize).max(EVAL_SHORT_EDGE);
        let nw = ((w as f64 * f).round() as usize).max(EVAL_SHORT_EDGE);
        image.resize_bilinear(nh, nw)?
    };
    let (rh, rw) = resized.extent();
    resized.crop((rh - EVAL_CROP) / 2, (rw - EVAL_CROP) / 2, EVAL_CROP, EVAL_CROP)
}
