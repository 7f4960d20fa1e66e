use serde::{Deserialize, Serialize};

use crate::error::{LxlError, Result};
use crate::image::{Image, CHANNELS};

/// Per-pixel map with values in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl SaliencyMap {
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Median of `v`; the mean of the two middle values for even lengths. `v` is reordered.
pub fn median(v: &mut [f32]) -> f32 {
    assert!(!v.is_empty(), "median of an empty slice");
    let n = v.len();
    let (_, &mut hi, _) = v.select_nth_unstable_by(n / 2, f32::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..n / 2].iter().copied().fold(f32::NEG_INFINITY, f32::max);
        (lo + hi) / 2.0
    }
}

/// Median over exemplars of `exemplar - x`, averaged over channels and scaled by the largest
/// magnitude. All-zero differences give an all-zero map.
pub fn saliency_map(x: &Image, exemplars: &[Image]) -> Result<SaliencyMap> {
    if exemplars.is_empty() {
        return Err(LxlError::Empty("saliency exemplars".into()));
    }
    if let Some(e) = exemplars.iter().find(|e| e.extent() != x.extent()) {
        return Err(LxlError::shape("saliency exemplar", x.extent(), e.extent()));
    }
    let (h, w) = x.extent();
    let mut column = vec![0f32; exemplars.len()];
    let mut values = vec![0f32; h * w];
    for (p, out) in values.iter_mut().enumerate() {
        let mut acc = 0f32;
        for c in 0..CHANNELS {
            let i = p * CHANNELS + c;
            for (slot, e) in column.iter_mut().zip(exemplars) {
                *slot = e.data()[i] - x.data()[i];
            }
            acc += median(&mut column);
        }
        *out = acc / CHANNELS as f32;
    }
    let peak = values.iter().fold(0f32, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        values.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(SaliencyMap {
        height: h,
        width: w,
        values,
    })
}
