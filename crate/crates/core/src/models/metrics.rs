use std::collections::BTreeMap;

use crate::dataset::{LabeledImage, CLASS_NAMES, NUM_CLASSES};
use crate::error::{LxlError, Result};
use crate::image::Image;

/// Mean of per-class recalls over the classes that occur in `labels`.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(LxlError::Empty("balanced accuracy needs at least one prediction".into()));
    }
    if predictions.len() != labels.len() {
        return Err(LxlError::shape("balanced_accuracy", labels.len(), predictions.len()));
    }
    let classes = labels.iter().copied().max().unwrap_or(0).max(predictions.iter().copied().max().unwrap_or(0)) + 1;
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let recalls: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Per-class RMSE result. Classes with no images are listed in `warnings` instead of `rmse`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RmseReport {
    pub rmse: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// Per-class root mean squared pixel error between images and their reconstructions.
///
/// `reconstruct` maps a batch of images to same-extent outputs.
pub fn per_class_rmse<F>(items: &[&LabeledImage], mut reconstruct: F) -> Result<RmseReport>
where
    F: FnMut(&[&Image]) -> Result<Vec<Image>>,
{
    let mut sq = [0.0f64; NUM_CLASSES];
    let mut count = [0usize; NUM_CLASSES];
    for chunk in items.chunks(64) {
        let imgs: Vec<&Image> = chunk.iter().map(|it| &it.image).collect();
        let out = reconstruct(&imgs)?;
        if out.len() != imgs.len() {
            return Err(LxlError::shape("reconstruction batch", imgs.len(), out.len()));
        }
        for (it, rec) in chunk.iter().zip(&out) {
            sq[it.label] += it.image.squared_error(rec)?;
            count[it.label] += it.image.data().len();
        }
    }
    let mut report = RmseReport {
        rmse: BTreeMap::new(),
        warnings: Vec::new(),
    };
    for c in 0..NUM_CLASSES {
        if count[c] == 0 {
            report.warnings.push(format!("class {} has no images; omitted", CLASS_NAMES[c]));
        } else {
            report.rmse.insert(CLASS_NAMES[c].to_string(), (sq[c] / count[c] as f64).sqrt());
        }
    }
    Ok(report)
}

/// Mean pairwise L2 distance between images; zero for fewer than two.
pub fn diversity_score(images: &[Image]) -> Result<f64> {
    let n = images.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += images[i].l2_distance(&images[j])?;
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}
