//! Synthetic lesion-like dataset: generation, augmentation, evaluation preprocessing, splits and
//! on-disk formats.

mod augment;
mod io;
mod synth;

pub use augment::{augment, augment_with, preprocess_eval, AugmentParams, EVAL_CROP, EVAL_SHORT_EDGE};
pub use io::{read_dataset, read_packed, write_dataset, write_packed, write_packed_file, Manifest, PACKED_FILE};
pub use synth::{generate_synthetic, generate_with_counts, isic_like_counts, SUPPORTED_EXTENTS};

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LxlError, Result};
use crate::image::Image;

pub const NUM_CLASSES: usize = 8;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["MEL", "NV", "BCC", "AK", "BKL", "DF", "VASC", "SCC"];

pub fn class_index(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|c| c.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub id: String,
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<LabeledImage>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Validates unique ids and labels, and orders items by id.
    pub fn new(mut items: Vec<LabeledImage>) -> Result<Self> {
        let mut seen = HashSet::new();
        for it in &items {
            if it.label >= NUM_CLASSES {
                return Err(LxlError::Validation(format!("label {} of {} out of range", it.label, it.id)));
            }
            if !seen.insert(it.id.clone()) {
                return Err(LxlError::Validation(format!("duplicate id {}", it.id)));
            }
        }
        items.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Dataset {
            items,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn items(&self) -> &[LabeledImage] {
        &self.items
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledImage> {
        self.items
            .binary_search_by(|it| it.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.items[i])
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for it in &self.items {
            counts[it.label] += 1;
        }
        counts
    }

    /// Common square extent of all images, if there is one.
    pub fn extent(&self) -> Option<usize> {
        let first = self.items.first()?.image.extent();
        (first.0 == first.1 && self.items.iter().all(|it| it.image.extent() == first)).then_some(first.0)
    }

    pub fn by_class(&self) -> BTreeMap<usize, Vec<&LabeledImage>> {
        let mut map: BTreeMap<usize, Vec<&LabeledImage>> = BTreeMap::new();
        for it in &self.items {
            map.entry(it.label).or_default().push(it);
        }
        map
    }

    pub fn filter(&self, keep: impl Fn(&LabeledImage) -> bool) -> Dataset {
        Dataset {
            items: self.items.iter().filter(|it| keep(it)).cloned().collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Stratified split into (train, validation).
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(LxlError::Config(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (label, members) in dataset.by_class() {
        if members.len() < 2 {
            return Err(LxlError::Validation(format!(
                "class {} has {} item(s); stratification needs at least 2",
                CLASS_NAMES[label],
                members.len()
            )));
        }
        let mut idx: Vec<usize> = (0..members.len()).collect();
        idx.shuffle(&mut rng);
        let n_train = ((members.len() as f64 * train_fraction).round() as usize).clamp(1, members.len() - 1);
        for (rank, &i) in idx.iter().enumerate() {
            let item = members[i].clone();
            if rank < n_train {
                train.push(item);
            } else {
                val.push(item);
            }
        }
    }
    Ok((Dataset::new(train)?, Dataset::new(val)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_disjoint() {
        let ds = generate_synthetic(10, 28, 7).unwrap();
        let (tr, va) = split(&ds, 0.8, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (64, 16));
        assert_eq!(tr.class_counts(), [8; NUM_CLASSES]);
        assert_eq!(va.class_counts(), [2; NUM_CLASSES]);
        let mut ids: Vec<&str> = tr.items().iter().chain(va.items()).map(|i| i.id.as_str()).collect();
        ids.sort();
        let orig: Vec<&str> = ds.items().iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, orig);
        let (tr2, _) = split(&ds, 0.8, 1).unwrap();
        assert_eq!(tr, tr2);
    }

    #[test]
    fn split_rejects_singleton_class_and_bad_fraction() {
        let ds = generate_synthetic(1, 28, 7).unwrap();
        assert!(split(&ds, 0.5, 0).is_err());
        let ds = generate_synthetic(2, 28, 7).unwrap();
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.0, 0).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let img = Image::filled(2, 2, 0.5);
        let it = LabeledImage {
            id: "a".into(),
            image: img,
            label: 0,
        };
        assert!(Dataset::new(vec![it.clone(), it]).is_err());
    }

    #[test]
    fn class_lookup_is_case_insensitive() {
        assert_eq!(class_index("bkl"), Some(4));
        assert_eq!(class_index("UNK"), None);
    }
}
