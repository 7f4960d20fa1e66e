//! On-disk dataset layout: `<id>.png` files, `labels.csv` (id, filename, label), `classes.json`,
//! a packed `dataset.lxl` container holding exact pixels, and `manifest.json` with content hashes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, LabeledImage, CLASS_NAMES};
use crate::container::{read_container, write_container};
use crate::error::{LxlError, Result};
use crate::image::{Image, CHANNELS};
use crate::tensor::Tensor;

pub const PACKED_FILE: &str = "dataset.lxl";
const LABELS_FILE: &str = "labels.csv";
const CLASSES_FILE: &str = "classes.json";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: serde_json::Value,
    pub config_hash: String,
    /// SHA-256 of every written file, keyed by file name.
    pub files: BTreeMap<String, String>,
    /// SHA-256 over the sorted (name, hash) list.
    pub content_hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    id: String,
    filename: String,
    label: usize,
}

#[derive(Serialize, Deserialize)]
struct PackedMeta {
    ids: Vec<String>,
    labels: Vec<usize>,
    height: usize,
    width: usize,
    class_names: Vec<String>,
}

/// Writes the full directory layout and returns the manifest (also written to disk).
pub fn write_dataset(dir: &Path, dataset: &Dataset, config: serde_json::Value) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();
    let mut csv = csv::Writer::from_writer(Vec::new());
    for it in dataset.items() {
        let filename = format!("{}.png", it.id);
        let png = it.image.to_png()?;
        files.insert(filename.clone(), sha256_hex(&png));
        fs::write(dir.join(&filename), png)?;
        csv.serialize(CsvRow {
            id: it.id.clone(),
            filename,
            label: it.label,
        })
        .map_err(|e| LxlError::Format(format!("labels.csv: {e}")))?;
    }
    let csv = csv.into_inner().map_err(|e| LxlError::Format(format!("labels.csv: {e}")))?;
    files.insert(LABELS_FILE.into(), sha256_hex(&csv));
    fs::write(dir.join(LABELS_FILE), csv)?;

    let classes = serde_json::to_vec_pretty(&CLASS_NAMES)?;
    files.insert(CLASSES_FILE.into(), sha256_hex(&classes));
    fs::write(dir.join(CLASSES_FILE), classes)?;

    let mut packed = Vec::new();
    write_packed(&mut packed, dataset)?;
    files.insert(PACKED_FILE.into(), sha256_hex(&packed));
    fs::write(dir.join(PACKED_FILE), packed)?;

    let config_hash = sha256_hex(serde_json::to_string(&config)?.as_bytes());
    let listing: String = files.iter().map(|(k, v)| format!("{k}:{v}\n")).collect();
    let manifest = Manifest {
        config,
        config_hash,
        content_hash: sha256_hex(listing.as_bytes()),
        files,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn write_packed<W: std::io::Write>(w: W, dataset: &Dataset) -> Result<()> {
    let (h, w_) = dataset
        .items()
        .first()
        .map(|it| it.image.extent())
        .unwrap_or((0, 0));
    let mut pixels = Vec::with_capacity(dataset.len() * h * w_ * CHANNELS);
    for it in dataset.items() {
        if it.image.extent() != (h, w_) {
            return Err(LxlError::shape("packed dataset", (h, w_), it.image.extent()));
        }
        pixels.extend_from_slice(it.image.data());
    }
    let meta = PackedMeta {
        ids: dataset.items().iter().map(|i| i.id.clone()).collect(),
        labels: dataset.items().iter().map(|i| i.label).collect(),
        height: h,
        width: w_,
        class_names: dataset.class_names().to_vec(),
    };
    let t = Tensor::new(vec![dataset.len(), h, w_, CHANNELS], pixels)?;
    write_container(w, "dataset", serde_json::to_value(meta)?, &[("pixels", &t)])
}

pub fn read_packed<R: std::io::Read>(r: R) -> Result<Dataset> {
    let (header, tensors) = read_container(r)?;
    if header.kind != "dataset" {
        return Err(LxlError::Format(format!("expected a dataset container, found {}", header.kind)));
    }
    let meta: PackedMeta = serde_json::from_value(header.meta)?;
    let pixels = tensors
        .into_iter()
        .find(|(n, _)| n == "pixels")
        .ok_or_else(|| LxlError::Format("dataset container has no pixels".into()))?
        .1;
    if meta.ids.len() != meta.labels.len() || pixels.shape().first() != Some(&meta.ids.len()) {
        return Err(LxlError::Format("dataset container header and pixels disagree".into()));
    }
    let per = meta.height * meta.width * CHANNELS;
    let items = meta
        .ids
        .into_iter()
        .zip(meta.labels)
        .enumerate()
        .map(|(i, (id, label))| {
            Ok(LabeledImage {
                id,
                label,
                image: Image::new(meta.height, meta.width, pixels.data()[i * per..(i + 1) * per].to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(items)
}

/// Loads a dataset directory, preferring the packed container when present.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(LxlError::Config(format!("dataset directory {} does not exist", dir.display())));
    }
    let packed = dir.join(PACKED_FILE);
    if packed.is_file() {
        return read_packed(BufReader::new(File::open(packed)?));
    }
    let mut rdr = csv::Reader::from_path(dir.join(LABELS_FILE)).map_err(|e| LxlError::Format(format!("labels.csv: {e}")))?;
    let mut items = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| LxlError::Format(format!("labels.csv: {e}")))?;
        let image = Image::from_png(&fs::read(dir.join(&row.filename))?)?;
        items.push(LabeledImage {
            id: row.id,
            image,
            label: row.label,
        });
    }
    Dataset::new(items)
}

/// Convenience for writing just the packed container to a file.
pub fn write_packed_file(path: &Path, dataset: &Dataset) -> Result<()> {
    write_packed(BufWriter::new(File::create(path)?), dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;

    #[test]
    fn directory_round_trip_and_stable_manifest() {
        let ds = generate_synthetic(2, 28, 5).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = serde_json::json!({"per_class": 2, "seed": 5});
        let ma = write_dataset(a.path(), &ds, cfg.clone()).unwrap();
        let mb = write_dataset(b.path(), &ds, cfg).unwrap();
        assert_eq!(ma.content_hash, mb.content_hash);
        assert_eq!(ma.files.len(), 16 + 3);
        assert_eq!(read_dataset(a.path()).unwrap(), ds);

        // Without the packed file the PNG path is used; pixels agree to 8-bit precision.
        fs::remove_file(a.path().join(PACKED_FILE)).unwrap();
        let from_png = read_dataset(a.path()).unwrap();
        assert_eq!(from_png.len(), ds.len());
        for (x, y) in from_png.items().iter().zip(ds.items()) {
            assert_eq!(x.label, y.label);
            assert!(x.image.data().iter().zip(y.image.data()).all(|(p, q)| (p - q).abs() < 0.5 / 255.0 + 1e-6));
        }
    }

    #[test]
    fn missing_directory_is_config_error() {
        assert!(matches!(read_dataset(Path::new("/nonexistent/lxl")), Err(LxlError::Config(_))));
    }
}
