use std::io::{Read, Write};

use crate::autodiff::ParamStore;
use crate::container::{read_container, write_container};
use crate::error::{LxlError, Result};
use crate::tensor::Tensor;

const PARAM_PREFIX: &str = "param/";
const EXTRA_PREFIX: &str = "extra/";

/// Writes parameters (in name order) and auxiliary tensors into one container.
pub(crate) fn save_checkpoint<W: Write>(
    w: W,
    kind: &str,
    meta: serde_json::Value,
    params: &ParamStore<f32>,
    extra: &[(&str, &Tensor<f32>)],
) -> Result<()> {
    let names: Vec<String> = params
        .names()
        .map(|n| format!("{PARAM_PREFIX}{n}"))
        .chain(extra.iter().map(|(n, _)| format!("{EXTRA_PREFIX}{n}")))
        .collect();
    let tensors: Vec<&Tensor<f32>> = params.iter().map(|(_, t)| t).chain(extra.iter().map(|(_, t)| *t)).collect();
    let entries: Vec<(&str, &Tensor<f32>)> = names.iter().map(|s| s.as_str()).zip(tensors).collect();
    write_container(w, kind, meta, &entries)
}

pub(crate) type Loaded = (serde_json::Value, ParamStore<f32>, Vec<(String, Tensor<f32>)>);

pub(crate) fn load_checkpoint<R: Read>(r: R, kind: &str) -> Result<Loaded> {
    let (header, tensors) = read_container(r)?;
    if header.kind != kind {
        return Err(LxlError::Format(format!("expected a {kind} checkpoint, found {}", header.kind)));
    }
    let mut params = ParamStore::new();
    let mut extra = Vec::new();
    for (name, t) in tensors {
        if let Some(p) = name.strip_prefix(PARAM_PREFIX) {
            params.insert(p, t);
        } else if let Some(e) = name.strip_prefix(EXTRA_PREFIX) {
            extra.push((e.to_string(), t));
        } else {
            return Err(LxlError::Format(format!("unexpected tensor {name} in checkpoint")));
        }
    }
    Ok((header.meta, params, extra))
}
