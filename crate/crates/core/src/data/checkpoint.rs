//! Checkpoint directories.
//!
//! `manifest.json` holds the format version, hyperparameters, data-derived
//! sizes, item vocabulary and the ordered `(name, shape)` list;
//! `params.bin` holds every parameter as little-endian `f64`, row-major,
//! concatenated in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Strategy;
use crate::gradcheck::NamedParams;
use crate::model::{Hyperparams, ModelParams, ModelShape};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub hyperparams: Hyperparams,
    pub vocab_size: usize,
    pub fused_width: usize,
    pub strategy: Option<Strategy>,
    pub seed: u64,
    /// Vocabulary order of real items (indices 2.. in the id table).
    pub items: Vec<String>,
    pub parameters: Vec<ParamEntry>,
}

impl Manifest {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            vocab_size: self.vocab_size,
            fused_width: self.fused_width,
        }
    }
}

/// Run metadata stored next to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub strategy: Option<Strategy>,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn hyperparams(&self) -> &Hyperparams {
        &self.manifest.hyperparams
    }
}

fn io_err(path: &Path, what: &str) -> impl FnOnce(std::io::Error) -> Error {
    let context = format!("{what} {}", path.display());
    move |e| Error::io(context, e)
}

pub fn build_manifest(params: &ModelParams, hyper: &Hyperparams, meta: &CheckpointMeta) -> Result<Manifest> {
    let shape = params.shape();
    if meta.items.len() + 2 != shape.vocab_size {
        return Err(Error::Checkpoint(format!(
            "{} vocabulary items for an id table of {} rows",
            meta.items.len(),
            shape.vocab_size
        )));
    }
    // the parameter layout must be the one `hyper` implies
    ModelParams::from_named(
        hyper,
        shape,
        params.named().into_iter().map(|(n, t)| (n, t.clone())).collect(),
    )?;
    Ok(Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        hyperparams: hyper.clone(),
        vocab_size: shape.vocab_size,
        fused_width: shape.fused_width,
        strategy: meta.strategy,
        seed: meta.seed,
        items: meta.items.clone(),
        parameters: params
            .named()
            .into_iter()
            .map(|(name, t)| ParamEntry {
                name,
                shape: t.shape().to_vec(),
            })
            .collect(),
    })
}

pub fn encode_payload(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.num_elements() * 8);
    for (_, t) in params.named() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    params: &ModelParams,
    hyper: &Hyperparams,
    meta: &CheckpointMeta,
) -> Result<()> {
    let manifest = build_manifest(params, hyper, meta)?;
    write_checkpoint(
        dir,
        &Checkpoint {
            manifest,
            params: params.clone(),
        },
    )
}

pub fn write_checkpoint(dir: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir, "creating"))?;
    let mut json = serde_json::to_string_pretty(&checkpoint.manifest).expect("manifest serializes");
    json.push('\n');
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, json).map_err(io_err(&manifest_path, "writing"))?;
    let params_path = dir.join(PARAMS_FILE);
    std::fs::write(&params_path, encode_payload(&checkpoint.params)).map_err(io_err(&params_path, "writing"))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path, "reading"))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("manifest is not JSON: {e}")))?;
    match raw.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(CHECKPOINT_FORMAT_VERSION) => {}
        Some(v) => {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {v} (this build reads version {CHECKPOINT_FORMAT_VERSION})"
            )))
        }
        None => return Err(Error::Checkpoint("manifest has no format_version".into())),
    }
    let manifest: Manifest =
        serde_json::from_value(raw).map_err(|e| Error::Checkpoint(format!("invalid manifest: {e}")))?;

    let params_path = dir.join(PARAMS_FILE);
    let bytes = std::fs::read(&params_path).map_err(io_err(&params_path, "reading"))?;
    let expected: usize = manifest
        .parameters
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    if bytes.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, manifest needs {} ({} values)",
            bytes.len(),
            expected * 8,
            expected
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut tensors = Vec::with_capacity(manifest.parameters.len());
    for entry in &manifest.parameters {
        let n: usize = entry.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        let t =
            Tensor::new(&entry.shape, data).map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", entry.name)))?;
        tensors.push((entry.name.clone(), t));
    }
    if manifest.items.len() + 2 != manifest.vocab_size {
        return Err(Error::Checkpoint("item list does not match vocab_size".into()));
    }
    let params = ModelParams::from_named(&manifest.hyperparams, manifest.shape(), tensors)?;
    Ok(Checkpoint { manifest, params })
}
