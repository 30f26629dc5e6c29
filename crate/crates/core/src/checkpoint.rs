//! Model checkpoints: one safetensors archive holding every named tensor
//! (weights and buffers) plus a string manifest in the header metadata.
//!
//! Manifest keys: `name`, `scale`, `channels`, `blocks`, `growth`,
//! `fused`, `seed`, `architecture`, and `variant.<key>` for each variant
//! parameter.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::archzoo::{Efdn, Model, ModelKind, ModelSpec, SrModel};
use crate::error::{Error, Result};

/// The manifest record stored alongside the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub architecture: ModelKind,
    pub spec: ModelSpec,
    pub fused: bool,
    pub seed: u64,
}

impl CheckpointManifest {
    pub fn of(kind: ModelKind, model: &dyn SrModel) -> Self {
        Self {
            architecture: kind,
            spec: model.spec().clone(),
            fused: model.is_fused(),
            seed: model.seed(),
        }
    }

    fn to_metadata(&self) -> HashMap<String, String> {
        let s = &self.spec;
        let mut m: HashMap<String, String> = [
            ("architecture", self.architecture.name().to_string()),
            ("name", s.name.clone()),
            ("scale", s.scale.to_string()),
            ("channels", s.channels.to_string()),
            ("blocks", s.blocks.to_string()),
            ("growth", s.growth.to_string()),
            ("fused", self.fused.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        for (k, v) in &s.variant_params {
            m.insert(format!("variant.{k}"), v.to_string());
        }
        m
    }

    fn from_metadata(m: &HashMap<String, String>) -> Result<Self> {
        fn field<'a>(m: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
            m.get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Checkpoint(format!("manifest is missing `{key}`")))
        }
        fn num<T: std::str::FromStr>(m: &HashMap<String, String>, key: &str) -> Result<T> {
            let raw = field(m, key)?;
            raw.parse()
                .map_err(|_| Error::Checkpoint(format!("manifest `{key}` = `{raw}` is not a number")))
        }
        let fused = match field(m, "fused")? {
            "true" => true,
            "false" => false,
            other => return Err(Error::Checkpoint(format!("manifest `fused` = `{other}`"))),
        };
        let mut variant_params = BTreeMap::new();
        for (k, v) in m {
            if let Some(key) = k.strip_prefix("variant.") {
                let value: f64 = v
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("variant `{key}` = `{v}`")))?;
                variant_params.insert(key.to_string(), value);
            }
        }
        Ok(Self {
            architecture: field(m, "architecture")?.parse()?,
            spec: ModelSpec {
                name: field(m, "name")?.to_string(),
                scale: num(m, "scale")?,
                channels: num(m, "channels")?,
                blocks: num(m, "blocks")?,
                growth: num(m, "growth")?,
                variant_params,
            },
            fused,
            seed: num(m, "seed")?,
        })
    }
}

/// Writes every tensor of `model` and its manifest to `path`.
pub fn save(path: &Path, kind: ModelKind, model: &dyn SrModel) -> Result<CheckpointManifest> {
    let manifest = CheckpointManifest::of(kind, model);
    save_named(path, &manifest, &model.params().named_tensors())?;
    Ok(manifest)
}

/// Writes arbitrary named tensors under `manifest`, for example the EMA
/// shadow of a model.
pub fn save_named(path: &Path, manifest: &CheckpointManifest, named: &[(String, Tensor)]) -> Result<()> {
    let mut buffers = Vec::with_capacity(named.len());
    for (name, t) in named {
        let data = t.flatten_all()?.to_vec1::<f32>()?;
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        buffers.push((name.clone(), t.dims().to_vec(), bytes));
    }
    let views = buffers
        .iter()
        .map(|(n, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    safetensors::serialize_to_file(views, Some(manifest.to_metadata()), path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Reads the manifest and tensors without building a model.
pub fn read(path: &Path) -> Result<(CheckpointManifest, HashMap<String, Tensor>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let (_, meta) = SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let meta = meta
        .metadata()
        .clone()
        .ok_or_else(|| Error::Checkpoint(format!("{}: no manifest", path.display())))?;
    let manifest = CheckpointManifest::from_metadata(&meta)?;
    let mut tensors = HashMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(Error::Checkpoint(format!("tensor `{name}` is {:?}, expected F32", view.dtype())));
        }
        let data: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(name, Tensor::from_vec(data, view.shape(), &Device::Cpu)?);
    }
    Ok((manifest, tensors))
}

/// Rebuilds the model a checkpoint describes and loads its tensors
/// strictly: every expected tensor must be present with the right shape
/// and nothing else may be.
pub fn load_model(path: &Path) -> Result<(CheckpointManifest, Model)> {
    let (manifest, tensors) = read(path)?;
    let model: Model = match (manifest.architecture, manifest.fused) {
        (ModelKind::Efdn | ModelKind::EfdnFused, true) => {
            Box::new(Efdn::new_deploy(manifest.spec.clone(), manifest.seed, &Device::Cpu)?)
        }
        (ModelKind::EfdnFused, false) => {
            return Err(Error::Checkpoint("efdn_fused checkpoint is not marked fused".into()))
        }
        (kind, false) => kind.build_with(manifest.spec.clone(), manifest.seed)?,
        (kind, true) => {
            return Err(Error::Checkpoint(format!("{kind} has no fused form")));
        }
    };
    model.params().load(&tensors)?;
    Ok((manifest, model))
}
