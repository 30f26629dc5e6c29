//! The four ×4 generators measured by the challenge, behind one model
//! interface, plus whole-image and tiled inference.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::nn::ParamStore;

pub mod efdn;
pub mod graph;
pub mod rrdb;
pub mod safmn;

pub use efdn::Efdn;
pub use graph::{GraphBuilder, LayerDesc, LayerKind, ModelGraph};
pub use rrdb::RrdbNet;
pub use safmn::Safmn;

/// Architecture hyperparameters for a builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub scale: usize,
    pub channels: usize,
    pub blocks: usize,
    /// Dense-block growth channels; 0 when the architecture has none.
    pub growth: usize,
    #[serde(default)]
    pub variant_params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(name: &str, channels: usize, blocks: usize, growth: usize) -> Self {
        Self {
            name: name.into(),
            scale: 4,
            channels,
            blocks,
            growth,
            variant_params: BTreeMap::new(),
        }
    }

    /// SAFMN-L: 16 feature-mixing blocks at 96 channels.
    pub fn safmn_l() -> Self {
        Self::new("safmn_l", 96, 16, 0)
    }

    /// TinyESRGAN: 17 RRDBs, 32 channels, growth 18.
    pub fn tiny_esrgan() -> Self {
        Self::new("tiny_esrgan", 32, 17, 18)
    }

    /// EFDN: 48 channels, 4 distillation cells.
    pub fn efdn() -> Self {
        Self::new("efdn", 48, 4, 0)
    }

    /// Real-ESRGAN ×4 generator: 23 RRDBs, 64 channels, growth 32.
    pub fn realesrgan_baseline() -> Self {
        Self::new("realesrgan_baseline", 64, 23, 32)
    }

    pub fn with_variant(mut self, key: &str, value: f64) -> Self {
        self.variant_params.insert(key.into(), value);
        self
    }

    pub fn variant(&self, key: &str, default: f64) -> f64 {
        self.variant_params.get(key).copied().unwrap_or(default)
    }

    pub(crate) fn validate_common(&self) -> Result<()> {
        if self.scale != 4 {
            return Err(Error::Config(format!(
                "{}: only ×4 is supported, got ×{}",
                self.name, self.scale
            )));
        }
        if self.channels == 0 || self.blocks == 0 {
            return Err(Error::Config(format!(
                "{}: channels and blocks must be at least 1",
                self.name
            )));
        }
        Ok(())
    }
}

/// A built super-resolution network.
///
/// Instances are single-writer: a forward pass may update internal
/// buffers (batch-norm statistics, spectral-norm vectors), so callers must
/// not run concurrent passes on one instance.
pub trait SrModel: Send {
    fn spec(&self) -> &ModelSpec;

    /// `(N, 3, H, W) → (N, 3, 4H, 4W)`.
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor>;

    fn graph(&self) -> Result<ModelGraph>;

    fn params(&self) -> &ParamStore;

    fn seed(&self) -> u64;

    fn is_fused(&self) -> bool {
        false
    }

    fn set_training(&self, _training: bool) {}
}

pub type Model = Box<dyn SrModel>;

/// The registered builders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SafmnL,
    TinyEsrgan,
    /// EFDN in its multi-branch training form.
    Efdn,
    /// EFDN after re-parameterization (deployment form).
    EfdnFused,
    RealesrganBaseline,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::SafmnL,
        ModelKind::TinyEsrgan,
        ModelKind::Efdn,
        ModelKind::EfdnFused,
        ModelKind::RealesrganBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SafmnL => "safmn_l",
            ModelKind::TinyEsrgan => "tiny_esrgan",
            ModelKind::Efdn => "efdn",
            ModelKind::EfdnFused => "efdn_fused",
            ModelKind::RealesrganBaseline => "realesrgan_baseline",
        }
    }

    pub fn default_spec(self) -> ModelSpec {
        match self {
            ModelKind::SafmnL => ModelSpec::safmn_l(),
            ModelKind::TinyEsrgan => ModelSpec::tiny_esrgan(),
            ModelKind::Efdn | ModelKind::EfdnFused => ModelSpec::efdn(),
            ModelKind::RealesrganBaseline => ModelSpec::realesrgan_baseline(),
        }
    }

    /// Builds with the challenge configuration.
    pub fn build(self, seed: u64) -> Result<Model> {
        self.build_with(self.default_spec(), seed)
    }

    pub fn build_with(self, spec: ModelSpec, seed: u64) -> Result<Model> {
        let dev = Device::Cpu;
        Ok(match self {
            ModelKind::SafmnL => Box::new(build_safmn_l(spec, seed, &dev)?),
            ModelKind::TinyEsrgan => Box::new(build_tiny_esrgan(spec, seed, &dev)?),
            ModelKind::Efdn => Box::new(build_efdn(spec, seed, &dev)?),
            ModelKind::EfdnFused => Box::new(build_efdn(spec, seed, &dev)?.reparameterize()?),
            ModelKind::RealesrganBaseline => Box::new(build_rrdb_baseline(spec, seed, &dev)?),
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model `{s}`; expected one of {}",
                    Self::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }
}

pub fn build_safmn_l(spec: ModelSpec, seed: u64, device: &Device) -> Result<Safmn> {
    Safmn::new(spec, seed, device)
}

pub fn build_tiny_esrgan(spec: ModelSpec, seed: u64, device: &Device) -> Result<RrdbNet> {
    RrdbNet::new(spec, seed, device)
}

pub fn build_rrdb_baseline(spec: ModelSpec, seed: u64, device: &Device) -> Result<RrdbNet> {
    RrdbNet::new(spec, seed, device)
}

/// Builds EFDN in training (multi-branch) form. The deployment form is
/// reached through [`Efdn::reparameterize`] or a fused checkpoint.
pub fn build_efdn(spec: ModelSpec, seed: u64, device: &Device) -> Result<Efdn> {
    if spec.variant("fused", 0.0) != 0.0 {
        return Err(Error::State(
            "a fused EFDN can only come from re-parameterizing a trained model".into(),
        ));
    }
    Efdn::new_train(spec, seed, device)
}

/// Tiled inference settings. `tile = None` runs the whole image at once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TilingPolicy {
    pub tile: Option<usize>,
    pub overlap: usize,
    /// Estimated peak working-set limit for one forward pass.
    pub memory_budget_bytes: Option<u64>,
}

impl Default for TilingPolicy {
    fn default() -> Self {
        Self {
            tile: None,
            overlap: 16,
            memory_budget_bytes: None,
        }
    }
}

impl TilingPolicy {
    pub fn whole() -> Self {
        Self::default()
    }

    pub fn tiled(tile: usize, overlap: usize) -> Self {
        Self {
            tile: Some(tile),
            overlap,
            memory_budget_bytes: None,
        }
    }

    pub fn with_budget(mut self, bytes: u64) -> Self {
        self.memory_budget_bytes = Some(bytes);
        self
    }
}

/// Rough peak working set of one forward pass: the largest layer's input,
/// output and im2col buffer, doubled for live skip tensors.
pub fn estimate_peak_bytes(graph: &ModelGraph, height: usize, width: usize) -> Result<u64> {
    let mut peak = 0u64;
    for l in &graph.layers {
        let (oh, ow) = l.extent.resolve(height, width)?;
        let out = (l.out_channels * oh * ow) as u64;
        let input: u64 = l
            .inputs
            .iter()
            .map(|&i| {
                let p = &graph.layers[i];
                p.extent
                    .resolve(height, width)
                    .map(|(h, w)| (p.out_channels * h * w) as u64)
            })
            .sum::<Result<u64>>()?;
        let cols = if l.kind == LayerKind::Conv2d && l.kernel_size > 1 {
            (l.in_channels / l.groups.max(1) * l.kernel_size * l.kernel_size * oh * ow) as u64
        } else {
            0
        };
        peak = peak.max(input + out + cols);
    }
    Ok(peak * 4 * 2)
}

fn suggest_tile(graph: &ModelGraph, budget: u64, start: usize, overlap: usize) -> Result<usize> {
    let mut tile = start.next_power_of_two() / 2;
    while tile > 16 {
        let side = tile + 2 * overlap;
        if estimate_peak_bytes(graph, side, side)? <= budget {
            return Ok(tile);
        }
        tile /= 2;
    }
    Ok(16)
}

fn forward_plane(model: &dyn SrModel, lr: &ImagePlane) -> Result<ImagePlane> {
    let x = lr.to_tensor(&Device::Cpu)?;
    let y = crate::nn::no_grad(|| model.forward(&x))?;
    ImagePlane::from_tensor(&y.clamp(0f32, 1f32)?)
}

fn crop(img: &ImagePlane, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImagePlane> {
    ImagePlane::from_fn(h, w, |y, x, c| img.get(y0 + y, x0 + x, c))
}

/// Runs the model on one image, optionally in overlapping tiles.
///
/// Each tile is expanded by `overlap` pixels on every side (clamped to the
/// image), processed, and only its core is written back, so for models
/// whose receptive field fits in the overlap the result equals
/// whole-image inference.
pub fn infer(model: &dyn SrModel, lr: &ImagePlane, tiling: TilingPolicy) -> Result<ImagePlane> {
    let scale = model.spec().scale;
    let (h, w) = lr.dims();
    if let Some(tile) = tiling.tile {
        if tile == 0 || tile < tiling.overlap {
            return Err(Error::Config(format!(
                "tile size {tile} must be at least the overlap {}",
                tiling.overlap
            )));
        }
    }
    let side = |n: usize| match tiling.tile {
        Some(t) => (t + 2 * tiling.overlap).min(n),
        None => n,
    };
    if let Some(budget) = tiling.memory_budget_bytes {
        let graph = model.graph()?;
        let need = estimate_peak_bytes(&graph, side(h), side(w))?;
        if need > budget {
            let start = tiling.tile.unwrap_or(h.max(w));
            return Err(Error::Resource {
                message: format!(
                    "estimated {} MiB working set exceeds the {} MiB budget",
                    need >> 20,
                    budget >> 20
                ),
                suggested_tile: suggest_tile(&graph, budget, start, tiling.overlap)?,
            });
        }
    }
    let tile = match tiling.tile {
        Some(t) if t < h || t < w => t,
        _ => return forward_plane(model, lr),
    };

    let (oh, ow) = (h * scale, w * scale);
    let mut out = vec![0f32; oh * ow * 3];
    let ov = tiling.overlap;
    for ty in (0..h).step_by(tile) {
        for tx in (0..w).step_by(tile) {
            let (core_h, core_w) = (tile.min(h - ty), tile.min(w - tx));
            let y0 = ty.saturating_sub(ov);
            let x0 = tx.saturating_sub(ov);
            let y1 = (ty + core_h + ov).min(h);
            let x1 = (tx + core_w + ov).min(w);
            let patch = crop(lr, y0, x0, y1 - y0, x1 - x0)?;
            let sr = forward_plane(model, &patch)?;
            let (dy, dx) = ((ty - y0) * scale, (tx - x0) * scale);
            for y in 0..core_h * scale {
                let src = ((dy + y) * sr.width() + dx) * 3;
                let dst = ((ty * scale + y) * ow + tx * scale) * 3;
                out[dst..dst + core_w * scale * 3]
                    .copy_from_slice(&sr.as_slice()[src..src + core_w * scale * 3]);
            }
        }
    }
    ImagePlane::new(oh, ow, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_roundtrip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("nosuchmodel".parse::<ModelKind>().is_err());
    }

    #[test]
    fn non_x4_specs_are_rejected() {
        let mut spec = ModelSpec::safmn_l();
        spec.scale = 2;
        assert!(matches!(
            ModelKind::SafmnL.build_with(spec, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fused_efdn_cannot_be_built_from_scratch() {
        let spec = ModelSpec::efdn().with_variant("fused", 1.0);
        assert!(matches!(
            build_efdn(spec, 0, &Device::Cpu),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn memory_budget_suggests_smaller_tile() {
        let m = ModelKind::SafmnL.build(0).unwrap();
        let lr = ImagePlane::filled(64, 64, 0.5).unwrap();
        let err = infer(m.as_ref(), &lr, TilingPolicy::whole().with_budget(8 << 20)).unwrap_err();
        match err {
            Error::Resource { suggested_tile, .. } => assert!(suggested_tile < 64),
            other => panic!("unexpected {other}"),
        }
    }
}
