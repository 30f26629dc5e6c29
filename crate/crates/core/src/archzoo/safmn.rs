//! SAFMN: stacked feature-mixing modules, each a spatially-adaptive
//! feature modulation (SAFM) followed by a convolutional channel mixer
//! (CCM), between a shallow 3×3 conv and a pixel-shuffle tail.
//!
//! SAFM splits the channels into `levels` groups; group `i` is max-pooled
//! to `1/2^i` resolution, filtered with a depthwise 3×3 conv and resized
//! back. The groups are concatenated, mixed by a 1×1 conv, and the GELU of
//! the result gates the block input.

use candle_core::{Device, Result as TResult, Tensor};

use super::graph::{GraphBuilder, ModelGraph};
use super::{ModelSpec, SrModel};
use crate::error::{Error, Result};
use crate::nn::{
    adaptive_max_pool, gelu, pixel_shuffle, resize_nearest, Conv2d, ConvOpts, Initializer,
    LayerNorm2d, ParamStore,
};

/// Matches the variance of PyTorch's default convolution init,
/// `U(±1/√fan_in)`, relative to Kaiming-normal.
const INIT_GAIN: f64 = 0.408_248_290_463_863;

struct Safm {
    levels: usize,
    mfr: Vec<Conv2d>,
    aggr: Conv2d,
}

impl Safm {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let chunks = x.chunk(self.levels, 1)?;
        let mut out = Vec::with_capacity(self.levels);
        for (i, (xc, conv)) in chunks.iter().zip(&self.mfr).enumerate() {
            let s = if i == 0 {
                conv.forward(xc)?
            } else {
                let (ph, pw) = ((h >> i).max(1), (w >> i).max(1));
                let s = adaptive_max_pool(xc, ph, pw)?;
                resize_nearest(&conv.forward(&s)?, h, w)?
            };
            out.push(s);
        }
        let mixed = self.aggr.forward(&Tensor::cat(&out, 1)?)?;
        gelu(&mixed)? * x
    }
}

struct Ccm {
    expand: Conv2d,
    project: Conv2d,
}

impl Ccm {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        self.project.forward(&gelu(&self.expand.forward(x)?)?)
    }
}

struct FeatureMixer {
    norm1: LayerNorm2d,
    safm: Safm,
    norm2: LayerNorm2d,
    ccm: Ccm,
}

impl FeatureMixer {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let x = (self.safm.forward(&self.norm1.forward(x)?)? + x)?;
        self.ccm.forward(&self.norm2.forward(&x)?)? + x
    }
}

pub struct Safmn {
    spec: ModelSpec,
    seed: u64,
    store: ParamStore,
    to_feat: Conv2d,
    feats: Vec<FeatureMixer>,
    to_img: Conv2d,
}

impl Safmn {
    pub const DEFAULT_LEVELS: usize = 4;
    pub const DEFAULT_FFN_SCALE: f64 = 2.0;

    fn levels(spec: &ModelSpec) -> usize {
        spec.variant("levels", Self::DEFAULT_LEVELS as f64) as usize
    }

    fn hidden(spec: &ModelSpec) -> usize {
        (spec.channels as f64 * spec.variant("ffn_scale", Self::DEFAULT_FFN_SCALE)) as usize
    }

    pub fn new(spec: ModelSpec, seed: u64, device: &Device) -> Result<Self> {
        spec.validate_common()?;
        let dim = spec.channels;
        let levels = Self::levels(&spec);
        if levels == 0 || dim % levels != 0 {
            return Err(Error::Config(format!(
                "{}: {dim} channels are not divisible into {levels} SAFM groups",
                spec.name
            )));
        }
        let hidden = Self::hidden(&spec);
        let chunk = dim / levels;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed, device);
        let to_feat = Conv2d::new(&mut store, &mut init, "to_feat", 3, dim, 3, ConvOpts::same(3).gain(INIT_GAIN));
        let mut feats = Vec::with_capacity(spec.blocks);
        for b in 0..spec.blocks {
            let p = format!("feats.{b}");
            let norm1 = LayerNorm2d::new(&mut store, &init, &format!("{p}.norm1"), dim);
            let norm2 = LayerNorm2d::new(&mut store, &init, &format!("{p}.norm2"), dim);
            let mfr = (0..levels)
                .map(|i| {
                    Conv2d::new(
                        &mut store,
                        &mut init,
                        &format!("{p}.safm.mfr.{i}"),
                        chunk,
                        chunk,
                        3,
                        ConvOpts::same(3).groups(chunk).gain(INIT_GAIN),
                    )
                })
                .collect();
            let aggr = Conv2d::new(&mut store, &mut init, &format!("{p}.safm.aggr"), dim, dim, 1, ConvOpts::same(1).gain(INIT_GAIN));
            let expand = Conv2d::new(&mut store, &mut init, &format!("{p}.ccm.ccm.0"), dim, hidden, 3, ConvOpts::same(3).gain(INIT_GAIN));
            let project = Conv2d::new(&mut store, &mut init, &format!("{p}.ccm.ccm.2"), hidden, dim, 1, ConvOpts::same(1).gain(INIT_GAIN));
            feats.push(FeatureMixer {
                norm1,
                safm: Safm { levels, mfr, aggr },
                norm2,
                ccm: Ccm { expand, project },
            });
        }
        let to_img = Conv2d::new(&mut store, &mut init, "to_img.0", dim, 3 * 16, 3, ConvOpts::same(3).gain(INIT_GAIN));
        Ok(Self {
            spec,
            seed,
            store,
            to_feat,
            feats,
            to_img,
        })
    }
}

impl SrModel for Safmn {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let feat = self.to_feat.forward(x)?;
        let mut y = feat.clone();
        for f in &self.feats {
            y = f.forward(&y)?;
        }
        pixel_shuffle(&self.to_img.forward(&(y + feat)?)?, 4)
    }

    fn graph(&self) -> Result<ModelGraph> {
        let dim = self.spec.channels;
        let levels = Self::levels(&self.spec);
        let hidden = Self::hidden(&self.spec);
        let chunk = dim / levels;
        let (mut g, x) = GraphBuilder::new(3);
        let feat = g.conv_same("to_feat", x, dim, 3);
        let mut y = feat;
        for b in 0..self.spec.blocks {
            let p = format!("feats.{b}");
            let n1 = g.layer_norm(&format!("{p}.norm1"), y);
            let mut parts = Vec::new();
            for i in 0..levels {
                let name = format!("{p}.safm.mfr.{i}");
                let slice = g.slice(&format!("{p}.safm.split{i}"), n1, i * chunk, chunk);
                let s = if i == 0 {
                    g.conv(&name, slice, chunk, 3, 1, 1, chunk, true)
                } else {
                    let pooled = g.adaptive_max_pool_div(&format!("{p}.safm.pool{i}"), slice, 1 << i);
                    let c = g.conv(&name, pooled, chunk, 3, 1, 1, chunk, true);
                    g.upsample_nearest_to(&format!("{p}.safm.up{i}"), c, slice)
                };
                parts.push(s);
            }
            let cat = g.concat(&format!("{p}.safm.cat"), &parts);
            let aggr = g.conv_same(&format!("{p}.safm.aggr"), cat, dim, 1);
            let gate = g.act(&format!("{p}.safm.gelu"), "gelu", aggr);
            let m = g.mul(&format!("{p}.safm.modulate"), gate, n1);
            y = g.add(&format!("{p}.residual1"), m, y);
            let n2 = g.layer_norm(&format!("{p}.norm2"), y);
            let e = g.conv_same(&format!("{p}.ccm.ccm.0"), n2, hidden, 3);
            let e = g.act(&format!("{p}.ccm.gelu"), "gelu", e);
            let c = g.conv_same(&format!("{p}.ccm.ccm.2"), e, dim, 1);
            y = g.add(&format!("{p}.residual2"), c, y);
        }
        let y = g.add("global_residual", y, feat);
        let img = g.conv_same("to_img.0", y, 48, 3);
        g.pixel_shuffle("to_img.1", img, 4);
        g.finish()
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn seed(&self) -> u64 {
        self.seed
    }
}
