//! Trainable EDBB layer. Every branch is linear, so the block collapses to
//! a single 3×3 convolution once training is over.

use candle_core::{DType, Device, Result as TResult, Tensor, Var};
use ndarray::{Array1, Array4};
use serde::{Deserialize, Serialize};

use super::{reparameterize_edbb, ConvParams, EdbbParams, EdgeBranch, EdgeFilter, NormStats};
use crate::archzoo::graph::{GraphBuilder, Node};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ConvOpts, Initializer, ParamStore};

/// Which branches a block carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdbbConfig {
    pub conv3x3_bn: bool,
    pub conv1x1: bool,
    pub seq_1x1_3x3: bool,
    pub edges: Vec<EdgeFilter>,
    pub identity: bool,
}

impl Default for EdbbConfig {
    fn default() -> Self {
        Self {
            conv3x3_bn: true,
            conv1x1: true,
            seq_1x1_3x3: true,
            edges: EdgeFilter::ALL.to_vec(),
            identity: true,
        }
    }
}

struct EdgeLayer {
    filter: EdgeFilter,
    taps: Tensor,
    scale: Var,
    bias: Var,
}

pub struct EdbbLayer {
    channels: usize,
    conv3x3: Option<(Conv2d, BatchNorm2d)>,
    conv1x1: Option<Conv2d>,
    seq: Option<(Conv2d, Conv2d)>,
    edges: Vec<EdgeLayer>,
    identity: bool,
}

fn channel_view(v: &Var) -> TResult<Tensor> {
    crate::nn::param(v).reshape((1, (), 1, 1))
}

impl EdbbLayer {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        channels: usize,
        config: &EdbbConfig,
    ) -> Result<Self> {
        if !config.conv3x3_bn
            && !config.conv1x1
            && !config.seq_1x1_3x3
            && config.edges.is_empty()
            && !config.identity
        {
            return Err(Error::Config(format!("`{prefix}`: EDBB has no branches")));
        }
        let c = channels;
        let conv3x3 = config.conv3x3_bn.then(|| {
            let conv = Conv2d::new(store, init, &format!("{prefix}.rbr_3x3"), c, c, 3, ConvOpts::same(3).no_bias());
            let bn = BatchNorm2d::new(store, init, &format!("{prefix}.rbr_3x3_bn"), c);
            (conv, bn)
        });
        let conv1x1 = config
            .conv1x1
            .then(|| Conv2d::new(store, init, &format!("{prefix}.rbr_1x1"), c, c, 1, ConvOpts::same(1)));
        let seq = config.seq_1x1_3x3.then(|| {
            let a = Conv2d::new(store, init, &format!("{prefix}.rbr_1x1_3x3.0"), c, c, 1, ConvOpts::same(1));
            let b = Conv2d::new(store, init, &format!("{prefix}.rbr_1x1_3x3.1"), c, c, 3, ConvOpts::stride(ConvOpts::same(3), 1, 0));
            (a, b)
        });
        let mut edges = Vec::with_capacity(config.edges.len());
        for &filter in &config.edges {
            let flat: Vec<f32> = filter.taps().iter().flatten().copied().collect();
            let one = Tensor::from_vec(flat, (1, 1, 3, 3), init.device())?;
            let taps = one.repeat((c, 1, 1, 1))?;
            let scale = store.add(format!("{prefix}.{}.scale", filter.name()), init.normal(&[c], 0.0, 1e-3), true);
            let bias = store.add(format!("{prefix}.{}.bias", filter.name()), init.constant(&[c], 0.0), true);
            edges.push(EdgeLayer { filter, taps, scale, bias });
        }
        Ok(Self {
            channels,
            conv3x3,
            conv1x1,
            seq,
            edges,
            identity: config.identity,
        })
    }

    pub fn set_training(&self, training: bool) {
        if let Some((_, bn)) = &self.conv3x3 {
            bn.set_training(training);
        }
    }

    pub fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let mut acc: Option<Tensor> = None;
        let mut push = |t: Tensor| -> TResult<()> {
            acc = Some(match acc.take() {
                Some(a) => (a + t)?,
                None => t,
            });
            Ok(())
        };
        if let Some((conv, bn)) = &self.conv3x3 {
            push(bn.forward(&conv.forward(x)?)?)?;
        }
        if let Some(conv) = &self.conv1x1 {
            push(conv.forward(x)?)?;
        }
        if let Some((a, b)) = &self.seq {
            // pad the intermediate with its own bias so the branch is a
            // single 3×3 conv on the whole image
            let mid = a.forward(x)?;
            let bias = match &a.bias {
                Some(v) => channel_view(v)?,
                None => Tensor::zeros((1, self.channels, 1, 1), DType::F32, x.device())?,
            };
            let padded = mid
                .broadcast_sub(&bias)?
                .pad_with_zeros(2, 1, 1)?
                .pad_with_zeros(3, 1, 1)?
                .broadcast_add(&bias)?;
            push(b.forward(&padded)?)?;
        }
        for e in &self.edges {
            let y = x.conv2d(&e.taps, 1, 1, 1, self.channels)?;
            push(y.broadcast_mul(&channel_view(&e.scale)?)?.broadcast_add(&channel_view(&e.bias)?)?)?;
        }
        if self.identity {
            push(x.clone())?;
        }
        Ok(acc.expect("at least one branch"))
    }

    /// Adds this block's training-form layers to a graph.
    pub fn describe(&self, g: &mut GraphBuilder, prefix: &str, x: Node) -> Node {
        let c = self.channels;
        let mut parts = Vec::new();
        if self.conv3x3.is_some() {
            let y = g.conv(&format!("{prefix}.rbr_3x3"), x, c, 3, 1, 1, 1, false);
            parts.push(g.batch_norm(&format!("{prefix}.rbr_3x3_bn"), y));
        }
        if self.conv1x1.is_some() {
            parts.push(g.conv_same(&format!("{prefix}.rbr_1x1"), x, c, 1));
        }
        if self.seq.is_some() {
            let y = g.conv_same(&format!("{prefix}.rbr_1x1_3x3.0"), x, c, 1);
            parts.push(g.conv_same(&format!("{prefix}.rbr_1x1_3x3.1"), y, c, 3));
        }
        for e in &self.edges {
            parts.push(g.fixed_filter(&format!("{prefix}.{}", e.filter.name()), e.filter.name(), x));
        }
        if self.identity {
            parts.push(x);
        }
        let mut y = parts[0];
        for (i, p) in parts.iter().enumerate().skip(1) {
            y = g.add(&format!("{prefix}.sum{i}"), y, *p);
        }
        y
    }

    /// Reads the current weights as plain values.
    pub fn to_params(&self) -> Result<EdbbParams> {
        let c = self.channels;
        let mut p = EdbbParams::empty(c);
        if let Some((conv, bn)) = &self.conv3x3 {
            let norm = NormStats {
                gamma: vec1(&bn.gamma)?,
                beta: vec1(&bn.beta)?,
                running_mean: vec1(&bn.running_mean)?,
                running_var: vec1(&bn.running_var)?,
                epsilon: bn.eps as f32,
            };
            p.conv3x3 = Some((conv_params(conv)?, Some(norm)));
        }
        if let Some(conv) = &self.conv1x1 {
            p.conv1x1 = Some(conv_params(conv)?);
        }
        if let Some((a, b)) = &self.seq {
            p.seq_1x1_3x3 = Some((conv_params(a)?, conv_params(b)?));
        }
        for e in &self.edges {
            p.edges.push(EdgeBranch {
                filter: e.filter,
                per_channel_scale: vec1(&e.scale)?,
                bias: vec1(&e.bias)?,
            });
        }
        p.identity = self.identity;
        Ok(p)
    }

    pub fn fuse(&self) -> Result<ConvParams> {
        reparameterize_edbb(&self.to_params()?)
    }
}

pub(crate) fn vec1(v: &Var) -> Result<Array1<f32>> {
    Ok(Array1::from_vec(v.as_tensor().flatten_all()?.to_vec1::<f32>()?))
}

/// Copies a candle convolution into plain values (zero bias when absent).
pub fn conv_params(conv: &Conv2d) -> Result<ConvParams> {
    let dims = conv.weight.dims4()?;
    let data = conv.weight.as_tensor().flatten_all()?.to_vec1::<f32>()?;
    let kernel = Array4::from_shape_vec(dims, data).map_err(|e| Error::Shape(e.to_string()))?;
    let bias = match &conv.bias {
        Some(b) => vec1(b)?,
        None => Array1::zeros(dims.0),
    };
    ConvParams::new(kernel, bias)
}

/// Writes plain values into a new parameter-store convolution.
pub fn conv_from_params(
    store: &mut ParamStore,
    prefix: &str,
    params: &ConvParams,
    padding: usize,
    device: &Device,
) -> Result<Conv2d> {
    let dims = params.kernel.dim();
    let w = Tensor::from_iter(params.kernel.iter().copied(), device)?.reshape(dims)?;
    let b = Tensor::from_iter(params.bias.iter().copied(), device)?;
    Ok(Conv2d {
        weight: store.add(format!("{prefix}.weight"), w, true),
        bias: Some(store.add(format!("{prefix}.bias"), b, true)),
        stride: 1,
        padding,
        groups: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randomize(store: &ParamStore, seed: u64) {
        let mut init = Initializer::new(seed, &Device::Cpu);
        for e in store.entries() {
            let dims = e.var.dims().to_vec();
            let t = if e.name.ends_with("running_var") {
                init.uniform(&dims, 0.5, 2.0)
            } else {
                init.uniform(&dims, -0.5, 0.5)
            };
            e.var.set(&t).unwrap();
        }
    }

    fn fused_forward(p: &ConvParams, x: &Tensor) -> Tensor {
        let mut s = ParamStore::new();
        conv_from_params(&mut s, "f", p, 1, &Device::Cpu).unwrap().forward(x).unwrap()
    }

    #[test]
    fn fused_block_matches_multi_branch_forward() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(3, &Device::Cpu);
        let layer = EdbbLayer::new(&mut store, &mut init, "b", 6, &EdbbConfig::default()).unwrap();
        randomize(&store, 9);
        let x = Initializer::new(5, &Device::Cpu).uniform(&[2, 6, 12, 10], 0.0, 1.0);
        let multi = layer.forward(&x).unwrap();
        let fused = fused_forward(&layer.fuse().unwrap(), &x);
        let d = (multi - fused).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(d < 1e-4, "max diff {d}");
    }

    #[test]
    fn graph_params_match_store() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(3, &Device::Cpu);
        let layer = EdbbLayer::new(&mut store, &mut init, "b", 4, &EdbbConfig::default()).unwrap();
        let (mut g, x) = GraphBuilder::new(4);
        layer.describe(&mut g, "b", x);
        assert_eq!(g.finish().unwrap().parameter_count, store.trainable_elements());
    }

    #[test]
    fn empty_config_is_rejected() {
        let cfg = EdbbConfig {
            conv3x3_bn: false,
            conv1x1: false,
            seq_1x1_3x3: false,
            edges: vec![],
            identity: false,
        };
        let mut store = ParamStore::new();
        let mut init = Initializer::new(0, &Device::Cpu);
        assert!(EdbbLayer::new(&mut store, &mut init, "b", 4, &cfg).is_err());
    }
}
