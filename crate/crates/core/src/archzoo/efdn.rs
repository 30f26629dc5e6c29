//! EFDN: edge-enhanced feature distillation network.
//!
//! The training form uses multi-branch EDBB blocks inside each cell; the
//! deployment form replaces every EDBB with the single 3×3 convolution
//! produced by [`Efdn::reparameterize`].

use std::collections::HashMap;

use candle_core::{Device, Result as TResult, Tensor};

use super::graph::{GraphBuilder, ModelGraph, Node};
use super::{ModelSpec, SrModel};
use crate::error::{Error, Result};
use crate::nn::{
    max_pool, pixel_shuffle, resize_bilinear, sigmoid, Conv2d, ConvOpts, Initializer, PRelu,
    ParamStore,
};
use crate::reparam::edbb::conv_from_params;
use crate::reparam::{EdbbConfig, EdbbLayer};

const CELLS: usize = 4;

enum Block {
    Train(EdbbLayer),
    Fused(Conv2d),
}

impl Block {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        match self {
            Block::Train(l) => l.forward(x),
            Block::Fused(c) => c.forward(x),
        }
    }

    fn describe(&self, g: &mut GraphBuilder, name: &str, x: Node, c: usize) -> Node {
        match self {
            Block::Train(l) => l.describe(g, name, x),
            Block::Fused(_) => g.conv_same(name, x, c, 3),
        }
    }
}

/// Enhanced spatial attention.
struct Esa {
    conv1: Conv2d,
    conv_f: Conv2d,
    conv2: Conv2d,
    conv_max: Conv2d,
    conv3: Conv2d,
    conv3_: Conv2d,
    conv4: Conv2d,
}

impl Esa {
    fn new(store: &mut ParamStore, init: &mut Initializer, p: &str, nf: usize, f: usize) -> Self {
        let mut conv = |name: &str, cin, cout, k, opts| Conv2d::new(store, init, &format!("{p}.{name}"), cin, cout, k, opts);
        Self {
            conv1: conv("conv1", nf, f, 1, ConvOpts::same(1)),
            conv_f: conv("conv_f", f, f, 1, ConvOpts::same(1)),
            conv2: conv("conv2", f, f, 3, ConvOpts::same(3).stride(2, 0)),
            conv_max: conv("conv_max", f, f, 3, ConvOpts::same(3)),
            conv3: conv("conv3", f, f, 3, ConvOpts::same(3)),
            conv3_: conv("conv3_", f, f, 3, ConvOpts::same(3)),
            conv4: conv("conv4", f, nf, 1, ConvOpts::same(1)),
        }
    }

    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let c1_ = self.conv1.forward(x)?;
        let c1 = self.conv2.forward(&c1_)?;
        let v = max_pool(&c1, 7, 3)?;
        let v = self.conv_max.forward(&v)?.relu()?;
        let c3 = self.conv3.forward(&v)?.relu()?;
        let c3 = resize_bilinear(&self.conv3_.forward(&c3)?, h, w)?;
        let cf = self.conv_f.forward(&c1_)?;
        let m = sigmoid(&self.conv4.forward(&(c3 + cf)?)?)?;
        x * m
    }

    fn describe(g: &mut GraphBuilder, p: &str, x: Node, nf: usize, f: usize) -> Node {
        let c1_ = g.conv_same(&format!("{p}.conv1"), x, f, 1);
        let c1 = g.conv(&format!("{p}.conv2"), c1_, f, 3, 2, 0, 1, true);
        let v = g.max_pool(&format!("{p}.pool"), c1, 7, 3);
        let v = g.conv_same(&format!("{p}.conv_max"), v, f, 3);
        let v = g.act(&format!("{p}.relu_max"), "relu", v);
        let c3 = g.conv_same(&format!("{p}.conv3"), v, f, 3);
        let c3 = g.act(&format!("{p}.relu3"), "relu", c3);
        let c3 = g.conv_same(&format!("{p}.conv3_"), c3, f, 3);
        let c3 = g.upsample_bilinear_to(&format!("{p}.upsample"), c3, x);
        let cf = g.conv_same(&format!("{p}.conv_f"), c1_, f, 1);
        let s = g.add(&format!("{p}.add"), c3, cf);
        let c4 = g.conv_same(&format!("{p}.conv4"), s, nf, 1);
        let m = g.act(&format!("{p}.sigmoid"), "sigmoid", c4);
        g.mul(&format!("{p}.gate"), x, m)
    }
}

struct Cell {
    conv1: Conv2d,
    conv2: Block,
    act2: PRelu,
    conv3: Block,
    act3: PRelu,
    distill: [Conv2d; 4],
    fuse: Conv2d,
    esa: Esa,
}

impl Cell {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let out1 = self.conv1.forward(x)?;
        let out2 = self.act2.forward(&self.conv2.forward(&out1)?)?;
        let out3 = self.act3.forward(&self.conv3.forward(&out2)?)?;
        let parts = [x, &out1, &out2, &out3]
            .iter()
            .zip(&self.distill)
            .map(|(t, c)| c.forward(t))
            .collect::<TResult<Vec<_>>>()?;
        let fused = self.fuse.forward(&Tensor::cat(&parts, 1)?)?;
        self.esa.forward(&fused)? + x
    }
}

/// Which form the network is built in.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Form {
    Train,
    Deploy,
}

pub struct Efdn {
    spec: ModelSpec,
    seed: u64,
    store: ParamStore,
    edbb: EdbbConfig,
    head: Conv2d,
    cells: Vec<Cell>,
    local_fuse: [Conv2d; 3],
    tail: Conv2d,
}

impl Efdn {
    pub const DEFAULT_DISTILL: usize = 24;
    pub const DEFAULT_ESA: usize = 12;

    fn distill_channels(spec: &ModelSpec) -> usize {
        spec.variant("distill_channels", Self::DEFAULT_DISTILL as f64) as usize
    }

    fn esa_channels(spec: &ModelSpec) -> usize {
        spec.variant("esa_channels", Self::DEFAULT_ESA as f64) as usize
    }

    /// Builds the multi-branch training form.
    pub fn new_train(spec: ModelSpec, seed: u64, device: &Device) -> Result<Self> {
        Self::build(spec, seed, device, Form::Train, EdbbConfig::default())
    }

    /// Builds the training form with a custom EDBB branch set.
    pub fn with_edbb(spec: ModelSpec, seed: u64, device: &Device, edbb: EdbbConfig) -> Result<Self> {
        Self::build(spec, seed, device, Form::Train, edbb)
    }

    /// An uninitialised deployment-form shell, for loading fused weights.
    pub(crate) fn new_deploy(spec: ModelSpec, seed: u64, device: &Device) -> Result<Self> {
        Self::build(spec, seed, device, Form::Deploy, EdbbConfig::default())
    }

    fn build(spec: ModelSpec, seed: u64, device: &Device, form: Form, edbb: EdbbConfig) -> Result<Self> {
        spec.validate_common()?;
        if spec.blocks != CELLS {
            return Err(Error::Config(format!(
                "{}: the local-fuse wiring needs exactly {CELLS} cells, got {}",
                spec.name, spec.blocks
            )));
        }
        let nf = spec.channels;
        let dc = Self::distill_channels(&spec);
        let f = Self::esa_channels(&spec);
        if dc == 0 || f == 0 {
            return Err(Error::Config(format!("{}: distill and ESA channels must be >= 1", spec.name)));
        }
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed, device);
        let head = Conv2d::new(&mut store, &mut init, "head", 3, nf, 3, ConvOpts::same(3));
        let mut cells = Vec::with_capacity(CELLS);
        for i in 0..CELLS {
            let p = format!("cells.{i}");
            let conv1 = Conv2d::new(&mut store, &mut init, &format!("{p}.conv1"), nf, nf, 1, ConvOpts::same(1));
            let block = |store: &mut ParamStore, init: &mut Initializer, name: &str| -> Result<Block> {
                let name = format!("{p}.{name}");
                Ok(match form {
                    Form::Train => Block::Train(EdbbLayer::new(store, init, &name, nf, &edbb)?),
                    Form::Deploy => Block::Fused(Conv2d::new(store, init, &name, nf, nf, 3, ConvOpts::same(3))),
                })
            };
            let conv2 = block(&mut store, &mut init, "conv2")?;
            let act2 = PRelu::new(&mut store, &init, &format!("{p}.act2"), nf);
            let conv3 = block(&mut store, &mut init, "conv3")?;
            let act3 = PRelu::new(&mut store, &init, &format!("{p}.act3"), nf);
            let distill = std::array::from_fn(|k| {
                Conv2d::new(&mut store, &mut init, &format!("{p}.c{}", k + 1), nf, dc, 1, ConvOpts::same(1))
            });
            let fuse = Conv2d::new(&mut store, &mut init, &format!("{p}.fuse"), 4 * dc, nf, 1, ConvOpts::same(1));
            let esa = Esa::new(&mut store, &mut init, &format!("{p}.esa"), nf, f);
            cells.push(Cell {
                conv1,
                conv2,
                act2,
                conv3,
                act3,
                distill,
                fuse,
                esa,
            });
        }
        let local_fuse = std::array::from_fn(|k| {
            Conv2d::new(&mut store, &mut init, &format!("local_fuse.{k}"), 2 * nf, nf, 1, ConvOpts::same(1))
        });
        let tail = Conv2d::new(&mut store, &mut init, "tail", nf, 48, 3, ConvOpts::same(3));
        Ok(Self {
            spec,
            seed,
            store,
            edbb,
            head,
            cells,
            local_fuse,
            tail,
        })
    }

    /// Collapses every EDBB into a plain 3×3 convolution. The result
    /// computes the same function as `self` in evaluation mode.
    pub fn reparameterize(&self) -> Result<Efdn> {
        if self.is_fused() {
            return Err(Error::State("model is already re-parameterized".into()));
        }
        let device = self.head.weight.device().clone();
        let mut spec = self.spec.clone();
        spec.variant_params.insert("fused".into(), 1.0);
        let deploy = Self::build(spec, self.seed, &device, Form::Deploy, self.edbb.clone())?;
        let mut tensors: HashMap<String, Tensor> = self.store.named_tensors().into_iter().collect();
        let mut scratch = ParamStore::new();
        for (i, cell) in self.cells.iter().enumerate() {
            for (name, block) in [("conv2", &cell.conv2), ("conv3", &cell.conv3)] {
                if let Block::Train(layer) = block {
                    let prefix = format!("cells.{i}.{name}");
                    let conv = conv_from_params(&mut scratch, &prefix, &layer.fuse()?, 1, &device)?;
                    tensors.insert(format!("{prefix}.weight"), conv.weight.as_tensor().clone());
                    if let Some(b) = conv.bias {
                        tensors.insert(format!("{prefix}.bias"), b.as_tensor().clone());
                    }
                }
            }
        }
        let wanted: HashMap<String, Tensor> = deploy
            .store
            .entries()
            .iter()
            .filter_map(|e| tensors.get(&e.name).map(|t| (e.name.clone(), t.clone())))
            .collect();
        deploy.store.load(&wanted)?;
        Ok(deploy)
    }
}

impl SrModel for Efdn {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let out0 = self.head.forward(x)?;
        let o1 = self.cells[0].forward(&out0)?;
        let o2 = self.cells[1].forward(&o1)?;
        let o2f = self.local_fuse[0].forward(&Tensor::cat(&[&o1, &o2], 1)?)?;
        let o3 = self.cells[2].forward(&o2f)?;
        let o3f = self.local_fuse[1].forward(&Tensor::cat(&[&o2, &o3], 1)?)?;
        let o4 = self.cells[3].forward(&o3f)?;
        let o4f = self.local_fuse[2].forward(&Tensor::cat(&[&o2, &o4], 1)?)?;
        pixel_shuffle(&self.tail.forward(&(o4f + out0)?)?, 4)
    }

    fn graph(&self) -> Result<ModelGraph> {
        let nf = self.spec.channels;
        let dc = Self::distill_channels(&self.spec);
        let f = Self::esa_channels(&self.spec);
        let (mut g, x) = GraphBuilder::new(3);
        let out0 = g.conv_same("head", x, nf, 3);
        let cell = |g: &mut GraphBuilder, i: usize, x: Node| -> Node {
            let p = format!("cells.{i}");
            let c = &self.cells[i];
            let out1 = g.conv_same(&format!("{p}.conv1"), x, nf, 1);
            let out2 = c.conv2.describe(g, &format!("{p}.conv2"), out1, nf);
            let out2 = g.prelu(&format!("{p}.act2"), out2);
            let out3 = c.conv3.describe(g, &format!("{p}.conv3"), out2, nf);
            let out3 = g.prelu(&format!("{p}.act3"), out3);
            let parts: Vec<Node> = [x, out1, out2, out3]
                .iter()
                .enumerate()
                .map(|(k, &t)| g.conv_same(&format!("{p}.c{}", k + 1), t, dc, 1))
                .collect();
            let cat = g.concat(&format!("{p}.cat"), &parts);
            let fused = g.conv_same(&format!("{p}.fuse"), cat, nf, 1);
            let att = Esa::describe(g, &format!("{p}.esa"), fused, nf, f);
            g.add(&format!("{p}.residual"), att, x)
        };
        let o1 = cell(&mut g, 0, out0);
        let o2 = cell(&mut g, 1, o1);
        let c = g.concat("local_fuse.0.cat", &[o1, o2]);
        let o2f = g.conv_same("local_fuse.0", c, nf, 1);
        let o3 = cell(&mut g, 2, o2f);
        let c = g.concat("local_fuse.1.cat", &[o2, o3]);
        let o3f = g.conv_same("local_fuse.1", c, nf, 1);
        let o4 = cell(&mut g, 3, o3f);
        let c = g.concat("local_fuse.2.cat", &[o2, o4]);
        let o4f = g.conv_same("local_fuse.2", c, nf, 1);
        let y = g.add("global_residual", o4f, out0);
        let t = g.conv_same("tail", y, 48, 3);
        g.pixel_shuffle("upsample", t, 4);
        g.finish()
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn is_fused(&self) -> bool {
        matches!(self.cells.first().map(|c| &c.conv2), Some(Block::Fused(_)))
    }

    fn set_training(&self, training: bool) {
        for c in &self.cells {
            for b in [&c.conv2, &c.conv3] {
                if let Block::Train(l) = b {
                    l.set_training(training);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fused_and_train_forms_agree() {
        let spec = ModelSpec::new("efdn_small", 8, 4, 0)
            .with_variant("distill_channels", 4.0)
            .with_variant("esa_channels", 4.0);
        let m = Efdn::new_train(spec, 11, &Device::Cpu).unwrap();
        // move batch-norm statistics off their defaults
        m.set_training(true);
        let warm = Initializer::new(1, &Device::Cpu).uniform(&[2, 3, 12, 12], 0.0, 1.0);
        m.forward(&warm).unwrap();
        m.set_training(false);
        let fused = m.reparameterize().unwrap();
        assert!(fused.is_fused() && !m.is_fused());
        let x = Initializer::new(2, &Device::Cpu).uniform(&[1, 3, 10, 14], 0.0, 1.0);
        let a = m.forward(&x).unwrap();
        let b = fused.forward(&x).unwrap();
        assert_eq!(a.dims(), &[1, 3, 40, 56]);
        // random weights amplify activations through the cells, so compare
        // relative to the output magnitude
        let peak = a.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        let d = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(d / peak.max(1.0) < 1e-5, "max diff {d} at peak {peak}");
        assert!(fused.reparameterize().is_err());
    }

    #[test]
    fn graphs_match_stores() {
        let spec = ModelSpec::new("efdn_small", 8, 4, 0);
        let m = Efdn::new_train(spec, 0, &Device::Cpu).unwrap();
        assert_eq!(m.graph().unwrap().parameter_count, m.params().trainable_elements());
        let f = m.reparameterize().unwrap();
        assert_eq!(f.graph().unwrap().parameter_count, f.params().trainable_elements());
    }

    #[test]
    fn wrong_cell_count_is_rejected() {
        let spec = ModelSpec::new("efdn_bad", 8, 3, 0);
        assert!(matches!(Efdn::new_train(spec, 0, &Device::Cpu), Err(Error::Config(_))));
    }
}
