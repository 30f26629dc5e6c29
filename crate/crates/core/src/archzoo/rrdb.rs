//! ESRGAN-style RRDB generator. The challenge baseline uses 64 channels,
//! 23 blocks and growth 32; TinyESRGAN shrinks it to 32 / 17 / 18.
//!
//! Parameter names follow the usual `RRDBNet` state-dict layout
//! (`conv_first`, `body.{i}.rdb{j}.conv{k}`, `conv_body`, `conv_up1`, ...).

use candle_core::{Device, Result as TResult, Tensor};

use super::graph::{GraphBuilder, ModelGraph, Node};
use super::{ModelSpec, SrModel};
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, resize_nearest, Conv2d, ConvOpts, Initializer, ParamStore};

const RESIDUAL_SCALE: f64 = 0.2;
const SLOPE: f64 = 0.2;
const TRUNK_GAIN: f64 = 0.1;

struct DenseBlock {
    convs: [Conv2d; 5],
}

impl DenseBlock {
    fn new(store: &mut ParamStore, init: &mut Initializer, prefix: &str, nf: usize, gc: usize) -> Self {
        let opts = ConvOpts::same(3).gain(TRUNK_GAIN);
        let convs = std::array::from_fn(|i| {
            let out = if i == 4 { nf } else { gc };
            Conv2d::new(store, init, &format!("{prefix}.conv{}", i + 1), nf + i * gc, out, 3, opts)
        });
        Self { convs }
    }

    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let mut feats = vec![x.clone()];
        for conv in &self.convs[..4] {
            let inp = Tensor::cat(&feats, 1)?;
            feats.push(leaky_relu(&conv.forward(&inp)?, SLOPE)?);
        }
        let x5 = self.convs[4].forward(&Tensor::cat(&feats, 1)?)?;
        (x5 * RESIDUAL_SCALE)? + x
    }

    fn describe(g: &mut GraphBuilder, prefix: &str, x: Node, nf: usize, gc: usize) -> Node {
        let mut feats = vec![x];
        for i in 0..4 {
            let inp = if i == 0 { x } else { g.concat(&format!("{prefix}.cat{i}"), &feats) };
            let c = g.conv_same(&format!("{prefix}.conv{}", i + 1), inp, gc, 3);
            feats.push(g.act(&format!("{prefix}.lrelu{}", i + 1), "leaky_relu", c));
        }
        let inp = g.concat(&format!("{prefix}.cat4"), &feats);
        let c5 = g.conv_same(&format!("{prefix}.conv5"), inp, nf, 3);
        g.add(&format!("{prefix}.residual"), c5, x)
    }
}

struct Rrdb {
    blocks: [DenseBlock; 3],
}

impl Rrdb {
    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let mut out = x.clone();
        for b in &self.blocks {
            out = b.forward(&out)?;
        }
        (out * RESIDUAL_SCALE)? + x
    }
}

/// Residual-in-residual dense block network for ×4 upscaling.
pub struct RrdbNet {
    spec: ModelSpec,
    seed: u64,
    store: ParamStore,
    conv_first: Conv2d,
    body: Vec<Rrdb>,
    conv_body: Conv2d,
    conv_up1: Conv2d,
    conv_up2: Conv2d,
    conv_hr: Conv2d,
    conv_last: Conv2d,
}

impl RrdbNet {
    pub fn new(spec: ModelSpec, seed: u64, device: &Device) -> Result<Self> {
        spec.validate_common()?;
        if spec.growth == 0 {
            return Err(Error::Config(format!(
                "{}: dense blocks need a growth rate >= 1 (conv5 reads channels + 4*growth)",
                spec.name
            )));
        }
        let (nf, gc) = (spec.channels, spec.growth);
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed, device);
        let plain = ConvOpts::same(3);
        let conv_first = Conv2d::new(&mut store, &mut init, "conv_first", 3, nf, 3, plain);
        let body = (0..spec.blocks)
            .map(|i| Rrdb {
                blocks: std::array::from_fn(|j| {
                    DenseBlock::new(&mut store, &mut init, &format!("body.{i}.rdb{}", j + 1), nf, gc)
                }),
            })
            .collect();
        let mut conv = |name: &str, out: usize| Conv2d::new(&mut store, &mut init, name, nf, out, 3, plain);
        let conv_body = conv("conv_body", nf);
        let conv_up1 = conv("conv_up1", nf);
        let conv_up2 = conv("conv_up2", nf);
        let conv_hr = conv("conv_hr", nf);
        let conv_last = conv("conv_last", 3);
        Ok(Self {
            spec,
            seed,
            store,
            conv_first,
            body,
            conv_body,
            conv_up1,
            conv_up2,
            conv_hr,
            conv_last,
        })
    }
}

impl SrModel for RrdbNet {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let feat = self.conv_first.forward(x)?;
        let mut body = feat.clone();
        for b in &self.body {
            body = b.forward(&body)?;
        }
        let feat = (feat + self.conv_body.forward(&body)?)?;
        let (_, _, h, w) = feat.dims4()?;
        let feat = leaky_relu(&self.conv_up1.forward(&resize_nearest(&feat, 2 * h, 2 * w)?)?, SLOPE)?;
        let feat = leaky_relu(&self.conv_up2.forward(&resize_nearest(&feat, 4 * h, 4 * w)?)?, SLOPE)?;
        self.conv_last
            .forward(&leaky_relu(&self.conv_hr.forward(&feat)?, SLOPE)?)
    }

    fn graph(&self) -> Result<ModelGraph> {
        let (nf, gc) = (self.spec.channels, self.spec.growth);
        let (mut g, x) = GraphBuilder::new(3);
        let feat = g.conv_same("conv_first", x, nf, 3);
        let mut body = feat;
        for i in 0..self.spec.blocks {
            let inp = body;
            for j in 1..=3 {
                body = DenseBlock::describe(&mut g, &format!("body.{i}.rdb{j}"), body, nf, gc);
            }
            body = g.add(&format!("body.{i}.residual"), body, inp);
        }
        let trunk = g.conv_same("conv_body", body, nf, 3);
        let mut feat = g.add("trunk_residual", feat, trunk);
        for (k, name) in ["conv_up1", "conv_up2"].iter().enumerate() {
            let up = g.upsample_nearest_by(&format!("upsample{}", k + 1), feat, 2);
            let c = g.conv_same(name, up, nf, 3);
            feat = g.act(&format!("{name}.lrelu"), "leaky_relu", c);
        }
        let hr = g.conv_same("conv_hr", feat, nf, 3);
        let hr = g.act("conv_hr.lrelu", "leaky_relu", hr);
        g.conv_same("conv_last", hr, 3, 3);
        g.finish()
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn seed(&self) -> u64 {
        self.seed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelSpec {
        ModelSpec::new("rrdb_test", 8, 1, 4)
    }

    #[test]
    fn scale_contract_on_small_config() {
        let m = RrdbNet::new(tiny(), 1, &Device::Cpu).unwrap();
        let x = Tensor::zeros((1, 3, 8, 8), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert_eq!(m.forward(&x).unwrap().dims(), &[1, 3, 32, 32]);
    }

    #[test]
    fn zero_growth_is_a_configuration_error() {
        let spec = ModelSpec::new("bad", 8, 1, 0);
        assert!(matches!(RrdbNet::new(spec, 0, &Device::Cpu), Err(Error::Config(_))));
    }

    #[test]
    fn graph_params_match_store() {
        let m = RrdbNet::new(tiny(), 1, &Device::Cpu).unwrap();
        assert_eq!(m.graph().unwrap().parameter_count, m.params().trainable_elements());
    }
}
