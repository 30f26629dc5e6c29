//! Parameter and FLOPs accounting over [`ModelGraph`], and the challenge
//! budget gate.
//!
//! Convention: one multiply-accumulate is one reported FLOP. Convolutions
//! contribute `kh·kw·(Cin/groups)·Cout·Hout·Wout` (bias excluded), fixed
//! depthwise filters `9·C·H·W`, nearest upsampling one op and bilinear
//! upsampling four ops per output element. Biases, activations, norms,
//! elementwise arithmetic, pooling, slicing, concatenation and pixel
//! shuffle are treated as free data movement.

use std::time::Instant;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::archzoo::{LayerKind, ModelGraph, SrModel};
use crate::error::{Error, Result};
use crate::image::ImagePlane;

pub const PARAM_LIMIT: u64 = 5_000_000;
pub const GMAC_LIMIT: f64 = 2000.0;
/// Official audit input `(channels, height, width)`.
pub const AUDIT_INPUT: (usize, usize, usize) = (3, 540, 960);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub model: String,
    pub params: u64,
    pub gmacs: f64,
    pub input_size: (usize, usize, usize),
    pub param_limit: u64,
    pub gmac_limit: f64,
    pub passed: bool,
    pub convention: String,
}

impl BudgetReport {
    pub fn new(model: &str, params: u64, gmacs: f64, input_size: (usize, usize, usize)) -> Self {
        Self {
            model: model.into(),
            params,
            gmacs,
            input_size,
            param_limit: PARAM_LIMIT,
            gmac_limit: GMAC_LIMIT,
            passed: params <= PARAM_LIMIT && gmacs <= GMAC_LIMIT,
            convention: "MAC".into(),
        }
    }
}

pub fn count_params(graph: &ModelGraph) -> u64 {
    graph.layers.iter().map(|l| l.param_count()).sum()
}

/// Multiply-accumulates of one forward pass at `input = (C, H, W)`, in
/// units of 10^9.
pub fn count_flops(graph: &ModelGraph, input: (usize, usize, usize)) -> Result<f64> {
    let (_, h, w) = input;
    let mut total: u128 = 0;
    for l in &graph.layers {
        let (oh, ow) = l.extent.resolve(h, w)?;
        let out = (l.out_channels * oh * ow) as u128;
        total += match &l.kind {
            LayerKind::Conv2d => {
                let per = l.kernel_size * l.kernel_size * (l.in_channels / l.groups.max(1));
                per as u128 * out
            }
            LayerKind::FixedFilter { .. } => 9 * out,
            LayerKind::UpsampleNearest => out,
            LayerKind::UpsampleBilinear => 4 * out,
            LayerKind::Custom { name } => {
                return Err(Error::Accounting {
                    layer: l.name.clone(),
                    kind: name.clone(),
                })
            }
            LayerKind::Input
            | LayerKind::Activation { .. }
            | LayerKind::LayerNorm
            | LayerKind::BatchNorm
            | LayerKind::PRelu
            | LayerKind::Add
            | LayerKind::Mul
            | LayerKind::Concat
            | LayerKind::Slice { .. }
            | LayerKind::PixelShuffle { .. }
            | LayerKind::MaxPool
            | LayerKind::AdaptiveMaxPool => 0,
        };
    }
    Ok(total as f64 / 1e9)
}

pub fn audit_graph(name: &str, graph: &ModelGraph) -> Result<BudgetReport> {
    let gmacs = count_flops(graph, AUDIT_INPUT)?;
    Ok(BudgetReport::new(name, count_params(graph), gmacs, AUDIT_INPUT))
}

/// Budget report at the official 3×540×960 input.
pub fn audit(model: &dyn SrModel) -> Result<BudgetReport> {
    audit_graph(&model.spec().name, &model.graph()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub mean_ms: f64,
    pub variance_ms2: f64,
    pub runs: usize,
}

/// Wall-clock milliseconds per image, excluding `warmup` untimed passes
/// over the first input. Includes tensor upload and download.
pub fn measure_runtime(model: &dyn SrModel, inputs: &[ImagePlane], warmup: usize) -> Result<RuntimeStats> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if warmup == 0 {
        return Err(Error::Config("warmup must be at least 1".into()));
    }
    let dev = Device::Cpu;
    let run = |img: &ImagePlane| -> Result<()> {
        let y = model.forward(&img.to_tensor(&dev)?)?;
        ImagePlane::from_tensor(&y.clamp(0f32, 1f32)?)?;
        Ok(())
    };
    for _ in 0..warmup {
        run(&inputs[0])?;
    }
    let mut times = Vec::with_capacity(inputs.len());
    for img in inputs {
        let t = Instant::now();
        run(img)?;
        dev.synchronize()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let variance = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(RuntimeStats {
        mean_ms: mean,
        variance_ms2: variance,
        runs: times.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archzoo::GraphBuilder;

    fn one_conv() -> ModelGraph {
        let (mut g, x) = GraphBuilder::new(3);
        g.conv_same("c", x, 3, 3);
        g.finish().unwrap()
    }

    #[test]
    fn single_conv_counts() {
        let g = one_conv();
        assert_eq!(count_params(&g), 84);
        assert!((count_flops(&g, (3, 4, 4)).unwrap() * 1e9 - 1296.0).abs() < 1e-6);
    }

    #[test]
    fn empty_graph_passes() {
        let r = audit_graph("empty", &ModelGraph::empty()).unwrap();
        assert_eq!((r.params, r.gmacs, r.passed), (0, 0.0, true));
    }

    #[test]
    fn custom_layer_is_an_accounting_error() {
        let mut g = one_conv();
        g.layers[1].kind = LayerKind::Custom { name: "mystery".into() };
        match count_flops(&g, AUDIT_INPUT) {
            Err(Error::Accounting { layer, kind }) => assert_eq!((layer.as_str(), kind.as_str()), ("c", "mystery")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flops_scale_with_area() {
        let g = one_conv();
        let a = count_flops(&g, (3, 20, 30)).unwrap();
        let b = count_flops(&g, (3, 40, 60)).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12);
    }

    #[test]
    fn budget_flags() {
        assert!(!BudgetReport::new("m", PARAM_LIMIT + 1, 1.0, AUDIT_INPUT).passed);
        assert!(!BudgetReport::new("m", 1, GMAC_LIMIT + 0.1, AUDIT_INPUT).passed);
        assert!(BudgetReport::new("m", PARAM_LIMIT, GMAC_LIMIT, AUDIT_INPUT).passed);
    }

    #[test]
    fn empty_input_set_is_rejected() {
        let m = crate::archzoo::ModelKind::TinyEsrgan
            .build_with(crate::archzoo::ModelSpec::new("t", 4, 1, 2), 0)
            .unwrap();
        let err = measure_runtime(m.as_ref(), &[], 1).unwrap_err();
        assert_eq!(err.to_string(), "empty input set");
    }
}
