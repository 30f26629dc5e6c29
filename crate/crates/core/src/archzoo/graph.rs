//! Static description of a network: one record per layer, wired as a DAG,
//! with enough shape information to count parameters and operations for
//! any input size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::pooled_len;

/// One spatial transform on the way from the network input to a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SpatialStep {
    /// `n · num / den` (exact for the scale factors used here).
    Scale { num: usize, den: usize },
    /// Sliding window: `(n + 2p − k) / s + 1`. A pooling window wider than
    /// the input shrinks to the input.
    Window {
        kernel: usize,
        stride: usize,
        padding: usize,
        shrink: bool,
    },
    /// `floor(n / d)`, as used by adaptive pooling targets.
    DivFloor { divisor: usize },
}

impl SpatialStep {
    fn apply(&self, n: usize) -> Result<usize> {
        Ok(match *self {
            SpatialStep::Scale { num, den } => n * num / den,
            SpatialStep::Window {
                kernel,
                stride,
                padding,
                shrink,
            } => {
                if shrink && padding == 0 {
                    pooled_len(n, kernel, stride)
                } else {
                    let padded = n + 2 * padding;
                    if padded < kernel {
                        return Err(Error::Shape(format!(
                            "window {kernel} larger than padded extent {padded}"
                        )));
                    }
                    (padded - kernel) / stride + 1
                }
            }
            SpatialStep::DivFloor { divisor } => (n / divisor).max(1),
        })
    }
}

/// How a layer's output resolution derives from the network input.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent(pub Vec<SpatialStep>);

impl Extent {
    pub fn then(&self, step: SpatialStep) -> Self {
        let mut steps = self.0.clone();
        steps.push(step);
        Extent(steps)
    }

    pub fn resolve(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let mut h = height;
        let mut w = width;
        for s in &self.0 {
            h = s.apply(h)?;
            w = s.apply(w)?;
        }
        Ok((h, w))
    }

    /// Area ratio of this extent against the input, for power-of-two
    /// scale-only chains (`None` otherwise).
    pub fn resolution_divisor(&self) -> Option<f64> {
        let mut r = 1.0;
        for s in &self.0 {
            match *s {
                SpatialStep::Scale { num, den } => r *= den as f64 / num as f64,
                SpatialStep::DivFloor { divisor } => r *= divisor as f64,
                SpatialStep::Window { stride: 1, .. } => {}
                _ => return None,
            }
        }
        Some(r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv2d,
    Activation { function: String },
    LayerNorm,
    BatchNorm,
    PRelu,
    Add,
    Mul,
    Concat,
    /// Channel range `[start, start + len)` of the input.
    Slice { start: usize },
    PixelShuffle { factor: usize },
    UpsampleNearest,
    UpsampleBilinear,
    MaxPool,
    AdaptiveMaxPool,
    /// Fixed depthwise 3×3 operator with a learnable per-channel scale and
    /// bias.
    FixedFilter { filter: String },
    /// Anything the accountant does not know how to cost.
    Custom { name: String },
}

impl LayerKind {
    pub fn label(&self) -> String {
        match self {
            LayerKind::Activation { function } => function.clone(),
            LayerKind::Custom { name } => name.clone(),
            LayerKind::FixedFilter { filter } => filter.clone(),
            other => format!("{other:?}")
                .split_whitespace()
                .next()
                .unwrap_or_default()
                .to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub groups: usize,
    pub bias: bool,
    /// Output resolution relative to the network input.
    pub extent: Extent,
}

impl LayerDesc {
    /// Weight plus bias elements owned by this layer.
    pub fn param_count(&self) -> u64 {
        match self.kind {
            LayerKind::Conv2d => {
                let w = self.out_channels * (self.in_channels / self.groups.max(1))
                    * self.kernel_size
                    * self.kernel_size;
                (w + if self.bias { self.out_channels } else { 0 }) as u64
            }
            LayerKind::LayerNorm | LayerKind::BatchNorm => 2 * self.out_channels as u64,
            LayerKind::PRelu => self.out_channels as u64,
            LayerKind::FixedFilter { .. } => 2 * self.out_channels as u64,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub layers: Vec<LayerDesc>,
    pub parameter_count: u64,
}

impl ModelGraph {
    pub fn empty() -> Self {
        Self {
            layers: Vec::new(),
            parameter_count: 0,
        }
    }

    /// Checks DAG wiring, channel agreement, and the parameter total.
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(&bad) = l.inputs.iter().find(|&&j| j >= i) {
                return Err(Error::Shape(format!(
                    "layer `{}` reads from layer {bad} which is not earlier",
                    l.name
                )));
            }
            let ins: Vec<&LayerDesc> = l.inputs.iter().map(|&j| &self.layers[j]).collect();
            let expect_in = match l.kind {
                LayerKind::Input => l.in_channels,
                LayerKind::Concat => ins.iter().map(|p| p.out_channels).sum(),
                _ => ins.first().map(|p| p.out_channels).unwrap_or(0),
            };
            if expect_in != l.in_channels {
                return Err(Error::Shape(format!(
                    "layer `{}` expects {} input channels, producers give {}",
                    l.name, l.in_channels, expect_in
                )));
            }
            if matches!(l.kind, LayerKind::Add | LayerKind::Mul) {
                if ins.len() != 2 {
                    return Err(Error::Shape(format!("layer `{}` needs two inputs", l.name)));
                }
                if ins[0].out_channels != ins[1].out_channels || ins[0].extent != ins[1].extent {
                    return Err(Error::Shape(format!(
                        "layer `{}` combines mismatched tensors",
                        l.name
                    )));
                }
            }
            if l.kind == LayerKind::Concat && ins.windows(2).any(|p| p[0].extent != p[1].extent) {
                return Err(Error::Shape(format!(
                    "layer `{}` concatenates different resolutions",
                    l.name
                )));
            }
        }
        let total: u64 = self.layers.iter().map(LayerDesc::param_count).sum();
        if total != self.parameter_count {
            return Err(Error::Shape(format!(
                "parameter_count {} disagrees with layer sum {}",
                self.parameter_count, total
            )));
        }
        Ok(())
    }

    pub fn output(&self) -> Option<&LayerDesc> {
        self.layers.last()
    }
}

/// Handle to a node in a graph under construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(usize);

/// Incremental graph construction. Wiring mistakes are collected and
/// reported by [`GraphBuilder::finish`].
#[derive(Debug)]
pub struct GraphBuilder {
    layers: Vec<LayerDesc>,
    error: Option<String>,
}

impl GraphBuilder {
    pub fn new(in_channels: usize) -> (Self, Node) {
        let input = LayerDesc {
            name: "input".into(),
            kind: LayerKind::Input,
            inputs: vec![],
            in_channels,
            out_channels: in_channels,
            kernel_size: 0,
            stride: 1,
            groups: 1,
            bias: false,
            extent: Extent::default(),
        };
        (
            Self {
                layers: vec![input],
                error: None,
            },
            Node(0),
        )
    }

    fn at(&self, n: Node) -> &LayerDesc {
        &self.layers[n.0]
    }

    pub fn channels(&self, n: Node) -> usize {
        self.at(n).out_channels
    }

    fn fail(&mut self, msg: String) {
        if self.error.is_none() {
            self.error = Some(msg);
        }
    }

    fn push(&mut self, desc: LayerDesc) -> Node {
        self.layers.push(desc);
        Node(self.layers.len() - 1)
    }

    fn simple(&mut self, name: &str, kind: LayerKind, x: Node, out_channels: usize, extent: Extent) -> Node {
        let c = self.channels(x);
        self.push(LayerDesc {
            name: name.into(),
            kind,
            inputs: vec![x.0],
            in_channels: c,
            out_channels,
            kernel_size: 0,
            stride: 1,
            groups: 1,
            bias: false,
            extent,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        x: Node,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> Node {
        let cin = self.channels(x);
        if cin % groups != 0 || out_channels % groups != 0 {
            self.fail(format!("conv `{name}`: groups {groups} do not divide {cin}->{out_channels}"));
        }
        let extent = if stride == 1 && 2 * padding + 1 == kernel {
            self.at(x).extent.clone()
        } else {
            self.at(x).extent.then(SpatialStep::Window {
                kernel,
                stride,
                padding,
                shrink: false,
            })
        };
        self.push(LayerDesc {
            name: name.into(),
            kind: LayerKind::Conv2d,
            inputs: vec![x.0],
            in_channels: cin,
            out_channels,
            kernel_size: kernel,
            stride,
            groups,
            bias,
            extent,
        })
    }

    /// Stride-1 "same" convolution with bias.
    pub fn conv_same(&mut self, name: &str, x: Node, out_channels: usize, kernel: usize) -> Node {
        self.conv(name, x, out_channels, kernel, 1, kernel / 2, 1, true)
    }

    pub fn act(&mut self, name: &str, function: &str, x: Node) -> Node {
        let c = self.channels(x);
        let e = self.at(x).extent.clone();
        self.simple(
            name,
            LayerKind::Activation {
                function: function.into(),
            },
            x,
            c,
            e,
        )
    }

    pub fn layer_norm(&mut self, name: &str, x: Node) -> Node {
        let c = self.channels(x);
        let e = self.at(x).extent.clone();
        self.simple(name, LayerKind::LayerNorm, x, c, e)
    }

    pub fn batch_norm(&mut self, name: &str, x: Node) -> Node {
        let c = self.channels(x);
        let e = self.at(x).extent.clone();
        self.simple(name, LayerKind::BatchNorm, x, c, e)
    }

    pub fn prelu(&mut self, name: &str, x: Node) -> Node {
        let c = self.channels(x);
        let e = self.at(x).extent.clone();
        self.simple(name, LayerKind::PRelu, x, c, e)
    }

    pub fn fixed_filter(&mut self, name: &str, filter: &str, x: Node) -> Node {
        let c = self.channels(x);
        let e = self.at(x).extent.clone();
        let n = self.simple(name, LayerKind::FixedFilter { filter: filter.into() }, x, c, e);
        let l = self.layers.last_mut().expect("just pushed");
        l.kernel_size = 3;
        l.groups = c;
        n
    }

    fn binary(&mut self, name: &str, kind: LayerKind, a: Node, b: Node) -> Node {
        let (la, lb) = (self.at(a), self.at(b));
        if la.out_channels != lb.out_channels || la.extent != lb.extent {
            let msg = format!(
                "`{name}`: cannot combine {}ch@{:?} with {}ch@{:?}",
                la.out_channels, la.extent, lb.out_channels, lb.extent
            );
            self.fail(msg);
        }
        let c = self.channels(a);
        let e = self.at(a).extent.clone();
        self.push(LayerDesc {
            name: name.into(),
            kind,
            inputs: vec![a.0, b.0],
            in_channels: c,
            out_channels: c,
            kernel_size: 0,
            stride: 1,
            groups: 1,
            bias: false,
            extent: e,
        })
    }

    pub fn add(&mut self, name: &str, a: Node, b: Node) -> Node {
        self.binary(name, LayerKind::Add, a, b)
    }

    pub fn mul(&mut self, name: &str, a: Node, b: Node) -> Node {
        self.binary(name, LayerKind::Mul, a, b)
    }

    pub fn concat(&mut self, name: &str, parts: &[Node]) -> Node {
        let e = self.at(parts[0]).extent.clone();
        if parts.iter().any(|p| self.at(*p).extent != e) {
            self.fail(format!("`{name}`: concatenating different resolutions"));
        }
        let c: usize = parts.iter().map(|p| self.channels(*p)).sum();
        self.push(LayerDesc {
            name: name.into(),
            kind: LayerKind::Concat,
            inputs: parts.iter().map(|p| p.0).collect(),
            in_channels: c,
            out_channels: c,
            kernel_size: 0,
            stride: 1,
            groups: 1,
            bias: false,
            extent: e,
        })
    }

    pub fn slice(&mut self, name: &str, x: Node, start: usize, len: usize) -> Node {
        if start + len > self.channels(x) {
            self.fail(format!("`{name}`: slice beyond {} channels", self.channels(x)));
        }
        let e = self.at(x).extent.clone();
        self.simple(name, LayerKind::Slice { start }, x, len, e)
    }

    pub fn pixel_shuffle(&mut self, name: &str, x: Node, factor: usize) -> Node {
        let c = self.channels(x);
        if c % (factor * factor) != 0 {
            self.fail(format!("`{name}`: {c} channels not divisible by {factor}^2"));
        }
        let e = self.at(x).extent.then(SpatialStep::Scale {
            num: factor,
            den: 1,
        });
        self.simple(name, LayerKind::PixelShuffle { factor }, x, c / (factor * factor), e)
    }

    pub fn upsample_nearest_by(&mut self, name: &str, x: Node, factor: usize) -> Node {
        let c = self.channels(x);
        let e = self.at(x).extent.then(SpatialStep::Scale {
            num: factor,
            den: 1,
        });
        self.simple(name, LayerKind::UpsampleNearest, x, c, e)
    }

    /// Nearest resize back to the resolution of `like`.
    pub fn upsample_nearest_to(&mut self, name: &str, x: Node, like: Node) -> Node {
        let c = self.channels(x);
        let e = self.at(like).extent.clone();
        self.simple(name, LayerKind::UpsampleNearest, x, c, e)
    }

    pub fn upsample_bilinear_by(&mut self, name: &str, x: Node, factor: usize) -> Node {
        let c = self.channels(x);
        let e = self.at(x).extent.then(SpatialStep::Scale {
            num: factor,
            den: 1,
        });
        self.simple(name, LayerKind::UpsampleBilinear, x, c, e)
    }

    pub fn upsample_bilinear_to(&mut self, name: &str, x: Node, like: Node) -> Node {
        let c = self.channels(x);
        let e = self.at(like).extent.clone();
        self.simple(name, LayerKind::UpsampleBilinear, x, c, e)
    }

    pub fn max_pool(&mut self, name: &str, x: Node, kernel: usize, stride: usize) -> Node {
        let c = self.channels(x);
        let e = self.at(x).extent.then(SpatialStep::Window {
            kernel,
            stride,
            padding: 0,
            shrink: true,
        });
        self.simple(name, LayerKind::MaxPool, x, c, e)
    }

    pub fn adaptive_max_pool_div(&mut self, name: &str, x: Node, divisor: usize) -> Node {
        let c = self.channels(x);
        let e = self.at(x).extent.then(SpatialStep::DivFloor { divisor });
        self.simple(name, LayerKind::AdaptiveMaxPool, x, c, e)
    }

    pub fn finish(self) -> Result<ModelGraph> {
        if let Some(e) = self.error {
            return Err(Error::Shape(e));
        }
        let parameter_count = self.layers.iter().map(LayerDesc::param_count).sum();
        let g = ModelGraph {
            layers: self.layers,
            parameter_count,
        };
        g.validate()?;
        Ok(g)
    }
}
