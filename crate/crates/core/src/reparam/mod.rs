//! Structural re-parameterization: folding the linear branches of an
//! edge-enhanced diverse branch block (EDBB) into one 3×3 convolution.
//!
//! All merges are computed in `f64` and stored back as `f32`.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod edbb;

pub use edbb::{EdbbConfig, EdbbLayer};

/// Convolution weights `(out, in, kh, kw)` and bias `(out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel: Array4<f32>,
    pub bias: Array1<f32>,
}

impl ConvParams {
    pub fn new(kernel: Array4<f32>, bias: Array1<f32>) -> Result<Self> {
        let (o, _, kh, kw) = kernel.dim();
        if bias.len() != o {
            return Err(Error::Shape(format!(
                "bias has {} entries for {o} output channels",
                bias.len()
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("kernel {kh}x{kw} must be odd-sized")));
        }
        Ok(Self { kernel, bias })
    }

    pub fn zeros(out: usize, inp: usize, k: usize) -> Self {
        Self {
            kernel: Array4::zeros((out, inp, k, k)),
            bias: Array1::zeros(out),
        }
    }

    /// The 3×3 kernel whose output equals its input.
    pub fn identity(channels: usize) -> Self {
        let mut p = Self::zeros(channels, channels, 3);
        for c in 0..channels {
            p.kernel[[c, c, 1, 1]] = 1.0;
        }
        p
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim().1
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        let (_, _, kh, kw) = self.kernel.dim();
        (kh, kw)
    }

    fn kernel_f64(&self) -> Array4<f64> {
        self.kernel.mapv(f64::from)
    }

    fn bias_f64(&self) -> Array1<f64> {
        self.bias.mapv(f64::from)
    }

    fn from_f64(kernel: Array4<f64>, bias: Array1<f64>) -> Self {
        Self {
            kernel: kernel.mapv(|v| v as f32),
            bias: bias.mapv(|v| v as f32),
        }
    }

    /// Zero-pads the kernel symmetrically to `k×k`.
    fn padded_to(&self, k: usize) -> Result<Array4<f64>> {
        let (o, i, kh, kw) = self.kernel.dim();
        if kh > k || kw > k {
            return Err(Error::Shape(format!("kernel {kh}x{kw} exceeds {k}x{k}")));
        }
        let mut out = Array4::zeros((o, i, k, k));
        let (oy, ox) = ((k - kh) / 2, (k - kw) / 2);
        out.slice_mut(s![.., .., oy..oy + kh, ox..ox + kw])
            .assign(&self.kernel_f64());
        Ok(out)
    }
}

/// Inference-time batch-norm statistics and affine terms.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub epsilon: f32,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            epsilon: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels();
        if [self.beta.len(), self.running_mean.len(), self.running_var.len()]
            .iter()
            .any(|&n| n != c)
        {
            return Err(Error::Shape("norm statistics have unequal lengths".into()));
        }
        if self
            .running_var
            .iter()
            .any(|&v| f64::from(v) + f64::from(self.epsilon) <= 0.0)
        {
            return Err(Error::Config("running_var + epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed 3×3 edge operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeFilter {
    SobelX,
    SobelY,
    Laplacian,
}

impl EdgeFilter {
    pub const ALL: [EdgeFilter; 3] = [EdgeFilter::SobelX, EdgeFilter::SobelY, EdgeFilter::Laplacian];

    /// Cross-correlation taps, row-major.
    pub const fn taps(self) -> [[f32; 3]; 3] {
        match self {
            EdgeFilter::SobelX => [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]],
            EdgeFilter::SobelY => [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]],
            EdgeFilter::Laplacian => [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeFilter::SobelX => "sobel_x",
            EdgeFilter::SobelY => "sobel_y",
            EdgeFilter::Laplacian => "laplacian",
        }
    }
}

impl fmt::Display for EdgeFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EdgeFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown edge filter `{s}`")))
    }
}

/// A depthwise fixed-filter branch with learnable per-channel scale and
/// bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeBranch {
    pub filter: EdgeFilter,
    pub per_channel_scale: Array1<f32>,
    pub bias: Array1<f32>,
}

/// Folds inference-mode batch norm into the preceding convolution.
pub fn fuse_conv_norm(conv: &ConvParams, norm: &NormStats) -> Result<ConvParams> {
    norm.validate()?;
    if norm.channels() != conv.out_channels() {
        return Err(Error::Shape(format!(
            "norm has {} channels, conv outputs {}",
            norm.channels(),
            conv.out_channels()
        )));
    }
    let mut k = conv.kernel_f64();
    let mut b = conv.bias_f64();
    for o in 0..conv.out_channels() {
        let std = (f64::from(norm.running_var[o]) + f64::from(norm.epsilon)).sqrt();
        let t = f64::from(norm.gamma[o]) / std;
        k.slice_mut(s![o, .., .., ..]).mapv_inplace(|v| v * t);
        b[o] = f64::from(norm.beta[o]) + (b[o] - f64::from(norm.running_mean[o])) * t;
    }
    Ok(ConvParams::from_f64(k, b))
}

/// Sums parallel branches into one kernel of the largest branch size
/// (at most 3×3).
pub fn merge_parallel(branches: &[ConvParams]) -> Result<ConvParams> {
    let first = branches
        .first()
        .ok_or_else(|| Error::Shape("no branches to merge".into()))?;
    let (o, i) = (first.out_channels(), first.in_channels());
    let k = branches
        .iter()
        .map(|b| {
            let (kh, kw) = b.kernel_size();
            kh.max(kw)
        })
        .max()
        .unwrap_or(1);
    if k > 3 {
        return Err(Error::Shape(format!("branch kernel {k}x{k} exceeds 3x3")));
    }
    let mut kernel = Array4::<f64>::zeros((o, i, k, k));
    let mut bias = Array1::<f64>::zeros(o);
    for br in branches {
        if br.out_channels() != o || br.in_channels() != i {
            return Err(Error::Shape(format!(
                "branch is {}->{}, expected {i}->{o}",
                br.in_channels(),
                br.out_channels()
            )));
        }
        kernel += &br.padded_to(k)?;
        bias += &br.bias_f64();
    }
    Ok(ConvParams::from_f64(kernel, bias))
}

/// Composes a 1×1 convolution followed by a 3×3 convolution.
///
/// Equivalence with the two-step forward holds everywhere when the
/// intermediate map is padded with the first convolution's bias (which is
/// what [`EdbbLayer`] does); with zero padding it holds on the interior.
pub fn merge_sequential_1x1_3x3(first: &ConvParams, second: &ConvParams) -> Result<ConvParams> {
    if first.kernel_size() != (1, 1) {
        return Err(Error::Shape("first kernel must be 1x1".into()));
    }
    if first.out_channels() != second.in_channels() {
        return Err(Error::Shape(format!(
            "first outputs {} channels, second reads {}",
            first.out_channels(),
            second.in_channels()
        )));
    }
    let k1 = first.kernel_f64();
    let k2 = second.kernel_f64();
    let b1 = first.bias_f64();
    let (o, m, kh, kw) = k2.dim();
    let i = first.in_channels();
    let mut kernel = Array4::<f64>::zeros((o, i, kh, kw));
    let mut bias = second.bias_f64();
    for oc in 0..o {
        for mc in 0..m {
            for y in 0..kh {
                for x in 0..kw {
                    let w2 = k2[[oc, mc, y, x]];
                    bias[oc] += w2 * b1[mc];
                    for ic in 0..i {
                        kernel[[oc, ic, y, x]] += w2 * k1[[mc, ic, 0, 0]];
                    }
                }
            }
        }
    }
    Ok(ConvParams::from_f64(kernel, bias))
}

/// Expresses a depthwise edge branch as a full `(C, C, 3, 3)` kernel with
/// zeros off the channel diagonal.
pub fn edge_to_conv(edge: &EdgeBranch) -> Result<ConvParams> {
    let c = edge.per_channel_scale.len();
    if edge.bias.len() != c {
        return Err(Error::Shape("edge scale and bias lengths differ".into()));
    }
    let taps = edge.filter.taps();
    let mut kernel = Array4::<f64>::zeros((c, c, 3, 3));
    for ch in 0..c {
        let sc = f64::from(edge.per_channel_scale[ch]);
        for (y, row) in taps.iter().enumerate() {
            for (x, &t) in row.iter().enumerate() {
                kernel[[ch, ch, y, x]] = f64::from(t) * sc;
            }
        }
    }
    Ok(ConvParams::from_f64(kernel, edge.bias.mapv(f64::from)))
}

/// The branch inventory of one EDBB, as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct EdbbParams {
    pub channels: usize,
    /// 3×3 conv, optionally followed by batch norm.
    pub conv3x3: Option<(ConvParams, Option<NormStats>)>,
    pub conv1x1: Option<ConvParams>,
    /// 1×1 then 3×3, with bias-valued padding between them.
    pub seq_1x1_3x3: Option<(ConvParams, ConvParams)>,
    pub edges: Vec<EdgeBranch>,
    pub identity: bool,
}

impl EdbbParams {
    pub fn empty(channels: usize) -> Self {
        Self {
            channels,
            conv3x3: None,
            conv1x1: None,
            seq_1x1_3x3: None,
            edges: Vec::new(),
            identity: false,
        }
    }

    /// A block that is already a single plain 3×3 convolution.
    pub fn from_fused(conv: ConvParams) -> Self {
        let mut p = Self::empty(conv.out_channels());
        p.conv3x3 = Some((conv, None));
        p
    }
}

/// Folds every branch of an EDBB into one 3×3 convolution.
pub fn reparameterize_edbb(block: &EdbbParams) -> Result<ConvParams> {
    let c = block.channels;
    let mut parts: Vec<ConvParams> = Vec::new();
    if let Some((conv, norm)) = &block.conv3x3 {
        parts.push(match norm {
            Some(n) => fuse_conv_norm(conv, n)?,
            None => conv.clone(),
        });
    }
    if let Some(conv) = &block.conv1x1 {
        parts.push(conv.clone());
    }
    if let Some((first, second)) = &block.seq_1x1_3x3 {
        parts.push(merge_sequential_1x1_3x3(first, second)?);
    }
    for e in &block.edges {
        parts.push(edge_to_conv(e)?);
    }
    if block.identity {
        parts.push(ConvParams::identity(c));
    }
    if parts.is_empty() {
        return Ok(ConvParams::zeros(c, c, 3));
    }
    let mut fused = merge_parallel(&parts)?;
    if fused.kernel_size() != (3, 3) {
        fused = ConvParams::from_f64(fused.padded_to(3)?, fused.bias_f64());
    }
    if fused.out_channels() != c || fused.in_channels() != c {
        return Err(Error::Shape(format!(
            "fused kernel is {}->{}, block has {c} channels",
            fused.in_channels(),
            fused.out_channels()
        )));
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct-loop cross-correlation with a constant pad value per input
    /// channel.
    fn conv_ref(x: &Array3<f64>, p: &ConvParams, pad: usize, pad_values: Option<&[f64]>) -> Array3<f64> {
        let (ci, h, w) = x.dim();
        let (o, _, kh, kw) = p.kernel.dim();
        let (oh, ow) = (h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
        let mut out = Array3::zeros((o, oh, ow));
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = f64::from(p.bias[oc]);
                    for ic in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let sy = (y + ky) as isize - pad as isize;
                                let sx = (xx + kx) as isize - pad as isize;
                                let v = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    pad_values.map_or(0.0, |pv| pv[ic])
                                } else {
                                    x[[ic, sy as usize, sx as usize]]
                                };
                                acc += f64::from(p.kernel[[oc, ic, ky, kx]]) * v;
                            }
                        }
                    }
                    out[[oc, y, xx]] = acc;
                }
            }
        }
        out
    }

    fn rand_conv(rng: &mut impl Rng, o: usize, i: usize, k: usize) -> ConvParams {
        let kernel = Array4::from_shape_fn((o, i, k, k), |_| rng.gen_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(o, |_| rng.gen_range(-1.0..1.0));
        ConvParams::new(kernel, bias).unwrap()
    }

    fn rand_input(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0))
    }

    fn max_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_norm_leaves_conv_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = rand_conv(&mut rng, 4, 3, 3);
        assert_eq!(fuse_conv_norm(&conv, &NormStats::identity(4)).unwrap(), conv);
    }

    #[test]
    fn gamma_two_doubles_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = rand_conv(&mut rng, 2, 2, 3);
        conv.bias.fill(0.0);
        let mut n = NormStats::identity(2);
        n.gamma.fill(2.0);
        let fused = fuse_conv_norm(&conv, &n).unwrap();
        assert_eq!(fused.kernel, conv.kernel.mapv(|v| v * 2.0));
        assert!(fused.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn conv_norm_fusion_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = 4;
        let conv = rand_conv(&mut rng, c, c, 3);
        let norm = NormStats {
            gamma: Array1::from_shape_fn(c, |_| rng.gen_range(0.5..1.5)),
            beta: Array1::from_shape_fn(c, |_| rng.gen_range(-0.5..0.5)),
            running_mean: Array1::from_shape_fn(c, |_| rng.gen_range(-0.5..0.5)),
            running_var: Array1::from_shape_fn(c, |_| rng.gen_range(0.5..2.0)),
            epsilon: 1e-5,
        };
        let x = rand_input(&mut rng, c, 8, 8);
        let y = conv_ref(&x, &conv, 1, None);
        let mut expect = y.clone();
        for o in 0..c {
            let t = f64::from(norm.gamma[o])
                / (f64::from(norm.running_var[o]) + f64::from(norm.epsilon)).sqrt();
            expect.slice_mut(s![o, .., ..]).mapv_inplace(|v| {
                (v - f64::from(norm.running_mean[o])) * t + f64::from(norm.beta[o])
            });
        }
        let fused = fuse_conv_norm(&conv, &norm).unwrap();
        assert!(max_diff(&conv_ref(&x, &fused, 1, None), &expect) < 1e-5);
    }

    #[test]
    fn norm_channel_mismatch_is_shape_error() {
        let conv = ConvParams::zeros(4, 4, 3);
        assert!(matches!(
            fuse_conv_norm(&conv, &NormStats::identity(3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn parallel_identical_branches_double() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = rand_conv(&mut rng, 3, 3, 3);
        let m = merge_parallel(&[b.clone(), b.clone()]).unwrap();
        assert_eq!(m.kernel, b.kernel.mapv(|v| v * 2.0));
        assert_eq!(m.bias, b.bias.mapv(|v| v * 2.0));
    }

    #[test]
    fn one_by_one_lands_at_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let one = rand_conv(&mut rng, 2, 2, 1);
        let zero3 = ConvParams::zeros(2, 2, 3);
        let m = merge_parallel(&[one.clone(), zero3]).unwrap();
        for o in 0..2 {
            for i in 0..2 {
                for y in 0..3 {
                    for x in 0..3 {
                        let expect = if (y, x) == (1, 1) { one.kernel[[o, i, 0, 0]] } else { 0.0 };
                        assert_eq!(m.kernel[[o, i, y, x]], expect);
                    }
                }
            }
        }
    }

    #[test]
    fn parallel_merge_matches_branch_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let branches = [
            rand_conv(&mut rng, 3, 3, 3),
            rand_conv(&mut rng, 3, 3, 1),
            rand_conv(&mut rng, 3, 3, 3),
        ];
        let x = rand_input(&mut rng, 3, 8, 8);
        let mut expect = Array3::zeros((3, 8, 8));
        for b in &branches {
            let pad = b.kernel_size().0 / 2;
            expect += &conv_ref(&x, b, pad, None);
        }
        let m = merge_parallel(&branches).unwrap();
        assert!(max_diff(&conv_ref(&x, &m, 1, None), &expect) < 1e-5);
    }

    #[test]
    fn parallel_channel_mismatch_is_shape_error() {
        assert!(matches!(
            merge_parallel(&[ConvParams::zeros(2, 2, 3), ConvParams::zeros(3, 2, 3)]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn sequential_with_identity_first_returns_second() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let second = rand_conv(&mut rng, 3, 4, 3);
        let mut first = ConvParams::zeros(4, 4, 1);
        for c in 0..4 {
            first.kernel[[c, c, 0, 0]] = 1.0;
        }
        assert_eq!(merge_sequential_1x1_3x3(&first, &second).unwrap(), second);
    }

    #[test]
    fn sequential_interior_equivalence_with_zero_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let first = rand_conv(&mut rng, 5, 3, 1);
        let second = rand_conv(&mut rng, 4, 5, 3);
        let x = rand_input(&mut rng, 3, 10, 10);
        let two_step = conv_ref(&conv_ref(&x, &first, 0, None), &second, 1, None);
        let fused = conv_ref(&x, &merge_sequential_1x1_3x3(&first, &second).unwrap(), 1, None);
        let inner = |a: &Array3<f64>| a.slice(s![.., 1..9, 1..9]).to_owned();
        assert!(max_diff(&inner(&two_step), &inner(&fused)) < 1e-5);
    }

    #[test]
    fn sequential_equivalence_everywhere_with_bias_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let first = rand_conv(&mut rng, 5, 3, 1);
        let second = rand_conv(&mut rng, 4, 5, 3);
        let x = rand_input(&mut rng, 3, 10, 10);
        let b1: Vec<f64> = first.bias.iter().map(|&v| f64::from(v)).collect();
        let two_step = conv_ref(&conv_ref(&x, &first, 0, None), &second, 1, Some(&b1));
        let fused = conv_ref(&x, &merge_sequential_1x1_3x3(&first, &second).unwrap(), 1, None);
        assert!(max_diff(&two_step, &fused) < 1e-5);
    }

    #[test]
    fn sequential_constant_field_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut first = ConvParams::zeros(3, 2, 1);
        first.bias = Array1::from_vec(vec![0.5, -1.0, 2.0]);
        let second = rand_conv(&mut rng, 2, 3, 3);
        let m = merge_sequential_1x1_3x3(&first, &second).unwrap();
        assert!(m.kernel.iter().all(|&v| v == 0.0));
        for o in 0..2 {
            let mut expect = f64::from(second.bias[o]);
            for mc in 0..3 {
                for y in 0..3 {
                    for x in 0..3 {
                        expect += f64::from(second.kernel[[o, mc, y, x]]) * f64::from(first.bias[mc]);
                    }
                }
            }
            assert!((f64::from(m.bias[o]) - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn sequential_channel_mismatch_is_shape_error() {
        assert!(merge_sequential_1x1_3x3(&ConvParams::zeros(3, 2, 1), &ConvParams::zeros(2, 4, 3)).is_err());
    }

    #[test]
    fn zero_scale_edge_passes_bias_through() {
        let e = EdgeBranch {
            filter: EdgeFilter::SobelY,
            per_channel_scale: Array1::zeros(3),
            bias: Array1::from_vec(vec![0.1, 0.2, 0.3]),
        };
        let p = edge_to_conv(&e).unwrap();
        assert!(p.kernel.iter().all(|&v| v == 0.0));
        assert_eq!(p.bias, e.bias);
    }

    #[test]
    fn laplacian_kills_constant_images() {
        let e = EdgeBranch {
            filter: EdgeFilter::Laplacian,
            per_channel_scale: Array1::ones(2),
            bias: Array1::from_vec(vec![0.25, -0.5]),
        };
        let x = Array3::from_elem((2, 6, 6), 0.7);
        let y = conv_ref(&x, &edge_to_conv(&e).unwrap(), 1, None);
        // interior pixels see a full neighbourhood of the constant
        for c in 0..2 {
            for v in y.slice(s![c, 1..5, 1..5]) {
                assert!((v - f64::from(e.bias[c])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sobel_x_matches_depthwise_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = 3;
        let e = EdgeBranch {
            filter: EdgeFilter::SobelX,
            per_channel_scale: Array1::from_shape_fn(c, |_| rng.gen_range(-2.0..2.0)),
            bias: Array1::from_shape_fn(c, |_| rng.gen_range(-1.0..1.0)),
        };
        let x = rand_input(&mut rng, c, 8, 8);
        let taps = EdgeFilter::SobelX.taps();
        let mut expect = Array3::zeros((c, 8, 8));
        for ch in 0..c {
            for y in 0..8 {
                for xx in 0..8 {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = xx as isize + kx as isize - 1;
                            if (0..8).contains(&sy) && (0..8).contains(&sx) {
                                acc += f64::from(taps[ky][kx]) * x[[ch, sy as usize, sx as usize]];
                            }
                        }
                    }
                    expect[[ch, y, xx]] =
                        acc * f64::from(e.per_channel_scale[ch]) + f64::from(e.bias[ch]);
                }
            }
        }
        let got = conv_ref(&x, &edge_to_conv(&e).unwrap(), 1, None);
        assert!(max_diff(&got, &expect) < 1e-5);
    }

    #[test]
    fn unknown_filter_name_is_config_error() {
        assert!(matches!("prewitt".parse::<EdgeFilter>(), Err(Error::Config(_))));
        assert_eq!("laplacian".parse::<EdgeFilter>().unwrap(), EdgeFilter::Laplacian);
    }

    #[test]
    fn identity_only_block_fuses_to_center_one() {
        let mut b = EdbbParams::empty(3);
        b.identity = true;
        assert_eq!(reparameterize_edbb(&b).unwrap(), ConvParams::identity(3));
    }

    #[test]
    fn fusion_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut b = EdbbParams::empty(2);
        b.conv1x1 = Some(rand_conv(&mut rng, 2, 2, 1));
        b.identity = true;
        let once = reparameterize_edbb(&b).unwrap();
        let twice = reparameterize_edbb(&EdbbParams::from_fused(once.clone())).unwrap();
        assert_eq!(once, twice);
    }
}
