//! Layer plumbing on top of candle: named parameter storage, seeded
//! initialization, and the handful of layers and resampling ops the
//! networks need. Every op here is differentiable through candle's
//! autograd.

use std::cell::Cell;
use std::collections::HashMap;
use std::sync::Mutex;

use candle_core::{DType, Device, Result as TResult, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with every parameter read through [`param`] detached, so the
/// forward pass records no autograd graph and intermediates are freed as
/// soon as they are consumed.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            NO_GRAD.with(|g| g.set(self.0));
        }
    }
    let _reset = Reset(NO_GRAD.with(|g| g.replace(true)));
    f()
}

/// The current value of `v`, detached inside [`no_grad`].
pub fn param(v: &Var) -> Tensor {
    if NO_GRAD.with(Cell::get) {
        v.as_tensor().detach()
    } else {
        v.as_tensor().clone()
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub var: Var,
    pub trainable: bool,
}

/// Ordered collection of named tensors: trainable weights plus buffers
/// such as batch-norm running statistics.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Var {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        let var = Var::from_tensor(&value).expect("contiguous tensor");
        self.entries.push(ParamEntry {
            name,
            var: var.clone(),
            trainable,
        });
        var
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.var)
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.var.clone())
            .collect()
    }

    /// Number of trainable scalars.
    pub fn trainable_elements(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.var.elem_count() as u64)
            .sum()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.var.as_tensor().clone()))
            .collect()
    }

    /// Copies values into the stored variables. Every stored name must be
    /// present with a matching shape and no extra names are accepted.
    pub fn load(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        if tensors.len() != self.entries.len() {
            let extra: Vec<_> = tensors
                .keys()
                .filter(|k| self.get(k).is_none())
                .cloned()
                .collect();
            if !extra.is_empty() {
                return Err(Error::Checkpoint(format!("unexpected tensors: {extra:?}")));
            }
        }
        for e in &self.entries {
            let t = tensors
                .get(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", e.name)))?;
            if t.dims() != e.var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    e.name,
                    t.dims(),
                    e.var.dims()
                )));
            }
            e.var.set(&t.to_dtype(e.var.dtype())?)?;
        }
        Ok(())
    }

    /// Deep copy of the current values, in store order.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        Ok(self
            .entries
            .iter()
            .map(|e| e.var.as_tensor().copy())
            .collect::<TResult<_>>()?)
    }
}

/// Seeded weight generator. Weights depend only on the seed and the order
/// in which layers are created.
pub struct Initializer {
    rng: ChaCha8Rng,
    device: Device,
}

impl Initializer {
    pub fn new(seed: u64, device: &Device) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: device.clone(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Kaiming-normal fan-in initialization scaled by `gain`.
    pub fn kaiming(&mut self, shape: &[usize], fan_in: usize, gain: f64) -> Tensor {
        let std = (2.0 / fan_in.max(1) as f64).sqrt() * gain;
        self.normal(shape, 0.0, std)
    }

    pub fn normal(&mut self, shape: &[usize], mean: f64, std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let dist = Normal::new(mean, std.max(f64::MIN_POSITIVE)).expect("valid normal");
        let v: Vec<f32> = (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect();
        Tensor::from_vec(v, shape, &self.device).expect("shape matches")
    }

    pub fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        use rand::Rng;
        let n: usize = shape.iter().product();
        let v: Vec<f32> = (0..n).map(|_| self.rng.gen_range(lo..hi) as f32).collect();
        Tensor::from_vec(v, shape, &self.device).expect("shape matches")
    }

    pub fn constant(&self, shape: &[usize], value: f64) -> Tensor {
        (Tensor::ones(shape, DType::F32, &self.device).expect("alloc") * value).expect("scale")
    }
}

/// 2-D convolution with optional bias, stored as `{prefix}.weight` and
/// `{prefix}.bias`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvOpts {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
    pub gain: f64,
}

impl ConvOpts {
    /// Stride 1, "same" zero padding for odd kernels, bias on.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
            groups: 1,
            bias: true,
            gain: 1.0,
        }
    }

    pub fn gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn stride(mut self, stride: usize, padding: usize) -> Self {
        self.stride = stride;
        self.padding = padding;
        self
    }
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        opts: ConvOpts,
    ) -> Self {
        let cin_g = in_channels / opts.groups;
        let w = init.kaiming(
            &[out_channels, cin_g, kernel, kernel],
            cin_g * kernel * kernel,
            opts.gain,
        );
        let weight = store.add(format!("{prefix}.weight"), w, true);
        let bias = opts.bias.then(|| {
            store.add(
                format!("{prefix}.bias"),
                init.constant(&[out_channels], 0.0),
                true,
            )
        });
        Self {
            weight,
            bias,
            stride: opts.stride,
            padding: opts.padding,
            groups: opts.groups,
        }
    }

    /// Runs in the dtype of `x`; weights are cast when they differ.
    pub fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let w = param(&self.weight).to_dtype(x.dtype())?;
        let y = x.conv2d(&w, self.padding, self.stride, 1, self.groups)?;
        match &self.bias {
            Some(b) => y.broadcast_add(&param(b).to_dtype(x.dtype())?.reshape((1, (), 1, 1))?),
            None => Ok(y),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.dims()[2]
    }
}

/// Channels-first layer normalization with per-channel affine terms.
#[derive(Debug, Clone)]
pub struct LayerNorm2d {
    pub weight: Var,
    pub bias: Var,
    pub eps: f64,
}

impl LayerNorm2d {
    pub fn new(store: &mut ParamStore, init: &Initializer, prefix: &str, channels: usize) -> Self {
        Self {
            weight: store.add(
                format!("{prefix}.weight"),
                init.constant(&[channels], 1.0),
                true,
            ),
            bias: store.add(
                format!("{prefix}.bias"),
                init.constant(&[channels], 0.0),
                true,
            ),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let mean = x.mean_keepdim(1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed
            .broadcast_mul(&param(&self.weight).reshape((1, (), 1, 1))?)?
            .broadcast_add(&param(&self.bias).reshape((1, (), 1, 1))?)
    }
}

/// Batch normalization. Uses batch statistics and updates the running
/// buffers while training; uses the running buffers otherwise.
#[derive(Debug)]
pub struct BatchNorm2d {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub eps: f64,
    pub momentum: f64,
    training: Mutex<bool>,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, init: &Initializer, prefix: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(
                format!("{prefix}.weight"),
                init.constant(&[channels], 1.0),
                true,
            ),
            beta: store.add(
                format!("{prefix}.bias"),
                init.constant(&[channels], 0.0),
                true,
            ),
            running_mean: store.add(
                format!("{prefix}.running_mean"),
                init.constant(&[channels], 0.0),
                false,
            ),
            running_var: store.add(
                format!("{prefix}.running_var"),
                init.constant(&[channels], 1.0),
                false,
            ),
            eps: 1e-5,
            momentum: 0.1,
            training: Mutex::new(false),
        }
    }

    pub fn set_training(&self, training: bool) {
        *self.training.lock().expect("poisoned") = training;
    }

    pub fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let training = *self.training.lock().expect("poisoned");
        let (mean, var) = if training {
            let (n, _, h, w) = x.dims4()?;
            let count = (n * h * w) as f64;
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let var = x
                .broadcast_sub(&mean)?
                .sqr()?
                .mean_keepdim(0)?
                .mean_keepdim(2)?
                .mean_keepdim(3)?;
            let m = self.momentum;
            let flat_mean = mean.flatten_all()?.detach();
            let unbiased = (var.flatten_all()?.detach() * (count / (count - 1.0).max(1.0)))?;
            self.running_mean.set(
                &((self.running_mean.as_tensor() * (1.0 - m))? + (flat_mean * m)?)?,
            )?;
            self.running_var
                .set(&((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?)?;
            (mean, var)
        } else {
            (
                param(&self.running_mean).reshape((1, (), 1, 1))?,
                param(&self.running_var).reshape((1, (), 1, 1))?,
            )
        };
        let normed = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed
            .broadcast_mul(&param(&self.gamma).reshape((1, (), 1, 1))?)?
            .broadcast_add(&param(&self.beta).reshape((1, (), 1, 1))?)
    }
}

/// Per-channel parametric ReLU.
#[derive(Debug, Clone)]
pub struct PRelu {
    pub weight: Var,
}

impl PRelu {
    pub fn new(store: &mut ParamStore, init: &Initializer, prefix: &str, channels: usize) -> Self {
        Self {
            weight: store.add(
                format!("{prefix}.weight"),
                init.constant(&[channels], 0.25),
                true,
            ),
        }
    }

    pub fn forward(&self, x: &Tensor) -> TResult<Tensor> {
        let a = param(&self.weight).reshape((1, (), 1, 1))?;
        let pos = x.relu()?;
        let neg = x.minimum(0.0)?;
        pos + neg.broadcast_mul(&a)?
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> TResult<Tensor> {
    x.maximum(&(x * slope)?)
}

pub fn gelu(x: &Tensor) -> TResult<Tensor> {
    x.gelu_erf()
}

pub fn sigmoid(x: &Tensor) -> TResult<Tensor> {
    (x.neg()?.exp()? + 1.0)?.recip()
}

/// `(N, C·r², H, W) → (N, C, H·r, W·r)`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> TResult<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let oc = c / (r * r);
    x.reshape((n, oc, r, r, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((n, oc, h * r, w * r))
}

fn index_tensor(idx: Vec<u32>, device: &Device) -> TResult<Tensor> {
    let n = idx.len();
    Tensor::from_vec(idx, n, device)
}

/// Nearest-neighbour resize with `src = floor(dst · in / out)`.
pub fn resize_nearest(x: &Tensor, out_h: usize, out_w: usize) -> TResult<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    if out_h % h == 0 && out_w % w == 0 && out_h / h == out_w / w {
        return x.upsample_nearest2d(out_h, out_w);
    }
    let rows: Vec<u32> = (0..out_h).map(|i| (i * h / out_h) as u32).collect();
    let cols: Vec<u32> = (0..out_w).map(|j| (j * w / out_w) as u32).collect();
    x.index_select(&index_tensor(rows, x.device())?, 2)?
        .index_select(&index_tensor(cols, x.device())?, 3)
}

/// Interpolation matrix for half-pixel-centre bilinear resampling
/// (`align_corners = false`), shape `(out, in)`.
pub fn bilinear_matrix(input: usize, output: usize) -> Vec<f64> {
    let mut m = vec![0.0; output * input];
    let scale = input as f64 / output as f64;
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        let l = src - i0 as f64;
        m[o * input + i0] += 1.0 - l;
        m[o * input + i1] += l;
    }
    m
}

/// Bilinear resize expressed as two matrix products, so it is
/// differentiable for any target size.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> TResult<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let dev = x.device();
    let dt = x.dtype();
    let mh = Tensor::from_vec(bilinear_matrix(h, out_h), (out_h, h), dev)?.to_dtype(dt)?;
    let mw = Tensor::from_vec(bilinear_matrix(w, out_w), (out_w, w), dev)?.to_dtype(dt)?;
    let y = x.broadcast_matmul(&mw.t()?)?;
    mh.broadcast_matmul(&y)
}

/// Max over windows `[start_i, end_i)` along one axis, done as a chain of
/// gathers and elementwise maxima. Short windows repeat their last index,
/// which leaves the maximum unchanged.
fn window_max(x: &Tensor, dim: usize, windows: &[(usize, usize)]) -> TResult<Tensor> {
    let longest = windows.iter().map(|(s, e)| e - s).max().unwrap_or(1);
    let mut acc: Option<Tensor> = None;
    for j in 0..longest {
        let idx: Vec<u32> = windows
            .iter()
            .map(|&(s, e)| (s + j).min(e - 1) as u32)
            .collect();
        let g = x.index_select(&index_tensor(idx, x.device())?, dim)?;
        acc = Some(match acc {
            None => g,
            Some(a) => a.maximum(&g)?,
        });
    }
    Ok(acc.expect("at least one window"))
}

fn adaptive_windows(input: usize, output: usize) -> Vec<(usize, usize)> {
    (0..output)
        .map(|i| {
            let s = i * input / output;
            let e = ((i + 1) * input).div_ceil(output);
            (s, e)
        })
        .collect()
}

/// Adaptive max pooling to `(out_h, out_w)` with the usual
/// `floor(i·in/out) .. ceil((i+1)·in/out)` windows.
pub fn adaptive_max_pool(x: &Tensor, out_h: usize, out_w: usize) -> TResult<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h % out_h == 0 && w % out_w == 0 && h / out_h == w / out_w {
        let k = h / out_h;
        if k == 1 {
            return Ok(x.clone());
        }
        return x.max_pool2d(k);
    }
    let rows = window_max(x, 2, &adaptive_windows(h, out_h))?;
    window_max(&rows, 3, &adaptive_windows(w, out_w))
}

/// Output length of a pooling window; the window shrinks to the input when
/// the input is smaller than the kernel.
pub fn pooled_len(input: usize, kernel: usize, stride: usize) -> usize {
    let k = kernel.min(input);
    (input - k) / stride + 1
}

/// Max pooling with an arbitrary kernel/stride pair (no padding).
pub fn max_pool(x: &Tensor, kernel: usize, stride: usize) -> TResult<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let win = |n: usize| -> Vec<(usize, usize)> {
        let k = kernel.min(n);
        (0..pooled_len(n, kernel, stride))
            .map(|i| (i * stride, i * stride + k))
            .collect()
    };
    let rows = window_max(x, 2, &win(h))?;
    window_max(&rows, 3, &win(w))
}

/// Reflect padding (edge pixel not repeated) on the two spatial axes.
pub fn reflect_pad(x: &Tensor, pad: usize) -> TResult<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let idx = |n: usize| -> Vec<u32> {
        (0..n + 2 * pad)
            .map(|i| {
                let mut p = i as isize - pad as isize;
                let n = n as isize;
                if n == 1 {
                    return 0;
                }
                while p < 0 || p >= n {
                    if p < 0 {
                        p = -p;
                    }
                    if p >= n {
                        p = 2 * (n - 1) - p;
                    }
                }
                p as u32
            })
            .collect()
    };
    x.index_select(&index_tensor(idx(h), x.device())?, 2)?
        .index_select(&index_tensor(idx(w), x.device())?, 3)
}

/// Mean over all axes except the batch, kept as a scalar per sample.
pub fn mean_all(x: &Tensor) -> TResult<Tensor> {
    x.flatten_all()?.mean(D::Minus1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32], shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    fn flat(x: &Tensor) -> Vec<f32> {
        x.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn no_grad_detaches_parameters_and_restores() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(0, &Device::Cpu);
        let conv = Conv2d::new(&mut store, &mut init, "c", 2, 2, 3, ConvOpts::same(3));
        let x = init.uniform(&[1, 2, 5, 5], 0.0, 1.0);
        let tracked = conv.forward(&x).unwrap();
        let free = no_grad(|| conv.forward(&x).unwrap());
        assert_eq!(flat(&tracked), flat(&free));
        assert!(tracked.sum_all().unwrap().backward().unwrap().get(conv.weight.as_tensor()).is_some());
        assert!(free.sum_all().unwrap().backward().unwrap().get(conv.weight.as_tensor()).is_none());
        assert!(conv.forward(&x).unwrap().sum_all().unwrap().backward().unwrap().get(conv.weight.as_tensor()).is_some());
    }

    #[test]
    fn pixel_shuffle_places_subpixels() {
        // 4 channels of a 1x1 map become one 2x2 map in raster order.
        let x = t(&[1.0, 2.0, 3.0, 4.0], (1, 4, 1, 1));
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        assert_eq!(flat(&y), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bilinear_upsample_matches_half_pixel_convention() {
        // [0, 1] upsampled to 4 samples: src = -0.25, 0.25, 0.75, 1.25.
        let x = t(&[0.0, 1.0], (1, 1, 1, 2));
        let y = resize_bilinear(&x, 1, 4).unwrap();
        assert_eq!(flat(&y), vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn adaptive_pool_uneven_windows() {
        // 5 -> 2 windows: [0,3) and [2,5)
        let x = t(&[1.0, 5.0, 2.0, 0.0, 3.0], (1, 1, 1, 5));
        let y = adaptive_max_pool(&x, 1, 2).unwrap();
        assert_eq!(flat(&y), vec![5.0, 3.0]);
    }

    #[test]
    fn max_pool_kernel_larger_than_stride() {
        let v: Vec<f32> = (0..10).map(|i| ((i * 7) % 10) as f32).collect();
        let x = t(&v, (1, 1, 1, 10));
        let y = max_pool(&x, 4, 3).unwrap();
        // windows [0,4) [3,7) [6,10)
        let expect: Vec<f32> = [(0, 4), (3, 7), (6, 10)]
            .iter()
            .map(|&(s, e)| v[s..e].iter().cloned().fold(f32::MIN, f32::max))
            .collect();
        assert_eq!(flat(&y), expect);
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let x = t(&[1.0, 2.0, 3.0], (1, 1, 1, 3));
        let y = reflect_pad(&x, 2).unwrap();
        assert_eq!(y.dims(), &[1, 1, 5, 7]);
        let row: Vec<f32> = flat(&y)[14..21].to_vec();
        assert_eq!(row, vec![3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn nearest_resize_non_integer() {
        let x = t(&[1.0, 2.0, 3.0], (1, 1, 1, 3));
        let y = resize_nearest(&x, 1, 5).unwrap();
        // src = floor(j*3/5) = 0,0,1,1,2
        assert_eq!(flat(&y), vec![1.0, 1.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn initializer_is_seed_deterministic() {
        let mut a = Initializer::new(7, &Device::Cpu);
        let mut b = Initializer::new(7, &Device::Cpu);
        assert_eq!(
            flat(&a.kaiming(&[2, 3, 3, 3], 27, 1.0).reshape((1, 2, 3, 9)).unwrap()),
            flat(&b.kaiming(&[2, 3, 3, 3], 27, 1.0).reshape((1, 2, 3, 9)).unwrap())
        );
    }

    #[test]
    fn differentiable_resampling_has_gradients() {
        let x = Var::from_tensor(&t(&(0..30).map(|v| v as f32).collect::<Vec<_>>(), (1, 1, 5, 6)))
            .unwrap();
        let y = resize_bilinear(x.as_tensor(), 7, 9).unwrap();
        let y = adaptive_max_pool(&y, 3, 4).unwrap();
        let y = max_pool(&reflect_pad(&y, 1).unwrap(), 3, 2).unwrap();
        let g = y.sum_all().unwrap().backward().unwrap();
        assert!(g.get(&x).is_some());
    }
}
