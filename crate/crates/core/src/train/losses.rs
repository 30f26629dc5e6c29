//! Differentiable training losses on `(N, C, H, W)` tensors.
//!
//! Every function returns a scalar tensor so the result can be weighted,
//! summed and back-propagated.

use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, reflect_pad, Conv2d, ConvOpts, Initializer, ParamStore};

fn same_shape(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.dims(),
            target.dims()
        )));
    }
    Ok(())
}

fn four_d(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    t.dims4()
        .map_err(|_| Error::Shape(format!("expected (N, C, H, W), got {:?}", t.dims())))
}

pub fn loss_l1(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target)?;
    Ok((pred - target)?.abs()?.mean_all()?)
}

pub fn loss_mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target)?;
    Ok((pred - target)?.sqr()?.mean_all()?)
}

/// Real and imaginary DFT matrices of size `n`.
fn dft_matrices(n: usize, dtype: DType, device: &Device) -> Result<(Tensor, Tensor)> {
    let mut re = Vec::with_capacity(n * n);
    let mut im = Vec::with_capacity(n * n);
    for k in 0..n {
        for j in 0..n {
            let angle = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
            re.push(angle.cos());
            im.push(angle.sin());
        }
    }
    Ok((
        Tensor::from_vec(re, (n, n), device)?.to_dtype(dtype)?,
        Tensor::from_vec(im, (n, n), device)?.to_dtype(dtype)?,
    ))
}

/// Two-dimensional DFT of every `(H, W)` plane: `(real, imaginary)`.
pub fn dft2(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, _, h, w) = four_d(x)?;
    let (hr, hi) = dft_matrices(h, x.dtype(), x.device())?;
    let (wr, wi) = dft_matrices(w, x.dtype(), x.device())?;
    let a = hr.broadcast_matmul(x)?;
    let b = hi.broadcast_matmul(x)?;
    let re = (a.broadcast_matmul(&wr)? - b.broadcast_matmul(&wi)?)?;
    let im = (a.broadcast_matmul(&wi)? + b.broadcast_matmul(&wr)?)?;
    Ok((re, im))
}

/// Mean absolute difference of the unnormalized 2-D spectra, with real
/// and imaginary parts counted as separate elements.
pub fn loss_fft_l1(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target)?;
    let (re, im) = dft2(&(pred - target)?)?;
    let total = (re.abs()?.sum_all()? + im.abs()?.sum_all()?)?;
    Ok((total / (2 * pred.elem_count()) as f64)?)
}

/// Multi-stage feature extractor for perceptual losses.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;
    /// One weight per stage returned by [`FeatureExtractor::features`].
    fn weights(&self) -> Vec<f64>;
}

/// Returns the input as its single stage.
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![x.clone()])
    }

    fn weights(&self) -> Vec<f64> {
        vec![1.0]
    }
}

/// Five conv stages with fixed random weights. Stages 3 to 5 start with a
/// stride-2 conv; features are tapped before each activation.
pub struct RandomConvExtractor {
    _store: ParamStore,
    convs: Vec<Conv2d>,
    weights: Vec<f64>,
}

impl RandomConvExtractor {
    pub const STAGE_WEIGHTS: [f64; 5] = [0.1, 0.1, 1.0, 1.0, 1.0];

    pub fn new(seed: u64, width: usize, device: &Device) -> Self {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed, device);
        let mut convs = Vec::new();
        let mut cin = 3;
        for i in 0..5 {
            let cout = width << (i / 2);
            let opts = if i >= 2 { ConvOpts::same(3).stride(2, 1) } else { ConvOpts::same(3) };
            convs.push(Conv2d::new(&mut store, &mut init, &format!("stage{i}"), cin, cout, 3, opts));
            cin = cout;
        }
        Self { _store: store, convs, weights: Self::STAGE_WEIGHTS.to_vec() }
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for conv in &self.convs {
            let pre = conv.forward(&h)?;
            h = leaky_relu(&pre, 0.2)?;
            out.push(pre);
        }
        Ok(out)
    }

    fn weights(&self) -> Vec<f64> {
        self.weights.clone()
    }
}

/// `Σ_k w_k · L1(φ_k(pred), φ_k(target))`.
pub fn loss_perceptual(pred: &Tensor, target: &Tensor, extractor: &dyn FeatureExtractor) -> Result<Tensor> {
    same_shape(pred, target)?;
    let fp = extractor.features(pred)?;
    let ft = extractor.features(target)?;
    let weights = extractor.weights();
    if fp.len() != weights.len() || ft.len() != weights.len() {
        return Err(Error::Config(format!(
            "extractor returned {} stages for {} weights",
            fp.len(),
            weights.len()
        )));
    }
    let mut total = Tensor::zeros((), pred.dtype(), pred.device())?;
    for ((a, b), w) in fp.iter().zip(&ft).zip(weights) {
        total = (total + (loss_l1(a, b)? * w)?)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GanSide {
    Generator,
    Discriminator,
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let pos = x.relu()?;
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((pos + tail)?)
}

/// Non-saturating logistic loss on per-pixel logit maps. The generator
/// side reads only `fake`.
pub fn loss_gan(real: Option<&Tensor>, fake: &Tensor, side: GanSide) -> Result<Tensor> {
    match side {
        GanSide::Generator => Ok(softplus(&fake.neg()?)?.mean_all()?),
        GanSide::Discriminator => {
            let real = real.ok_or_else(|| Error::Config("discriminator loss needs real logits".into()))?;
            Ok((softplus(&real.neg()?)?.mean_all()? + softplus(fake)?.mean_all()?)?)
        }
    }
}

/// Unbiased variance over a `k × k` window (reflect padding), per channel.
pub fn local_variance(x: &Tensor, k: usize) -> Result<Tensor> {
    let (n, c, h, w) = four_d(x)?;
    let planes = x.reshape((n * c, 1, h, w))?;
    let padded = reflect_pad(&planes, k / 2)?;
    let window = (Tensor::ones((1, 1, k, k), x.dtype(), x.device())? / (k * k) as f64)?;
    let mean = padded.conv2d(&window, 0, 1, 1, 1)?;
    let mean_sq = padded.sqr()?.conv2d(&window, 0, 1, 1, 1)?;
    let nk = (k * k) as f64;
    let var = ((mean_sq - mean.sqr()?)?.relu()? * (nk / (nk - 1.0)))?;
    Ok(var.reshape((n, c, h, w))?)
}

/// Artifact map: local variance of the channel-summed absolute residual,
/// scaled by the per-image residual variance raised to `1/5`.
pub fn artifact_map(pred: &Tensor, target: &Tensor, window: usize) -> Result<Tensor> {
    same_shape(pred, target)?;
    let (n, _, h, w) = four_d(pred)?;
    let residual = (target - pred)?.abs()?.sum_keepdim(1)?;
    let flat = residual.reshape((n, h * w))?;
    let mean = flat.mean_keepdim(1)?;
    let var = (flat.broadcast_sub(&mean)?.sqr()?.sum_keepdim(1)? / ((h * w - 1) as f64))?;
    let patch = (var + 1e-12)?.powf(0.2)?.reshape((n, 1, 1, 1))?;
    Ok(local_variance(&residual, window)?.broadcast_mul(&patch)?)
}

/// Artifact-weighted L1: `mean(M ⊙ |pred − target|)`.
pub fn loss_ldl(pred: &Tensor, target: &Tensor, window: usize) -> Result<Tensor> {
    let map = artifact_map(pred, target, window)?;
    Ok((pred - target)?.abs()?.broadcast_mul(&map)?.mean_all()?)
}

/// Pretrained autoencoder used by the AESOP loss.
pub trait AutoencoderAdapter: Send + Sync {
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor>;
}

pub struct IdentityAutoencoder;

impl AutoencoderAdapter for IdentityAutoencoder {
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }
}

/// Linear 1×1 encoder to `latent` channels followed by a linear decoder,
/// both with fixed random weights.
pub struct RandomLinearAutoencoder {
    pub encoder: Tensor,
    pub decoder: Tensor,
}

impl RandomLinearAutoencoder {
    pub fn new(seed: u64, latent: usize, device: &Device) -> Self {
        let mut init = Initializer::new(seed, device);
        Self {
            encoder: init.normal(&[latent, 3, 1, 1], 0.0, (1.0f64 / 3.0).sqrt()),
            decoder: init.normal(&[3, latent, 1, 1], 0.0, (1.0 / latent as f64).sqrt()),
        }
    }
}

impl AutoencoderAdapter for RandomLinearAutoencoder {
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let z = x.conv2d(&self.encoder.to_dtype(x.dtype())?, 0, 1, 1, 1)?;
        Ok(z.conv2d(&self.decoder.to_dtype(x.dtype())?, 0, 1, 1, 1)?)
    }
}

/// L1 between the autoencoder reconstructions of `pred` and `target`.
pub fn loss_aesop(pred: &Tensor, target: &Tensor, autoencoder: &dyn AutoencoderAdapter) -> Result<Tensor> {
    same_shape(pred, target)?;
    loss_l1(&autoencoder.reconstruct(pred)?, &autoencoder.reconstruct(target)?)
}
