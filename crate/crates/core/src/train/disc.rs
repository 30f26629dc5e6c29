//! U-Net discriminator with spectral-normalized convolutions, producing a
//! logit per input pixel.

use std::sync::atomic::{AtomicBool, Ordering};

use candle_core::{Device, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, resize_bilinear, Conv2d, ConvOpts, Initializer, ParamStore};

/// A convolution whose weight is divided by its largest singular value,
/// estimated with one power iteration per training forward pass. The
/// left singular vector estimate is stored as the buffer `{prefix}.weight_u`.
#[derive(Debug, Clone)]
pub struct SnConv {
    pub conv: Conv2d,
    pub u: Var,
}

fn normalize(v: &Tensor) -> candle_core::Result<Tensor> {
    let norm = (v.sqr()?.sum_all()?.sqrt()? + 1e-12)?;
    v.broadcast_div(&norm)
}

impl SnConv {
    fn new(store: &mut ParamStore, init: &mut Initializer, prefix: &str, cin: usize, cout: usize, k: usize, opts: ConvOpts) -> Self {
        let conv = Conv2d::new(store, init, prefix, cin, cout, k, opts);
        let u0 = init.normal(&[cout], 0.0, 1.0);
        let u0 = normalize(&u0).expect("finite init");
        let u = store.add(format!("{prefix}.weight_u"), u0, false);
        Self { conv, u }
    }

    fn matrix(&self) -> candle_core::Result<Tensor> {
        let w = self.conv.weight.as_tensor();
        w.reshape((w.dims()[0], ()))
    }

    /// Runs one power iteration and stores the new `u`.
    pub fn power_iteration(&self) -> candle_core::Result<()> {
        let w = self.matrix()?.detach();
        let u = self.u.as_tensor().unsqueeze(1)?;
        let v = normalize(&w.t()?.matmul(&u)?)?;
        let u = normalize(&w.matmul(&v)?)?;
        self.u.set(&u.squeeze(1)?)
    }

    /// `uᵀ W v` with the current `u`; gradients flow through `W` only.
    pub fn sigma(&self) -> candle_core::Result<Tensor> {
        let w = self.matrix()?;
        let u = self.u.as_tensor().detach().unsqueeze(1)?;
        let v = normalize(&w.detach().t()?.matmul(&u)?)?;
        u.t()?.matmul(&w.matmul(&v)?)?.squeeze(1)?.squeeze(0)
    }

    /// The normalized weight `W / σ`.
    pub fn normalized_weight(&self) -> candle_core::Result<Tensor> {
        self.conv.weight.as_tensor().broadcast_div(&self.sigma()?)
    }

    fn forward(&self, x: &Tensor, update: bool) -> candle_core::Result<Tensor> {
        if update {
            self.power_iteration()?;
        }
        let w = self.normalized_weight()?;
        let y = x.conv2d(&w, self.conv.padding, self.conv.stride, 1, self.conv.groups)?;
        match &self.conv.bias {
            Some(b) => y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?),
            None => Ok(y),
        }
    }
}

pub struct UNetDiscriminator {
    store: ParamStore,
    conv0: Conv2d,
    down: [SnConv; 3],
    up: [SnConv; 3],
    refine: [SnConv; 2],
    conv9: Conv2d,
    training: AtomicBool,
}

/// Builds the discriminator with base width `channels` (at least 8).
/// Spatial input sizes must be multiples of 8.
pub fn build_unet_discriminator(channels: usize, seed: u64, device: &Device) -> Result<UNetDiscriminator> {
    if channels < 8 {
        return Err(Error::Config(format!("discriminator width {channels} is below 8")));
    }
    let nf = channels;
    let mut store = ParamStore::new();
    let mut init = Initializer::new(seed, device);
    let s = &mut store;
    let i = &mut init;
    let down_opts = ConvOpts::same(4).stride(2, 1).no_bias();
    let same = ConvOpts::same(3).no_bias();
    let conv0 = Conv2d::new(s, i, "conv0", 3, nf, 3, ConvOpts::same(3));
    let down = [
        SnConv::new(s, i, "conv1", nf, nf * 2, 4, down_opts),
        SnConv::new(s, i, "conv2", nf * 2, nf * 4, 4, down_opts),
        SnConv::new(s, i, "conv3", nf * 4, nf * 8, 4, down_opts),
    ];
    let up = [
        SnConv::new(s, i, "conv4", nf * 8, nf * 4, 3, same),
        SnConv::new(s, i, "conv5", nf * 4, nf * 2, 3, same),
        SnConv::new(s, i, "conv6", nf * 2, nf, 3, same),
    ];
    let refine = [
        SnConv::new(s, i, "conv7", nf, nf, 3, same),
        SnConv::new(s, i, "conv8", nf, nf, 3, same),
    ];
    let conv9 = Conv2d::new(s, i, "conv9", nf, 1, 3, ConvOpts::same(3));
    Ok(UNetDiscriminator { store, conv0, down, up, refine, conv9, training: AtomicBool::new(true) })
}

impl UNetDiscriminator {
    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// In training mode every forward pass refines the singular vectors.
    pub fn set_training(&self, training: bool) {
        self.training.store(training, Ordering::Relaxed);
    }

    pub fn sn_layers(&self) -> impl Iterator<Item = &SnConv> {
        self.down.iter().chain(&self.up).chain(&self.refine)
    }

    /// `(N, 3, H, W) → (N, 1, H, W)` logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Shape(format!("discriminator input {h}×{w} is not a multiple of 8")));
        }
        let upd = self.training.load(Ordering::Relaxed);
        let lrelu = |t: Tensor| leaky_relu(&t, 0.2);
        let x0 = lrelu(self.conv0.forward(x)?)?;
        let x1 = lrelu(self.down[0].forward(&x0, upd)?)?;
        let x2 = lrelu(self.down[1].forward(&x1, upd)?)?;
        let x3 = lrelu(self.down[2].forward(&x2, upd)?)?;
        let mut y = x3;
        for (layer, skip) in self.up.iter().zip([&x2, &x1, &x0]) {
            let (_, _, sh, sw) = skip.dims4()?;
            y = resize_bilinear(&y, sh, sw)?;
            y = (lrelu(layer.forward(&y, upd)?)? + skip)?;
        }
        for layer in &self.refine {
            y = lrelu(layer.forward(&y, upd)?)?;
        }
        Ok(self.conv9.forward(&y)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logits_match_input_resolution() {
        let d = build_unet_discriminator(8, 1, &Device::Cpu).unwrap();
        let x = Tensor::zeros((1, 3, 64, 64), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert_eq!(d.forward(&x).unwrap().dims(), &[1, 1, 64, 64]);
        let x = Tensor::zeros((1, 3, 128, 64), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert_eq!(d.forward(&x).unwrap().dims(), &[1, 1, 128, 64]);
    }

    #[test]
    fn narrow_width_and_odd_sizes_are_rejected() {
        assert!(build_unet_discriminator(4, 1, &Device::Cpu).is_err());
        let d = build_unet_discriminator(8, 1, &Device::Cpu).unwrap();
        let x = Tensor::zeros((1, 3, 60, 64), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(d.forward(&x), Err(Error::Shape(_))));
    }
}
