//! Blur kernel synthesis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurKind {
    IsoGaussian,
    AnisoGaussian,
    GeneralizedGaussian,
    Plateau,
    Sinc,
}

/// A fully specified blur kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurSpec {
    pub kind: BlurKind,
    pub kernel_size: usize,
    /// Standard deviations along the rotated axes (Gaussian family).
    #[serde(default)]
    pub sigma_x: f64,
    #[serde(default)]
    pub sigma_y: f64,
    /// Rotation of the `x` axis, radians.
    #[serde(default)]
    pub rotation: f64,
    /// Shape exponent for the generalized and plateau kernels.
    #[serde(default = "one")]
    pub beta: f64,
    /// Angular cutoff frequency for sinc kernels.
    #[serde(default)]
    pub cutoff: f64,
}

fn one() -> f64 {
    1.0
}

impl BlurSpec {
    pub fn iso(kernel_size: usize, sigma: f64) -> Self {
        Self {
            kind: BlurKind::IsoGaussian,
            kernel_size,
            sigma_x: sigma,
            sigma_y: sigma,
            rotation: 0.0,
            beta: 1.0,
            cutoff: 0.0,
        }
    }

    pub fn sinc(kernel_size: usize, cutoff: f64) -> Self {
        Self {
            kind: BlurKind::Sinc,
            cutoff,
            ..Self::iso(kernel_size, 0.0)
        }
    }
}

/// Square kernel stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    pub size: usize,
    pub taps: Vec<f64>,
}

impl Kernel2d {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.taps[y * self.size + x]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    fn normalized(size: usize, mut taps: Vec<f64>) -> Result<Self> {
        let s: f64 = taps.iter().sum();
        if !s.is_finite() || s.abs() < 1e-300 {
            return Err(Error::Config(format!("kernel sums to {s}; cannot normalize")));
        }
        taps.iter_mut().for_each(|t| *t /= s);
        Ok(Self { size, taps })
    }
}

/// Quadratic form `xᵀ Σ⁻¹ x` of the rotated covariance
/// `R diag(σx², σy²) Rᵀ`.
fn mahalanobis(spec: &BlurSpec) -> Result<impl Fn(f64, f64) -> f64> {
    let (sx, sy) = (spec.sigma_x, spec.sigma_y);
    if !(sx > 0.0 && sy > 0.0) {
        return Err(Error::Config(format!("blur sigmas must be positive, got ({sx}, {sy})")));
    }
    let (c, s) = (spec.rotation.cos(), spec.rotation.sin());
    let (a, b) = (1.0 / (sx * sx), 1.0 / (sy * sy));
    // Σ⁻¹ = R diag(a, b) Rᵀ
    let i00 = c * c * a + s * s * b;
    let i01 = c * s * (a - b);
    let i11 = s * s * a + c * c * b;
    Ok(move |x: f64, y: f64| i00 * x * x + 2.0 * i01 * x * y + i11 * y * y)
}

/// Builds a unit-sum kernel from `spec`.
pub fn make_blur_kernel(spec: &BlurSpec) -> Result<Kernel2d> {
    let k = spec.kernel_size;
    if k % 2 == 0 || k == 0 {
        return Err(Error::Config(format!("kernel size {k} must be odd")));
    }
    let r = (k / 2) as f64;
    let grid = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        (0..k * k)
            .map(|i| f((i % k) as f64 - r, (i / k) as f64 - r))
            .collect()
    };
    let taps = match spec.kind {
        BlurKind::IsoGaussian | BlurKind::AnisoGaussian => {
            let q = mahalanobis(spec)?;
            grid(&|x, y| (-0.5 * q(x, y)).exp())
        }
        BlurKind::GeneralizedGaussian => {
            let q = mahalanobis(spec)?;
            let beta = spec.beta;
            grid(&|x, y| (-0.5 * q(x, y).powf(beta)).exp())
        }
        BlurKind::Plateau => {
            let q = mahalanobis(spec)?;
            let beta = spec.beta;
            grid(&|x, y| 1.0 / (1.0 + q(x, y).powf(beta)))
        }
        BlurKind::Sinc => {
            let wc = spec.cutoff;
            if !(wc > 0.0) {
                return Err(Error::Config(format!("sinc cutoff must be positive, got {wc}")));
            }
            grid(&|x, y| {
                let d = (x * x + y * y).sqrt();
                if d == 0.0 {
                    wc * wc / (4.0 * PI)
                } else {
                    wc * libm::j1(wc * d) / (2.0 * PI * d)
                }
            })
        }
    };
    Kernel2d::normalized(k, taps)
}

/// OpenCV's sigma for a Gaussian of size `k` when none is given.
pub fn default_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_1d(k: usize, sigma: f64) -> Vec<f64> {
    let r = (k / 2) as f64;
    let taps: Vec<f64> = (0..k)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}
