//! Pixel operations used by the degradation pipeline: filtering,
//! resampling, noise, JPEG roundtrips and unsharp masking.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::ImageEncoder;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::kernel::{default_sigma, gaussian_1d, Kernel2d};
use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

/// 2-D cross-correlation of each channel with `kernel`, reflect-padded.
pub fn filter2d(img: &ImagePlane, kernel: &Kernel2d) -> Result<ImagePlane> {
    let (h, w) = img.dims();
    let k = kernel.size;
    let r = (k / 2) as isize;
    let src = img.as_slice();
    let xs: Vec<Vec<usize>> = (0..w)
        .map(|x| (0..k).map(|j| reflect(x as isize + j as isize - r, w)).collect())
        .collect();
    let mut out = vec![0f32; h * w * 3];
    for y in 0..h {
        let rows: Vec<usize> = (0..k).map(|i| reflect(y as isize + i as isize - r, h)).collect();
        for x in 0..w {
            let mut acc = [0f64; 3];
            for (i, &sy) in rows.iter().enumerate() {
                let base = sy * w;
                for (j, &sx) in xs[x].iter().enumerate() {
                    let t = kernel.taps[i * k + j];
                    let p = (base + sx) * 3;
                    acc[0] += t * f64::from(src[p]);
                    acc[1] += t * f64::from(src[p + 1]);
                    acc[2] += t * f64::from(src[p + 2]);
                }
            }
            let o = (y * w + x) * 3;
            for c in 0..3 {
                out[o + c] = acc[c] as f32;
            }
        }
    }
    ImagePlane::new(h, w, out)
}

/// Separable filter with the same 1-D taps along both axes, reflect-padded.
/// Returns unclipped samples.
fn separable(data: &[f32], h: usize, w: usize, taps: &[f64]) -> Vec<f32> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0f32; data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f64; 3];
            for (j, &t) in taps.iter().enumerate() {
                let p = (y * w + reflect(x as isize + j as isize - r, w)) * 3;
                for c in 0..3 {
                    acc[c] += t * f64::from(data[p + c]);
                }
            }
            let o = (y * w + x) * 3;
            for c in 0..3 {
                tmp[o + c] = acc[c] as f32;
            }
        }
    }
    let mut out = vec![0f32; data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f64; 3];
            for (i, &t) in taps.iter().enumerate() {
                let p = (reflect(y as isize + i as isize - r, h) * w + x) * 3;
                for c in 0..3 {
                    acc[c] += t * f64::from(tmp[p + c]);
                }
            }
            let o = (y * w + x) * 3;
            for c in 0..3 {
                out[o + c] = acc[c] as f32;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    Nearest,
    Area,
    Bilinear,
    Bicubic,
}

/// Source taps for every output index along one axis.
fn axis_taps(mode: ResizeMode, input: usize, output: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = input as f64 / output as f64;
    let clamp = |i: isize| i.clamp(0, input as isize - 1) as usize;
    (0..output)
        .map(|o| match mode {
            ResizeMode::Nearest => {
                vec![(((o as f64 * scale).floor() as usize).min(input - 1), 1.0)]
            }
            ResizeMode::Area => {
                let start = (o as f64 * scale).floor() as usize;
                let end = (((o + 1) as f64 * scale).ceil() as usize).clamp(start + 1, input);
                let n = (end - start) as f32;
                (start..end).map(|i| (i, 1.0 / n)).collect()
            }
            ResizeMode::Bilinear => {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = src.floor() as isize;
                let f = src - i0 as f64;
                vec![(clamp(i0), (1.0 - f) as f32), (clamp(i0 + 1), f as f32)]
            }
            ResizeMode::Bicubic => {
                let src = (o as f64 + 0.5) * scale - 0.5;
                let i0 = src.floor() as isize;
                let t = src - i0 as f64;
                cubic_weights(t)
                    .iter()
                    .enumerate()
                    .map(|(k, &wt)| (clamp(i0 - 1 + k as isize), wt as f32))
                    .collect()
            }
        })
        .collect()
}

/// Keys cubic convolution weights with `a = -0.75`.
fn cubic_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.75;
    let near = |x: f64| ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0;
    let far = |x: f64| ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A;
    [far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)]
}

/// Resamples to `out_h × out_w` with half-pixel centres (no antialiasing).
pub fn resize(img: &ImagePlane, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<ImagePlane> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!("cannot resize to {out_h}x{out_w}")));
    }
    let (h, w) = img.dims();
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let src = img.as_slice();
    let tx = axis_taps(mode, w, out_w);
    let ty = axis_taps(mode, h, out_h);
    let mut rows = vec![0f32; h * out_w * 3];
    for y in 0..h {
        for (x, taps) in tx.iter().enumerate() {
            let o = (y * out_w + x) * 3;
            for &(sx, wt) in taps {
                let p = (y * w + sx) * 3;
                for c in 0..3 {
                    rows[o + c] += wt * src[p + c];
                }
            }
        }
    }
    let mut out = vec![0f32; out_h * out_w * 3];
    for (y, taps) in ty.iter().enumerate() {
        for &(sy, wt) in taps {
            let dst = &mut out[y * out_w * 3..(y + 1) * out_w * 3];
            let row = &rows[sy * out_w * 3..(sy + 1) * out_w * 3];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += wt * s;
            }
        }
    }
    ImagePlane::new(out_h, out_w, out)
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma` (in
/// `[0, 1]` intensity units). Gray noise uses one draw for all channels.
pub fn add_gaussian_noise(img: &ImagePlane, sigma: f64, gray: bool, rng: &mut impl Rng) -> Result<ImagePlane> {
    let normal = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = img.as_slice().to_vec();
    for px in data.chunks_exact_mut(3) {
        if gray {
            let n = normal.sample(rng) as f32;
            px.iter_mut().for_each(|v| *v += n);
        } else {
            px.iter_mut().for_each(|v| *v += normal.sample(rng) as f32);
        }
    }
    ImagePlane::new(img.height(), img.width(), data)
}

/// Photon noise on a 255-level intensity grid, scaled by `scale`. Gray
/// noise is computed on the luma channel and added to all channels.
pub fn add_poisson_noise(img: &ImagePlane, scale: f64, gray: bool, rng: &mut impl Rng) -> Result<ImagePlane> {
    const LEVELS: f64 = 255.0;
    let mut sample = |v: f64| -> f64 {
        let lambda = (v * LEVELS).max(0.0);
        if lambda == 0.0 {
            return 0.0;
        }
        let k: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
        k / LEVELS - v
    };
    let mut data = img.as_slice().to_vec();
    for px in data.chunks_exact_mut(3) {
        if gray {
            let luma = 0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2]);
            let n = (sample(luma) * scale) as f32;
            px.iter_mut().for_each(|v| *v += n);
        } else {
            for v in px.iter_mut() {
                *v += (sample(f64::from(*v)) * scale) as f32;
            }
        }
    }
    ImagePlane::new(img.height(), img.width(), data)
}

/// Encodes to JPEG at `quality` and decodes again.
pub fn jpeg_roundtrip(img: &ImagePlane, quality: u8) -> Result<ImagePlane> {
    let rgb = img.to_rgb8();
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality.clamp(1, 100)).write_image(
        rgb.as_raw(),
        rgb.width(),
        rgb.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    let decoded = image::ImageReader::with_format(Cursor::new(buf), image::ImageFormat::Jpeg)
        .decode()?
        .to_rgb8();
    Ok(ImagePlane::from_rgb8(&decoded))
}

/// Gaussian blur with an OpenCV-style kernel of odd size `k`.
pub fn gaussian_blur(img: &ImagePlane, k: usize, sigma: Option<f64>) -> Result<ImagePlane> {
    let taps = gaussian_1d(k, sigma.unwrap_or_else(|| default_sigma(k)));
    let (h, w) = img.dims();
    ImagePlane::new(h, w, separable(img.as_slice(), h, w, &taps))
}

/// Unsharp masking: `img + weight·(img − blur)` blended in only where the
/// residual exceeds `threshold` (in 8-bit levels), with a softened mask.
pub fn usm_sharpen(img: &ImagePlane, radius: f64, weight: f64, threshold: f64) -> Result<ImagePlane> {
    if weight < 0.0 {
        return Err(Error::Config(format!("sharpening weight must be >= 0, got {weight}")));
    }
    if weight == 0.0 {
        return Ok(img.clone());
    }
    let mut k = radius.round().max(1.0) as usize;
    if k % 2 == 0 {
        k += 1;
    }
    let (h, w) = img.dims();
    let taps = gaussian_1d(k, default_sigma(k).max(1e-3));
    let src = img.as_slice();
    let blur = separable(src, h, w, &taps);
    let residual: Vec<f32> = src.iter().zip(&blur).map(|(a, b)| a - b).collect();
    let mask: Vec<f32> = residual
        .iter()
        .map(|r| if f64::from(r.abs()) * 255.0 > threshold { 1.0 } else { 0.0 })
        .collect();
    let soft = separable(&mask, h, w, &taps);
    let out: Vec<f32> = src
        .iter()
        .zip(&residual)
        .zip(&soft)
        .map(|((&v, &r), &m)| {
            let sharp = (v + weight as f32 * r).clamp(0.0, 1.0);
            m * sharp + (1.0 - m) * v
        })
        .collect();
    ImagePlane::new(h, w, out)
}
