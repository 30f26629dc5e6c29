//! The floating-point RGB image that every module exchanges.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};

/// An H×W×3 image with values in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub const CHANNELS: usize = 3;

    /// Wraps interleaved RGB samples. Values are clipped to `[0, 1]`;
    /// non-finite samples are rejected.
    pub fn new(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::Shape(format!(
                "expected {} samples for {height}x{width}x3, got {}",
                height * width * Self::CHANNELS,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite sample at index {i}")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * Self::CHANNELS])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Converts to a `(1, 3, H, W)` f32 tensor.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        let hw = self.height * self.width;
        let mut planar = vec![0f32; hw * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            planar[i] = px[0];
            planar[hw + i] = px[1];
            planar[2 * hw + i] = px[2];
        }
        Ok(Tensor::from_vec(
            planar,
            (1, 3, self.height, self.width),
            device,
        )?)
    }

    /// Converts a `(1, 3, H, W)` or `(3, H, W)` tensor, clipping to `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 => {
                if t.dim(0)? != 1 {
                    return Err(Error::Shape(format!(
                        "expected batch size 1, got {:?}",
                        t.dims()
                    )));
                }
                t.squeeze(0)?
            }
            3 => t.clone(),
            _ => return Err(Error::Shape(format!("expected CHW tensor, got {:?}", t.dims()))),
        };
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let planar = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let hw = h * w;
        let mut data = Vec::with_capacity(hw * 3);
        for i in 0..hw {
            data.push(planar[i]);
            data.push(planar[hw + i]);
            data.push(planar[2 * hw + i]);
        }
        Self::new(h, w, data)
    }

    /// Decodes any format the `image` crate understands.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self {
            height: h as usize,
            width: w as usize,
            data,
        }
    }

    /// Quantizes to 8 bits with round-half-up.
    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let raw = self
            .data
            .iter()
            .map(|&v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// Writes a lossless 8-bit PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f32> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan_and_clips() {
        assert!(ImagePlane::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
        let img = ImagePlane::new(1, 1, vec![-1.0, 0.5, 2.0]).unwrap();
        assert_eq!(img.as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn tensor_roundtrip_preserves_layout() {
        let img = ImagePlane::from_fn(2, 3, |y, x, c| (y * 9 + x * 3 + c) as f32 / 20.0).unwrap();
        let t = img.to_tensor(&Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 2, 3]);
        let v = t.i_get(0, 2, 1, 2);
        assert_eq!(v, img.get(1, 2, 2));
        assert_eq!(ImagePlane::from_tensor(&t).unwrap(), img);
    }

    trait IGet {
        fn i_get(&self, n: usize, c: usize, y: usize, x: usize) -> f32;
    }

    impl IGet for Tensor {
        fn i_get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
            use candle_core::IndexOp;
            self.i((n, c, y, x)).unwrap().to_scalar::<f32>().unwrap()
        }
    }
}
