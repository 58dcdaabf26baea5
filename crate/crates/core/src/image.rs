//! Plain image and mask containers.
//!
//! Images are stored row-major in `H×W×C` order with `f64` samples. Raw
//! inputs live in `[0, 1]`; frequency views and mixed images are signed.

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "expected {} samples for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Copies channel `c` into a dense `H×W` plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn set_plane(&mut self, c: usize, plane: &[f64]) {
        for (i, v) in plane.iter().enumerate() {
            self.data[i * self.channels + c] = *v;
        }
    }

    /// Channel-averaged intensity plane.
    pub fn gray(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|v| f(*v)).collect(),
            ..self.clone()
        }
    }

    /// Converts between one and three channels (luma average / replication).
    pub fn with_channels(&self, channels: usize) -> Result<Image> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (3, 1) => Image::new(self.height, self.width, 1, self.gray()),
            (1, 3) => Image::new(
                self.height,
                self.width,
                3,
                self.data.iter().flat_map(|v| [*v, *v, *v]).collect(),
            ),
            (_, b) => Err(Error::shape(format!("cannot convert to {b} channels"))),
        }
    }

    /// Bilinear (triangle filter) resampling.
    pub fn resized(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(Error::shape("resize to empty image"));
        }
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let data: Vec<f64> = if self.channels == 3 {
            let buf: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_raw(
                self.width as u32,
                self.height as u32,
                self.data.iter().map(|v| *v as f32).collect(),
            )
            .expect("buffer size checked at construction");
            imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle)
                .into_raw()
                .into_iter()
                .map(f64::from)
                .collect()
        } else {
            let buf: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
                self.width as u32,
                self.height as u32,
                self.data.iter().map(|v| *v as f32).collect(),
            )
            .expect("buffer size checked at construction");
            imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle)
                .into_raw()
                .into_iter()
                .map(f64::from)
                .collect()
        };
        Image::new(height, width, self.channels, data)
    }
}

/// Binary `H×W` mask with entries exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty mask {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "expected {} mask entries, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| *v > 1) {
            return Err(Error::Value("mask entries must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|v| **v == 1).count()
    }

    /// Fraction of foreground entries.
    pub fn coverage(&self) -> f64 {
        self.count_ones() as f64 / self.data.len() as f64
    }

    pub fn inverted(&self) -> Mask {
        Mask {
            data: self.data.iter().map(|v| 1 - v).collect(),
            ..self.clone()
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| f64::from(*v)).collect()
    }

    /// Nearest-neighbour resampling, which keeps the mask binary.
    pub fn resized(&self, height: usize, width: usize) -> Result<Mask> {
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer size checked at construction");
        let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Nearest);
        Mask::new(height, width, out.into_raw())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Image::new(0, 4, 1, vec![]).is_err());
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(Mask::new(2, 2, vec![0, 1, 2, 0]).is_err());
    }

    #[test]
    fn planes_round_trip() {
        let img = Image::from_fn(3, 4, 3, |y, x, c| (y * 100 + x * 10 + c) as f64).unwrap();
        let mut other = Image::filled(3, 4, 3, 0.0).unwrap();
        for c in 0..3 {
            other.set_plane(c, &img.plane(c));
        }
        assert_eq!(img, other);
        assert_eq!(img.get(2, 3, 1), 231.0);
    }

    #[test]
    fn mask_resize_stays_binary() {
        let m = Mask::from_fn(8, 8, |y, x| (y + x) % 3 == 0).unwrap();
        let r = m.resized(5, 13).unwrap();
        assert!(r.data().iter().all(|v| *v <= 1));
        assert_eq!(r.height(), 5);
        assert_eq!(r.width(), 13);
    }

    #[test]
    fn channel_conversion() {
        let img = Image::from_fn(2, 2, 3, |_, _, c| c as f64).unwrap();
        let g = img.with_channels(1).unwrap();
        assert!(g.data().iter().all(|v| (*v - 1.0).abs() < 1e-12));
        assert_eq!(g.with_channels(3).unwrap().channels(), 3);
    }
}
