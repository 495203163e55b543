//! 8-bit interleaved images and the conversions the networks need.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::{Scalar, Tensor};
use crate::{math, Error, Result};

/// 8-bit image with interleaved channels (row-major, `HWC`).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels == 0 || data.len() != width * height * channels {
            return Err(Error::InvalidArgument(alloc::format!(
                "raw buffer of {} bytes does not describe a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Rec. 601 luma as a single-channel image. Single-channel input is
    /// returned unchanged.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| {
                let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
                math::round(y).clamp(0.0, 255.0) as u8
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Copies a single channel into three identical channels.
    pub fn replicate3(&self) -> Result<Image> {
        if self.channels != 1 {
            return Err(Error::ChannelMismatch {
                expected: 1,
                got: self.channels,
            });
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Ok(Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        })
    }

    pub fn flipped_horizontally(&self) -> Image {
        let mut out = self.clone();
        let c = self.channels;
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + (self.width - 1 - x)) * c;
                let dst = (y * self.width + x) * c;
                out.data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        out
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let planes = resize_planes(&self.to_planes(), self.channels, self.width, self.height, width, height);
        Image::from_planes(&planes, self.channels, width, height)
    }

    /// Channel-major `f64` copy scaled to `[0, 1]`.
    fn to_planes(&self) -> Vec<f64> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut out = vec![0.0; w * h * c];
        for (i, px) in self.data.chunks_exact(c).enumerate() {
            for (k, &v) in px.iter().enumerate() {
                out[k * w * h + i] = v as f64;
            }
        }
        out
    }

    fn from_planes(planes: &[f64], channels: usize, width: usize, height: usize) -> Image {
        let plane = width * height;
        let mut data = vec![0u8; plane * channels];
        for i in 0..plane {
            for k in 0..channels {
                data[i * channels + k] = math::round(planes[k * plane + i]).clamp(0.0, 255.0) as u8;
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    /// Resizes to `size`×`size` and converts to a `1×C×H×W` tensor with values
    /// in `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self, size: usize) -> Tensor<T> {
        let resized = self.resize_bilinear(size, size);
        let mut t = Tensor::zeros([1, self.channels, size, size]);
        resized.write_into(t.sample_mut(0), 1.0 / 255.0, 0.0);
        t
    }

    /// Writes the image into a channel-major buffer as `v * scale + offset`.
    pub fn write_into<T: Scalar>(&self, out: &mut [T], scale: f64, offset: f64) {
        let plane = self.width * self.height;
        assert_eq!(out.len(), plane * self.channels);
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (k, &v) in px.iter().enumerate() {
                out[k * plane + i] = T::from_f64(v as f64 * scale + offset).unwrap();
            }
        }
    }

    /// Inverse of [`Image::write_into`]: reads a channel-major buffer
    /// holding `v * scale + offset`, rounding and clamping to 8 bits.
    pub fn from_tensor_plane<T: Scalar>(values: &[T], channels: usize, width: usize, height: usize, scale: f64, offset: f64) -> Image {
        let planes: Vec<f64> = values.iter().map(|v| (v.to_f64().unwrap() - offset) / scale).collect();
        Image::from_planes(&planes, channels, width, height)
    }
}

/// Bilinear resampling of channel-major planes.
pub fn resize_planes(src: &[f64], channels: usize, sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; dw * dh * channels];
    if sw == 0 || sh == 0 || dw == 0 || dh == 0 {
        return out;
    }
    let sx = sw as f64 / dw as f64;
    let sy = sh as f64 / dh as f64;
    let taps = |d: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = math::floor(s) as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..dw).map(|x| taps(x, sx, sw)).collect();
    for y in 0..dh {
        let (y0, y1, fy) = taps(y, sy, sh);
        for k in 0..channels {
            let plane = &src[k * sw * sh..(k + 1) * sw * sh];
            let row0 = &plane[y0 * sw..(y0 + 1) * sw];
            let row1 = &plane[y1 * sw..(y1 + 1) * sw];
            let dst = &mut out[k * dw * dh + y * dw..k * dw * dh + (y + 1) * dw];
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = row0[x0] * (1.0 - fx) + row0[x1] * fx;
                let bot = row1[x0] * (1.0 - fx) + row1[x1] * fx;
                dst[x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}
