//! Normalized RGB rasters, PNG/JPEG I/O, color conversions and the image
//! statistics handed to the critic.
//!
//! Every intensity is an `f32` in `[0, 1]`, stored interleaved in R, G, B
//! order. Buffers are immutable once built: filters always produce a new
//! buffer.

mod color;
mod io;
mod stats;

pub use color::{lab_to_rgb_pixel, luminance, luminance_pixel, rgb_to_lab, rgb_to_lab_pixel, saturation_pixel, Lab};
pub use io::{
    decode_image_bytes, encode_png, encode_png_thumbnail, load_image, load_image_detailed, save_image,
    BitDepth, LoadedImage,
};
pub use stats::{compute_stats, ImageStats};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("buffer length {len} does not match {width}x{height}x3")]
    LengthMismatch { width: usize, height: usize, len: usize },
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
}

/// An H×W×3 raster of sRGB-encoded intensities in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    /// Builds a buffer from interleaved RGB data, checking every invariant.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidDimensions { width, height });
        }
        if data.len() != width * height * 3 {
            return Err(ImageError::LengthMismatch { width, height, len: data.len() });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self { width, height, data })
    }

    /// Builds a buffer from data that is already known to be in range.
    ///
    /// Kernels clamp every output, so they construct through here.
    pub(crate) fn from_clamped(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { width, height, data }
    }

    pub fn uniform(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self, ImageError> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::from_vec(width, height, data)
    }

    /// Builds a buffer by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::from_vec(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Interleaved channel values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// True when both buffers hold the same bits, not merely equal floats.
    pub fn bitwise_eq(&self, other: &ImageBuffer) -> bool {
        self.same_shape(other) && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// 2×2 box downsampling (odd trailing rows/columns are dropped).
    pub fn downsample_2x(&self) -> Result<ImageBuffer, ImageError> {
        let (w, h) = (self.width / 2, self.height / 2);
        ImageBuffer::from_fn(w, h, |x, y| {
            let mut acc = [0.0f32; 3];
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let p = self.pixel(2 * x + dx, 2 * y + dy);
                for c in 0..3 {
                    acc[c] += p[c];
                }
            }
            acc.map(|v| (v * 0.25).clamp(0.0, 1.0))
        })
    }
}

/// Mirror an out-of-range index back into `0..len`, repeating the edge
/// sample (`cba|abcd|dcb`). Valid for any `len >= 1` and any offset.
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    let len = len as isize;
    let period = 2 * len;
    let mut m = i.rem_euclid(period);
    if m >= len {
        m = period - 1 - m;
    }
    m as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_shapes() {
        assert!(matches!(
            ImageBuffer::from_vec(0, 1, vec![]),
            Err(ImageError::InvalidDimensions { .. })
        ));
        assert!(matches!(
            ImageBuffer::from_vec(1, 1, vec![0.0; 2]),
            Err(ImageError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ImageBuffer::from_vec(1, 1, vec![0.0, 1.5, 0.0]),
            Err(ImageError::OutOfRange { index: 1, .. })
        ));
        assert!(ImageBuffer::from_vec(1, 1, vec![f32::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn reflect_index_mirrors_with_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert!((-5..5).all(|i| reflect_index(i, 1) == 0));
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = ImageBuffer::from_fn(2, 2, |x, y| [(x + 2 * y) as f32 / 4.0; 3]).unwrap();
        let small = img.downsample_2x().unwrap();
        assert_eq!((small.width(), small.height()), (1, 1));
        assert!((small.pixel(0, 0)[0] - 0.375).abs() < 1e-7);
    }
}
