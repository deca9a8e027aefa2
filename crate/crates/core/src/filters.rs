//! The seven photometric operations and sequential program execution.
//!
//! Every kernel works on sRGB-encoded values, treats `f = 0` as an exact
//! identity, and clamps its output to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::program::RetouchProgram;
use crate::raster::{luminance_pixel, reflect_index, ImageBuffer};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("parameter {param} for {filter} is outside [-1, 1]")]
    ParamOutOfRange { filter: FilterKind, param: f64 },
}

/// The closed pool of retouching operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Exposure,
    Contrast,
    Highlight,
    Shadow,
    Saturation,
    Temperature,
    Texture,
}

impl FilterKind {
    pub const ALL: [FilterKind; 7] = [
        FilterKind::Exposure,
        FilterKind::Contrast,
        FilterKind::Highlight,
        FilterKind::Shadow,
        FilterKind::Saturation,
        FilterKind::Temperature,
        FilterKind::Texture,
    ];

    /// Canonical lowercase name used by the program language and prompts.
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Exposure => "exposure",
            FilterKind::Contrast => "contrast",
            FilterKind::Highlight => "highlight",
            FilterKind::Shadow => "shadow",
            FilterKind::Saturation => "saturation",
            FilterKind::Temperature => "temperature",
            FilterKind::Texture => "texture",
        }
    }

    /// Capitalized aspect label as it appears in critic output.
    pub fn label(self) -> &'static str {
        match self {
            FilterKind::Exposure => "Exposure",
            FilterKind::Contrast => "Contrast",
            FilterKind::Highlight => "Highlight",
            FilterKind::Shadow => "Shadow",
            FilterKind::Saturation => "Saturation",
            FilterKind::Temperature => "Temperature",
            FilterKind::Texture => "Texture",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether the kernel only looks at one pixel at a time (plus global means).
    pub fn is_pointwise(self) -> bool {
        self != FilterKind::Texture
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown filter {0:?}")]
pub struct UnknownFilter(pub String);

impl FromStr for FilterKind {
    type Err = UnknownFilter;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownFilter(s.to_string()))
    }
}

/// One `(filter, parameter)` application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetouchStep {
    pub filter: FilterKind,
    pub param: f64,
}

impl RetouchStep {
    pub fn new(filter: FilterKind, param: f64) -> Result<Self, FilterError> {
        let step = RetouchStep { filter, param };
        step.validate()?;
        Ok(step)
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.param.is_finite() && self.param.abs() <= 1.0 {
            Ok(())
        } else {
            Err(FilterError::ParamOutOfRange { filter: self.filter, param: self.param })
        }
    }
}

impl fmt::Display for RetouchStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.filter, self.param)
    }
}

#[inline]
fn clamp01(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

fn map_pixels(img: &ImageBuffer, f: impl Fn([f32; 3]) -> [f32; 3]) -> ImageBuffer {
    let mut out = Vec::with_capacity(img.data().len());
    for p in img.pixels() {
        out.extend(f(p).map(clamp01));
    }
    ImageBuffer::from_clamped(img.width(), img.height(), out)
}

/// Standard deviation of the texture filter's Gaussian for an image.
pub fn texture_sigma(width: usize, height: usize) -> f64 {
    (0.002 * width.max(height) as f64).max(1.0)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian blur with mirrored borders, accumulated in `f64`.
pub(crate) fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> Vec<f32> {
    let (w, h) = (img.width(), img.height());
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let src = img.data();

    let mut horizontal = vec![0.0f32; src.len()];
    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (k, wgt) in kernel.iter().enumerate() {
                let sx = reflect_index(x as isize + k as isize - radius, w);
                let i = (row + sx) * 3;
                for c in 0..3 {
                    acc[c] += wgt * src[i + c] as f64;
                }
            }
            let o = (row + x) * 3;
            for c in 0..3 {
                horizontal[o + c] = acc[c] as f32;
            }
        }
    }

    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (k, wgt) in kernel.iter().enumerate() {
                let sy = reflect_index(y as isize + k as isize - radius, h);
                let i = (sy * w + x) * 3;
                for c in 0..3 {
                    acc[c] += wgt * horizontal[i + c] as f64;
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

fn channel_mean(img: &ImageBuffer) -> f32 {
    let sum: f64 = img.data().iter().map(|&v| v as f64).sum();
    (sum / img.data().len() as f64) as f32
}

/// Applies one step to `img`, returning a new buffer of the same size.
pub fn apply_filter(img: &ImageBuffer, step: RetouchStep) -> Result<ImageBuffer, FilterError> {
    step.validate()?;
    if step.param == 0.0 {
        return Ok(img.clone());
    }
    let f = step.param as f32;
    let out = match step.filter {
        FilterKind::Exposure => {
            let gain = 2f32.powf(f);
            map_pixels(img, |p| p.map(|x| x * gain))
        }
        FilterKind::Contrast => {
            let mu = channel_mean(img);
            let k = 1.0 + f;
            map_pixels(img, |p| p.map(|x| mu + (x - mu) * k))
        }
        FilterKind::Highlight => map_pixels(img, |p| {
            let m = clamp01(2.0 * luminance_pixel(p) - 1.0);
            p.map(|x| x + 0.5 * f * m)
        }),
        FilterKind::Shadow => map_pixels(img, |p| {
            let m = clamp01(1.0 - 2.0 * luminance_pixel(p));
            p.map(|x| x + 0.5 * f * m)
        }),
        FilterKind::Saturation => {
            let k = 1.0 + f;
            map_pixels(img, |p| {
                let l = luminance_pixel(p);
                p.map(|x| l + (x - l) * k)
            })
        }
        FilterKind::Temperature => {
            let (red, blue) = (1.0 + 0.25 * f, 1.0 - 0.25 * f);
            map_pixels(img, |[r, g, b]| [r * red, g, b * blue])
        }
        FilterKind::Texture => {
            let blurred = gaussian_blur(img, texture_sigma(img.width(), img.height()));
            let data = img
                .data()
                .iter()
                .zip(&blurred)
                .map(|(&x, &low)| clamp01(x + f * (x - low)))
                .collect();
            ImageBuffer::from_clamped(img.width(), img.height(), data)
        }
    };
    Ok(out)
}

/// Runs the program's steps left to right, each feeding the next.
pub fn execute_program(img: &ImageBuffer, program: &RetouchProgram) -> Result<ImageBuffer, FilterError> {
    program.steps.iter().try_fold(img.clone(), |acc, &step| apply_filter(&acc, step))
}
