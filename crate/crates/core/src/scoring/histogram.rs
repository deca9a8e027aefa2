use serde::{Deserialize, Serialize};

use super::ScoringError;
use crate::raster::{luminance_pixel, ImageBuffer};

pub const HIST_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    /// Full-range BT.601 YCbCr; U and V are histogrammed separately.
    Yuv,
}

fn to_space(p: [f32; 3], space: ColorSpace) -> [f64; 3] {
    match space {
        ColorSpace::Rgb => p.map(f64::from),
        ColorSpace::Yuv => {
            let y = luminance_pixel(p) as f64;
            let u = 0.5 + (p[2] as f64 - y) / 1.772;
            let v = 0.5 + (p[0] as f64 - y) / 1.402;
            [y, u, v]
        }
    }
}

fn bin_of(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

/// Normalized 64-bin histograms, one per channel of `space`.
pub fn histogram(img: &ImageBuffer, space: ColorSpace) -> [[f64; HIST_BINS]; 3] {
    let mut hist = [[0.0f64; HIST_BINS]; 3];
    for p in img.pixels() {
        for (c, v) in to_space(p, space).into_iter().enumerate() {
            hist[c][bin_of(v)] += 1.0;
        }
    }
    let n = img.pixel_count() as f64;
    for h in &mut hist {
        for b in h.iter_mut() {
            *b /= n;
        }
    }
    hist
}

/// Sum over channels of the L1 distance between normalized histograms.
///
/// Sizes may differ. Each channel contributes at most 2.
pub fn hist_distance(a: &ImageBuffer, b: &ImageBuffer, space: ColorSpace) -> f64 {
    let (ha, hb) = (histogram(a, space), histogram(b, space));
    ha.iter()
        .zip(&hb)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .sum()
}

/// Mean histogram distance from `img` to each reference.
pub fn hist_distance_to_set(img: &ImageBuffer, refs: &[ImageBuffer], space: ColorSpace) -> Result<f64, ScoringError> {
    if refs.is_empty() {
        return Err(ScoringError::EmptyReferenceSet);
    }
    Ok(refs.iter().map(|r| hist_distance(img, r, space)).sum::<f64>() / refs.len() as f64)
}

/// One layer's activations, `channels × positions`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub positions: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, positions: usize, data: Vec<f64>) -> Result<Self, ScoringError> {
        if channels == 0 || positions == 0 || data.len() != channels * positions {
            return Err(ScoringError::ShapeMismatch(format!(
                "{} values for a {channels}x{positions} feature map",
                data.len()
            )));
        }
        Ok(FeatureMap { channels, positions, data })
    }

    /// `F Fᵀ / (C·H·W)`.
    pub fn gram(&self) -> Vec<f64> {
        let (c, n) = (self.channels, self.positions);
        let scale = 1.0 / (c * n) as f64;
        let mut g = vec![0.0; c * c];
        for i in 0..c {
            let fi = &self.data[i * n..(i + 1) * n];
            for j in i..c {
                let fj = &self.data[j * n..(j + 1) * n];
                let dot: f64 = fi.iter().zip(fj).map(|(a, b)| a * b).sum();
                g[i * c + j] = dot * scale;
                g[j * c + i] = dot * scale;
            }
        }
        g
    }
}

/// Sum over layers of the squared Frobenius distance between Gram matrices.
///
/// Feature extraction is the caller's job; layers must pair up by channel count.
pub fn gram_distance(feats_a: &[FeatureMap], feats_b: &[FeatureMap]) -> Result<f64, ScoringError> {
    if feats_a.len() != feats_b.len() {
        return Err(ScoringError::ShapeMismatch(format!("{} vs {} layers", feats_a.len(), feats_b.len())));
    }
    let mut total = 0.0;
    for (layer, (a, b)) in feats_a.iter().zip(feats_b).enumerate() {
        if a.channels != b.channels {
            return Err(ScoringError::ShapeMismatch(format!(
                "layer {layer}: {} vs {} channels",
                a.channels, b.channels
            )));
        }
        total += a.gram().iter().zip(b.gram()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok(total)
}
