//! Image quality metrics and reference-set construction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{luminance, rgb_to_lab, ImageBuffer};
use crate::scoring::{kl_selection_score, prompt_distribution, DistributionProvider, PromptSet, ScoringError};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("image {width}x{height} is smaller than the 11x11 SSIM window")]
    TooSmall { width: usize, height: usize },
    #[error("dataset of {size} images cannot supply {m} references per image")]
    InsufficientDataset { size: usize, m: usize },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

fn check_shape(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), EvalError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(EvalError::ShapeMismatch(a.width(), a.height(), b.width(), b.height()))
    }
}

/// `10·log10(1/MSE)` over all channel values, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, EvalError> {
    check_shape(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    let mse = sum / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = k.iter().sum();
    k.map(|v| v / total)
}

/// Separable Gaussian filtering, valid positions only.
fn filter_valid(field: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &field[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM on Rec.601 luma.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, EvalError> {
    check_shape(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(EvalError::TooSmall { width: w, height: h });
    }
    let la: Vec<f64> = luminance(a).into_iter().map(f64::from).collect();
    let lb: Vec<f64> = luminance(b).into_iter().map(f64::from).collect();
    let k = ssim_kernel();
    let product = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu1 = filter_valid(&la, w, h, &k);
    let mu2 = filter_valid(&lb, w, h, &k);
    let e11 = filter_valid(&product(&la, &la), w, h, &k);
    let e22 = filter_valid(&product(&lb, &lb), w, h, &k);
    let e12 = filter_valid(&product(&la, &lb), w, h, &k);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let n = mu1.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (m1, m2) = (mu1[i], mu2[i]);
            let s11 = e11[i] - m1 * m1;
            let s22 = e22[i] - m2 * m2;
            let s12 = e12[i] - m1 * m2;
            ((2.0 * m1 * m2 + c1) * (2.0 * s12 + c2)) / ((m1 * m1 + m2 * m2 + c1) * (s11 + s22 + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean CIE76 distance in CIELAB.
pub fn delta_e(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, EvalError> {
    check_shape(a, b)?;
    let (la, lb) = (rgb_to_lab(a), rgb_to_lab(b));
    Ok(la.iter().zip(&lb).map(|(p, q)| p.distance(q)).sum::<f64>() / la.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub delta_e: f64,
}

impl MetricReport {
    pub fn compute(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<Self, EvalError> {
        Ok(MetricReport { psnr: psnr(pred, gt)?, ssim: ssim(pred, gt)?, delta_e: delta_e(pred, gt)? })
    }

    /// Average report of `src` against every reference it can be compared with.
    ///
    /// References of a different size, or too small for SSIM, are skipped.
    pub fn averaged(src: &ImageBuffer, refs: &[ImageBuffer]) -> Option<Self> {
        let reports: Vec<MetricReport> = refs.iter().filter_map(|r| MetricReport::compute(src, r).ok()).collect();
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(MetricReport {
            psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
            delta_e: reports.iter().map(|r| r.delta_e).sum::<f64>() / n,
        })
    }
}

/// Symmetric KL between every pair of prompt distributions.
pub fn divergence_matrix(
    dataset: &[ImageBuffer],
    provider: &dyn DistributionProvider,
    prompts: &PromptSet,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let dists = dataset
        .par_iter()
        .map(|img| prompt_distribution(provider, img, prompts))
        .collect::<Result<Vec<_>, _>>()?;
    let n = dists.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = kl_selection_score(&dists[i], &dists[j])? + kl_selection_score(&dists[j], &dists[i])?;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

/// For each image, the indices of its `m` most style-similar others, nearest first.
///
/// Ties break toward the lower index.
pub fn build_reference_pairs(
    dataset: &[ImageBuffer],
    provider: &dyn DistributionProvider,
    prompts: &PromptSet,
    m: usize,
) -> Result<Vec<Vec<usize>>, EvalError> {
    if m >= dataset.len() {
        return Err(EvalError::InsufficientDataset { size: dataset.len(), m });
    }
    let matrix = divergence_matrix(dataset, provider, prompts)?;
    Ok(matrix
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut others: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
            others.sort_by(|&x, &y| row[x].total_cmp(&row[y]).then(x.cmp(&y)));
            others.truncate(m);
            others
        })
        .collect())
}
