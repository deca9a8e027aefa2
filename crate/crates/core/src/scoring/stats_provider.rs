use super::{DistributionProvider, PromptSet, PromptSetKind, ScoringError};
use crate::raster::{compute_stats, ImageBuffer, ImageStats};

const SLOPE: f64 = 6.0;
// Laplacian variance at which the sharpness proxy reads 0.5.
const SHARPNESS_HALF_POINT: f64 = 0.005;

/// Deterministic, model-free provider driven by [`ImageStats`].
///
/// Each contrasting prompt pair `(low, high)` gets logits `(−s, +s)` with
/// `s = 6·(stat − 0.5)`, where `stat ∈ [0, 1]` grows with the quantity the
/// pair names. It stands in for an embedding model in offline runs and tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct StatsProvider;

impl StatsProvider {
    /// The per-pair statistics in prompt-pair order.
    pub fn pair_stats(stats: &ImageStats, kind: PromptSetKind) -> Vec<f64> {
        let mut out = vec![
            stats.pixel_mean,
            (2.0 * stats.pixel_std).min(1.0),
            stats.sat_mean,
            (0.5 + (stats.mean_r - stats.mean_b)).clamp(0.0, 1.0),
        ];
        if kind == PromptSetKind::AllFilters {
            let lap = stats.laplacian_variance;
            out.extend([stats.p10_high, stats.p10_low, lap / (lap + SHARPNESS_HALF_POINT)]);
        }
        out
    }
}

impl DistributionProvider for StatsProvider {
    fn logits(&self, img: &ImageBuffer, prompts: &PromptSet) -> Result<Vec<f64>, ScoringError> {
        let stats = compute_stats(img);
        let logits: Vec<f64> = Self::pair_stats(&stats, prompts.kind)
            .into_iter()
            .flat_map(|stat| {
                let s = SLOPE * (stat - 0.5);
                [-s, s]
            })
            .collect();
        debug_assert_eq!(logits.len(), prompts.len());
        Ok(logits)
    }
}
