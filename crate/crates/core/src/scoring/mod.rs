//! Style selection scores.
//!
//! The default score embeds each image against a fixed set of contrasting
//! style prompts, turns the logits into a distribution, and measures the KL
//! divergence from the reference set's mean distribution. Histogram and
//! Gram-matrix distances are available as alternatives.

mod embedding;
mod histogram;
mod stats_provider;

pub use embedding::{decode_embedding, encode_embedding, EmbeddingBackend, EmbeddingProvider, HttpEmbeddingBackend};
pub use histogram::{gram_distance, hist_distance, hist_distance_to_set, histogram, ColorSpace, FeatureMap, HIST_BINS};
pub use stats_provider::StatsProvider;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::ImageBuffer;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("embedding backend error: {0}")]
    Backend(String),
    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Which style prompt list to score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSetKind {
    /// Exposure, contrast, saturation and temperature pairs (K = 8).
    GlobalOnly,
    /// Adds highlight, shadow and texture pairs (K = 14).
    AllFilters,
}

const GLOBAL_PROMPTS: [&str; 8] = [
    "a dark light photo",
    "a bright light photo",
    "a low-contrast photo",
    "a high-contrast photo",
    "a desaturated colours photo",
    "a vivid colours photo",
    "a cool-toned photo",
    "a warm-toned photo",
];

const LOCAL_PROMPTS: [&str; 6] = [
    "a photo with dim highlights",
    "a photo with bright highlights",
    "a photo with dark shadows",
    "a photo with bright shadows",
    "a smooth photo",
    "a sharp photo",
];

/// An ordered list of contrasting prompt pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub kind: PromptSetKind,
    pub prompts: Vec<String>,
}

impl PromptSet {
    pub fn new(kind: PromptSetKind) -> Self {
        let prompts = match kind {
            PromptSetKind::GlobalOnly => GLOBAL_PROMPTS.iter().map(|s| s.to_string()).collect(),
            PromptSetKind::AllFilters => GLOBAL_PROMPTS
                .iter()
                .chain(LOCAL_PROMPTS.iter())
                .map(|s| s.to_string())
                .collect(),
        };
        PromptSet { kind, prompts }
    }

    pub fn global() -> Self {
        PromptSet::new(PromptSetKind::GlobalOnly)
    }

    pub fn all_filters() -> Self {
        PromptSet::new(PromptSetKind::AllFilters)
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// A strictly positive probability vector over the prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDistribution(Vec<f64>);

impl PromptDistribution {
    /// Numerically stable softmax.
    pub fn from_logits(logits: &[f64]) -> Result<Self, ScoringError> {
        if logits.is_empty() || logits.iter().any(|l| !l.is_finite()) {
            return Err(ScoringError::InvalidDistribution("logits must be finite and non-empty".into()));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(PromptDistribution(exps.into_iter().map(|e| e / total).collect()))
    }

    /// Wraps an existing probability vector after validating it.
    pub fn new(probs: Vec<f64>) -> Result<Self, ScoringError> {
        let d = PromptDistribution(probs);
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.0.is_empty() {
            return Err(ScoringError::InvalidDistribution("empty".into()));
        }
        if let Some(p) = self.0.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(ScoringError::InvalidDistribution(format!("non-positive probability {p}")));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ScoringError::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Component-wise mean of several distributions over the same prompts.
    pub fn mean(dists: &[PromptDistribution]) -> Result<Self, ScoringError> {
        let first = dists.first().ok_or(ScoringError::EmptyReferenceSet)?;
        let k = first.len();
        if dists.iter().any(|d| d.len() != k) {
            return Err(ScoringError::InvalidDistribution("distributions differ in length".into()));
        }
        let m = dists.len() as f64;
        let probs = (0..k).map(|i| dists.iter().map(|d| d.0[i]).sum::<f64>() / m).collect();
        Ok(PromptDistribution(probs))
    }
}

/// Maps an image to logits over a prompt set.
///
/// Implementations must be deterministic for a fixed backend state and
/// safe to call concurrently.
pub trait DistributionProvider: Send + Sync {
    fn logits(&self, img: &ImageBuffer, prompts: &PromptSet) -> Result<Vec<f64>, ScoringError>;
}

/// Softmax of the provider's logits for `img`.
pub fn prompt_distribution(
    provider: &dyn DistributionProvider,
    img: &ImageBuffer,
    prompts: &PromptSet,
) -> Result<PromptDistribution, ScoringError> {
    let logits = provider.logits(img, prompts)?;
    if logits.len() != prompts.len() {
        return Err(ScoringError::Backend(format!(
            "provider returned {} logits for {} prompts",
            logits.len(),
            prompts.len()
        )));
    }
    PromptDistribution::from_logits(&logits)
}

/// Mean prompt distribution of a reference set.
pub fn reference_distribution(
    provider: &dyn DistributionProvider,
    refs: &[ImageBuffer],
    prompts: &PromptSet,
) -> Result<PromptDistribution, ScoringError> {
    if refs.is_empty() {
        return Err(ScoringError::EmptyReferenceSet);
    }
    let dists = refs
        .par_iter()
        .map(|r| prompt_distribution(provider, r, prompts))
        .collect::<Result<Vec<_>, _>>()?;
    PromptDistribution::mean(&dists)
}

/// `KL(candidate ‖ reference)` with natural logarithms.
pub fn kl_selection_score(cand: &PromptDistribution, refbar: &PromptDistribution) -> Result<f64, ScoringError> {
    cand.validate()?;
    refbar.validate()?;
    if cand.len() != refbar.len() {
        return Err(ScoringError::InvalidDistribution("distributions differ in length".into()));
    }
    let kl: f64 = cand
        .0
        .iter()
        .zip(&refbar.0)
        .map(|(p, q)| p * (p.ln() - q.ln()))
        .sum();
    // Rounding can push an exact match a hair below zero.
    Ok(kl.max(0.0))
}

/// Index of the smallest score; ties go to the lowest index.
pub fn argmin_lowest_index(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        let s = if s.is_nan() { f64::INFINITY } else { s };
        match best {
            Some((_, b)) if s >= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Picks the candidate (index 0 = current source) closest in style to `refs`.
pub fn select_best(
    provider: &dyn DistributionProvider,
    candidates: &[ImageBuffer],
    refs: &[ImageBuffer],
    prompts: &PromptSet,
) -> Result<usize, ScoringError> {
    if candidates.is_empty() {
        return Err(ScoringError::EmptyCandidateSet);
    }
    let refbar = reference_distribution(provider, refs, prompts)?;
    let scores = candidates
        .par_iter()
        .map(|c| kl_selection_score(&prompt_distribution(provider, c, prompts)?, &refbar))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(argmin_lowest_index(&scores).expect("non-empty"))
}

/// A configured selection score.
#[derive(Clone)]
pub enum Scorer {
    PromptKl { provider: Arc<dyn DistributionProvider>, prompts: PromptSet },
    Histogram(ColorSpace),
}

impl std::fmt::Debug for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scorer::PromptKl { prompts, .. } => write!(f, "PromptKl({:?})", prompts.kind),
            Scorer::Histogram(space) => write!(f, "Histogram({space:?})"),
        }
    }
}

/// A scorer bound to one reference set, ready to score candidates.
#[derive(Clone)]
pub enum ScoreTarget {
    PromptKl {
        provider: Arc<dyn DistributionProvider>,
        prompts: PromptSet,
        reference: PromptDistribution,
    },
    Histogram { space: ColorSpace, refs: Arc<Vec<ImageBuffer>> },
}

impl Scorer {
    pub fn prompt_kl(provider: Arc<dyn DistributionProvider>, kind: PromptSetKind) -> Self {
        Scorer::PromptKl { provider, prompts: PromptSet::new(kind) }
    }

    /// Precomputes whatever depends only on the references.
    pub fn target(&self, refs: &[ImageBuffer]) -> Result<ScoreTarget, ScoringError> {
        if refs.is_empty() {
            return Err(ScoringError::EmptyReferenceSet);
        }
        Ok(match self {
            Scorer::PromptKl { provider, prompts } => ScoreTarget::PromptKl {
                provider: provider.clone(),
                prompts: prompts.clone(),
                reference: reference_distribution(provider.as_ref(), refs, prompts)?,
            },
            Scorer::Histogram(space) => ScoreTarget::Histogram { space: *space, refs: Arc::new(refs.to_vec()) },
        })
    }
}

impl ScoreTarget {
    pub fn score(&self, img: &ImageBuffer) -> Result<f64, ScoringError> {
        match self {
            ScoreTarget::PromptKl { provider, prompts, reference } => {
                kl_selection_score(&prompt_distribution(provider.as_ref(), img, prompts)?, reference)
            }
            ScoreTarget::Histogram { space, refs } => hist_distance_to_set(img, refs, *space),
        }
    }

    /// Scores every candidate, in order.
    pub fn score_all(&self, candidates: &[ImageBuffer]) -> Result<Vec<f64>, ScoringError> {
        candidates.par_iter().map(|c| self.score(c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FixedLogits(Vec<f64>);

    impl DistributionProvider for FixedLogits {
        fn logits(&self, _: &ImageBuffer, _: &PromptSet) -> Result<Vec<f64>, ScoringError> {
            Ok(self.0.clone())
        }
    }

    fn dist(p: &[f64]) -> PromptDistribution {
        PromptDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn prompt_sets_are_verbatim() {
        let g = PromptSet::global();
        assert_eq!(g.len(), 8);
        assert_eq!(g.prompts[0], "a dark light photo");
        assert_eq!(g.prompts[7], "a warm-toned photo");
        let all = PromptSet::all_filters();
        assert_eq!(all.len(), 14);
        assert_eq!(&all.prompts[..8], &g.prompts[..]);
        assert_eq!(all.prompts[8], "a photo with dim highlights");
        assert_eq!(all.prompts[13], "a sharp photo");
    }

    #[test]
    fn softmax_examples() {
        let img = ImageBuffer::uniform(1, 1, [0.5; 3]).unwrap();
        let prompts = PromptSet::global();
        let d = prompt_distribution(&FixedLogits(vec![0.7; 8]), &img, &prompts).unwrap();
        assert!(d.probs().iter().all(|p| (p - 0.125).abs() < 1e-15));

        let two = PromptDistribution::from_logits(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!((two.probs()[0] - 0.25).abs() < 1e-15 && (two.probs()[1] - 0.75).abs() < 1e-15);

        let logits = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 37.5).collect();
        let (a, b) = (PromptDistribution::from_logits(&logits).unwrap(), PromptDistribution::from_logits(&shifted).unwrap());
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-15);
        }
        // Large logits do not overflow.
        assert!(PromptDistribution::from_logits(&[1000.0, 999.0]).unwrap().validate().is_ok());
    }

    #[test]
    fn provider_length_mismatch_is_backend_error() {
        let img = ImageBuffer::uniform(1, 1, [0.5; 3]).unwrap();
        let err = prompt_distribution(&FixedLogits(vec![0.0; 3]), &img, &PromptSet::global()).unwrap_err();
        assert!(matches!(err, ScoringError::Backend(_)));
    }

    #[test]
    fn kl_examples() {
        let p = dist(&[0.5, 0.5]);
        assert_eq!(kl_selection_score(&p, &p).unwrap(), 0.0);
        // Direct two-term summation: 0.5 ln 2 + 0.5 ln(2/3).
        let q = dist(&[0.25, 0.75]);
        assert!((kl_selection_score(&p, &q).unwrap() - 0.143_841_036_225_890_4).abs() < 1e-12);
        let eps: f64 = 1e-6;
        let direct = (1.0 - eps) * ((1.0 - eps) / eps).ln() + eps * (eps / (1.0 - eps)).ln();
        let kl = kl_selection_score(&dist(&[1.0 - eps, eps]), &dist(&[eps, 1.0 - eps])).unwrap();
        assert!((kl - direct).abs() < 1e-9);
        assert!((kl - 13.815_481_926_944_658).abs() < 1e-9);
    }

    #[test]
    fn kl_rejects_invalid_inputs() {
        let ok = dist(&[0.5, 0.5]);
        let bad = PromptDistribution(vec![0.6, 0.6]);
        assert!(matches!(kl_selection_score(&bad, &ok), Err(ScoringError::InvalidDistribution(_))));
        let zero = PromptDistribution(vec![1.0, 0.0]);
        assert!(matches!(kl_selection_score(&ok, &zero), Err(ScoringError::InvalidDistribution(_))));
        assert!(kl_selection_score(&ok, &dist(&[0.2, 0.3, 0.5])).is_err());
    }

    #[test]
    fn reference_mean() {
        let p = PromptDistribution::mean(&[dist(&[0.9, 0.1]), dist(&[0.1, 0.9])]).unwrap();
        assert!((p.probs()[0] - 0.5).abs() < 1e-15);
        let same = PromptDistribution::mean(&vec![dist(&[0.3, 0.7]); 5]).unwrap();
        assert!((same.probs()[0] - 0.3).abs() < 1e-15);
        assert_eq!(PromptDistribution::mean(&[]), Err(ScoringError::EmptyReferenceSet));
        let err = reference_distribution(&FixedLogits(vec![0.0; 8]), &[], &PromptSet::global()).unwrap_err();
        assert_eq!(err, ScoringError::EmptyReferenceSet);
    }

    #[test]
    fn argmin_prefers_lowest_index_on_ties() {
        assert_eq!(argmin_lowest_index(&[0.3, 0.1, 0.1]), Some(1));
        assert_eq!(argmin_lowest_index(&[0.2, 0.2, 0.2]), Some(0));
        assert_eq!(argmin_lowest_index(&[f64::NAN, 0.5]), Some(1));
        assert_eq!(argmin_lowest_index(&[]), None);
    }

    #[test]
    fn select_best_finds_reference_twin_and_breaks_ties_to_source() {
        let provider = StatsProvider;
        let prompts = PromptSet::global();
        let reference = ImageBuffer::uniform(4, 4, [0.7, 0.5, 0.3]).unwrap();
        let candidates = vec![
            ImageBuffer::uniform(4, 4, [0.2; 3]).unwrap(),
            ImageBuffer::uniform(4, 4, [0.9, 0.9, 0.1]).unwrap(),
            reference.clone(),
        ];
        assert_eq!(select_best(&provider, &candidates, std::slice::from_ref(&reference), &prompts).unwrap(), 2);
        let same = vec![candidates[0].clone(); 3];
        assert_eq!(select_best(&provider, &same, &[reference], &prompts).unwrap(), 0);
        assert_eq!(select_best(&provider, &[], &same, &prompts), Err(ScoringError::EmptyCandidateSet));
    }
}
