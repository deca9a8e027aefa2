use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgentError, CriticOutput, CriticRequest, RuleCritic, VisualCritic};
use crate::program::{AspectJudgment, DifferenceDescription, Overall};
use crate::raster::{compute_stats, ImageBuffer};

/// Critic whose descriptions are each useless with probability `p`, independently.
///
/// Useful descriptions come from the wrapped critic; useless ones say Go
/// while judging every aspect N/A, so they produce empty programs.
pub struct StochasticCritic {
    inner: Arc<dyn VisualCritic>,
    p: f64,
    rng: Mutex<ChaCha8Rng>,
}

impl StochasticCritic {
    pub fn new(inner: Arc<dyn VisualCritic>, p: f64, seed: u64) -> Self {
        StochasticCritic { inner, p: p.clamp(0.0, 1.0), rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)) }
    }

    /// Descriptions paired with whether each one is useful.
    pub fn describe_marked(&self, req: &CriticRequest<'_>) -> Result<Vec<(DifferenceDescription, bool)>, AgentError> {
        let out = self.inner.describe(req)?;
        let mut rng = self.rng.lock().unwrap();
        Ok(out
            .descriptions
            .into_iter()
            .map(|d| {
                if rng.random_bool(self.p) {
                    let useless = DifferenceDescription::new([AspectJudgment::NotApplicable; 7], Overall::Go, "");
                    (useless, false)
                } else {
                    (d, true)
                }
            })
            .collect())
    }
}

impl VisualCritic for StochasticCritic {
    fn describe(&self, req: &CriticRequest<'_>) -> Result<CriticOutput, AgentError> {
        let descriptions: Vec<DifferenceDescription> = self.describe_marked(req)?.into_iter().map(|(d, _)| d).collect();
        let raw = descriptions.iter().map(|d| d.to_text()).collect::<Vec<_>>().join("\n");
        Ok(CriticOutput { descriptions, attempts: 1, raw })
    }

    fn wants_score_summary(&self) -> bool {
        self.inner.wants_score_summary()
    }
}

/// Fraction of `trials` critic calls with at least one useful description among `n`.
pub fn at_least_one_useful_rate(p: f64, n: usize, trials: usize, seed: u64) -> f64 {
    let source = ImageBuffer::uniform(4, 4, [0.2, 0.25, 0.3]).expect("valid");
    let refs = vec![ImageBuffer::uniform(4, 4, [0.5, 0.5, 0.45]).expect("valid")];
    let req = CriticRequest {
        source: &source,
        refs: &refs,
        source_stats: compute_stats(&source),
        ref_stats_mean: Some(compute_stats(&refs[0])),
        score_summary: None,
        instruction: None,
        history: Vec::new(),
        n_candidates: n,
    };
    let critic = StochasticCritic::new(Arc::new(RuleCritic), p, seed);
    let hits = (0..trials)
        .filter(|_| critic.describe_marked(&req).expect("rule critic").iter().any(|(_, ok)| *ok))
        .count();
    hits as f64 / trials as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes() {
        assert_eq!(at_least_one_useful_rate(0.0, 1, 100, 1), 1.0);
        assert_eq!(at_least_one_useful_rate(1.0, 3, 100, 1), 0.0);
    }

    #[test]
    fn rate_tracks_independent_formula() {
        let rate = at_least_one_useful_rate(0.5, 2, 4000, 7);
        assert!((rate - 0.75).abs() < 0.03, "{rate}");
    }

    #[test]
    fn seeded_runs_repeat() {
        assert_eq!(at_least_one_useful_rate(0.3, 3, 500, 9), at_least_one_useful_rate(0.3, 3, 500, 9));
    }
}
