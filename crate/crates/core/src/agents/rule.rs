use super::{require_go, AgentError, CodeGenerator, CodegenOutput, CriticOutput, CriticRequest, VisualCritic};
use crate::filters::{FilterKind, RetouchStep};
use crate::program::{
    allowed_ranges, range_index_for, AspectJudgment, DifferenceDescription, Direction, Overall, RetouchProgram,
};
use crate::raster::ImageStats;

/// Differences below this many percent are reported as N/A.
const NA_THRESHOLD_PERCENT: f64 = 1.0;
// Smallest denominator for the relative difference.
const DENOM_FLOOR: f64 = 0.05;
const TEXTURE_DENOM_FLOOR: f64 = 1e-4;

fn proxy(stats: &ImageStats, kind: FilterKind) -> f64 {
    match kind {
        FilterKind::Exposure => stats.pixel_mean,
        FilterKind::Contrast => stats.pixel_std,
        FilterKind::Highlight => stats.p10_high,
        FilterKind::Shadow => stats.p10_low,
        FilterKind::Saturation => stats.sat_mean,
        FilterKind::Temperature => stats.mean_r - stats.mean_b,
        FilterKind::Texture => stats.laplacian_variance,
    }
}

/// Deterministic critic comparing proxy statistics of source and references.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleCritic;

impl RuleCritic {
    /// `100·(ref − src)/|ref|` on the aspect's proxy statistic.
    pub fn relative_difference(src: &ImageStats, reference: &ImageStats, kind: FilterKind) -> f64 {
        let floor = if kind == FilterKind::Texture { TEXTURE_DENOM_FLOOR } else { DENOM_FLOOR };
        let (s, r) = (proxy(src, kind), proxy(reference, kind));
        100.0 * (r - s) / r.abs().max(floor)
    }

    /// Range offsets per candidate: 0, −1, +1, −2, +2, …
    pub fn candidate_offset(i: usize) -> isize {
        let step = i.div_ceil(2) as isize;
        if i % 2 == 1 {
            -step
        } else {
            step
        }
    }

    pub fn describe_stats(src: &ImageStats, reference: &ImageStats, n: usize) -> Vec<DifferenceDescription> {
        let last = allowed_ranges().len() as isize - 1;
        (0..n)
            .map(|i| {
                let offset = Self::candidate_offset(i);
                let judgments = FilterKind::ALL.map(|kind| {
                    let diff = Self::relative_difference(src, reference, kind);
                    if diff.abs() < NA_THRESHOLD_PERCENT || !diff.is_finite() {
                        return AspectJudgment::NotApplicable;
                    }
                    let idx = (range_index_for(diff.abs()) as isize + offset).clamp(0, last) as usize;
                    let direction = if diff > 0.0 { Direction::Increase } else { Direction::Decrease };
                    AspectJudgment::adjust(direction, allowed_ranges()[idx])
                });
                let overall = if judgments.iter().all(AspectJudgment::is_na) { Overall::Stop } else { Overall::Go };
                let mut desc = DifferenceDescription::new(judgments, overall, "");
                desc.raw_text = desc.to_text();
                desc
            })
            .collect()
    }
}

impl VisualCritic for RuleCritic {
    fn describe(&self, req: &CriticRequest<'_>) -> Result<CriticOutput, AgentError> {
        req.validate()?;
        let reference = req.ref_stats_mean.as_ref().ok_or_else(|| {
            AgentError::InvalidRequest("the rule critic needs reference images; instructions need a chat backend".into())
        })?;
        let descriptions = Self::describe_stats(&req.source_stats, reference, req.n_candidates);
        let raw = descriptions
            .iter()
            .enumerate()
            .map(|(i, d)| format!("Candidate {}\n{}", i + 1, d.raw_text))
            .collect::<Vec<_>>()
            .join("\n");
        Ok(CriticOutput { descriptions, attempts: 1, raw })
    }

    fn wants_score_summary(&self) -> bool {
        false
    }
}

/// A phase is entered when some judged range starts at or above this many percent.
const PHASE_THRESHOLD_PERCENT: f64 = 1.0;

const PHASES: [&[FilterKind]; 3] = [
    &[FilterKind::Exposure, FilterKind::Contrast],
    &[FilterKind::Highlight, FilterKind::Shadow],
    &[FilterKind::Saturation, FilterKind::Temperature, FilterKind::Texture],
];

/// Deterministic code generator following the global → local → color/texture order.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleCodegen;

impl RuleCodegen {
    pub fn program_for(desc: &DifferenceDescription) -> RetouchProgram {
        let clearly_needed = |k: &FilterKind| desc.judgment(*k).range().is_some_and(|r| f64::from(r.lo) >= PHASE_THRESHOLD_PERCENT);
        let phase = PHASES
            .iter()
            .find(|kinds| kinds.iter().any(clearly_needed))
            .or_else(|| PHASES.iter().find(|kinds| kinds.iter().any(|k| !desc.judgment(*k).is_na())))
            .copied()
            .unwrap_or(&[]);
        let steps = phase
            .iter()
            .filter_map(|&kind| {
                let j = desc.judgment(kind);
                let param = (j.direction()?.sign() * j.range()?.midpoint() / 100.0).clamp(-1.0, 1.0);
                Some(RetouchStep::new(kind, param).expect("clamped"))
            })
            .collect();
        RetouchProgram::new(steps).with_provenance("rule codegen")
    }
}

impl CodeGenerator for RuleCodegen {
    fn generate(&self, desc: &DifferenceDescription, save_name: &str) -> Result<CodegenOutput, AgentError> {
        require_go(desc)?;
        let program = Self::program_for(desc);
        let raw = program.to_calls(save_name);
        Ok(CodegenOutput { program, attempts: 1, raw })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::PercentRange;
    use crate::raster::{compute_stats, ImageBuffer};
    use proptest::prelude::*;

    fn stats_with_mean(m: f64) -> ImageStats {
        let mut s = compute_stats(&ImageBuffer::uniform(2, 2, [0.5; 3]).unwrap());
        s.pixel_mean = m;
        s
    }

    fn desc(pairs: &[(FilterKind, AspectJudgment)]) -> DifferenceDescription {
        let mut j = [AspectJudgment::NotApplicable; 7];
        for (k, v) in pairs {
            j[k.index()] = *v;
        }
        DifferenceDescription::new(j, Overall::Go, "")
    }

    const R: fn(u8, u8) -> PercentRange = |lo, hi| PercentRange { lo, hi };

    #[test]
    fn identical_stats_stop() {
        let s = compute_stats(&ImageBuffer::from_fn(8, 8, |x, y| [x as f32 / 8.0, y as f32 / 8.0, 0.3]).unwrap());
        let descs = RuleCritic::describe_stats(&s, &s, 3);
        assert_eq!(descs.len(), 3);
        assert!(descs.iter().all(|d| d.is_stop()));
    }

    #[test]
    fn exposure_fifty_percent_lands_in_forty_sixty() {
        let descs = RuleCritic::describe_stats(&stats_with_mean(0.25), &stats_with_mean(0.5), 3);
        assert_eq!(descs[0].judgment(FilterKind::Exposure), AspectJudgment::Increase(R(40, 60)));
        assert_eq!(descs[1].judgment(FilterKind::Exposure), AspectJudgment::Increase(R(20, 40)));
        assert_eq!(descs[2].judgment(FilterKind::Exposure), AspectJudgment::Increase(R(60, 100)));
        for d in &descs {
            for k in FilterKind::ALL.into_iter().filter(|k| *k != FilterKind::Exposure) {
                assert!(d.judgment(k).is_na());
            }
        }
    }

    #[test]
    fn offsets_alternate() {
        let offsets: Vec<isize> = (0..5).map(RuleCritic::candidate_offset).collect();
        assert_eq!(offsets, vec![0, -1, 1, -2, 2]);
    }

    #[test]
    fn midpoint_rule() {
        let p = RuleCodegen::program_for(&desc(&[(FilterKind::Exposure, AspectJudgment::Increase(R(40, 60)))]));
        assert_eq!(p.steps, vec![RetouchStep::new(FilterKind::Exposure, 0.5).unwrap()]);
    }

    #[test]
    fn local_phase() {
        let p = RuleCodegen::program_for(&desc(&[
            (FilterKind::Highlight, AspectJudgment::Decrease(R(10, 20))),
            (FilterKind::Shadow, AspectJudgment::Increase(R(5, 10))),
        ]));
        assert_eq!(
            p.steps,
            vec![
                RetouchStep::new(FilterKind::Highlight, -0.15).unwrap(),
                RetouchStep::new(FilterKind::Shadow, 0.075).unwrap()
            ]
        );
    }

    #[test]
    fn global_phase_wins() {
        let p = RuleCodegen::program_for(&desc(&[
            (FilterKind::Exposure, AspectJudgment::Increase(R(10, 20))),
            (FilterKind::Saturation, AspectJudgment::Increase(R(20, 40))),
        ]));
        assert_eq!(p.steps, vec![RetouchStep::new(FilterKind::Exposure, 0.15).unwrap()]);
    }

    #[test]
    fn small_global_residue_yields_to_color() {
        let p = RuleCodegen::program_for(&desc(&[
            (FilterKind::Exposure, AspectJudgment::Increase(R(0, 5))),
            (FilterKind::Temperature, AspectJudgment::Increase(R(40, 60))),
        ]));
        assert_eq!(p.steps, vec![RetouchStep::new(FilterKind::Temperature, 0.5).unwrap()]);
        let p = RuleCodegen::program_for(&desc(&[(FilterKind::Exposure, AspectJudgment::Decrease(R(0, 5)))]));
        assert_eq!(p.steps, vec![RetouchStep::new(FilterKind::Exposure, -0.025).unwrap()]);
    }

    #[test]
    fn stop_is_rejected() {
        assert!(RuleCodegen.generate(&DifferenceDescription::stop(""), "adj").is_err());
    }

    #[test]
    fn instruction_mode_is_unsupported() {
        let img = ImageBuffer::uniform(2, 2, [0.5; 3]).unwrap();
        let req = CriticRequest {
            source: &img,
            refs: &[],
            source_stats: compute_stats(&img),
            ref_stats_mean: None,
            score_summary: None,
            instruction: Some("warmer".into()),
            history: vec![],
            n_candidates: 3,
        };
        assert!(matches!(RuleCritic.describe(&req), Err(AgentError::InvalidRequest(_))));
    }

    fn arb_image() -> impl Strategy<Value = ImageBuffer> {
        (2usize..6, 2usize..6).prop_flat_map(|(w, h)| {
            prop::collection::vec(0.0f32..=1.0, w * h * 3).prop_map(move |d| ImageBuffer::from_vec(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn critic_is_deterministic_and_codegen_respects_na(a in arb_image(), b in arb_image(), n in 1usize..5) {
            let (sa, sb) = (compute_stats(&a), compute_stats(&b));
            let first = RuleCritic::describe_stats(&sa, &sb, n);
            prop_assert_eq!(&first, &RuleCritic::describe_stats(&sa, &sb, n));
            prop_assert_eq!(first.len(), n);
            for d in first.iter().filter(|d| !d.is_stop()) {
                for step in RuleCodegen::program_for(d).steps {
                    prop_assert!(!d.judgment(step.filter).is_na());
                }
            }
        }
    }
}
