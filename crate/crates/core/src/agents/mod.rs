//! Visual critic and code generator agents.
//!
//! Chat-backed agents speak to an external model through [`ChatBackend`].
//! Rule-based agents derive the same outputs from image statistics and make
//! the retouching loop runnable offline.

mod chat;
pub mod prompts;
mod rule;
mod stochastic;

pub use chat::{
    AgentBackendConfig, ChatBackend, ChatCodegen, ChatCritic, ChatRequest, HttpChatBackend, RecordedCall,
    ScriptedChat,
};
pub use rule::{RuleCodegen, RuleCritic};
pub use stochastic::{at_least_one_useful_rate, StochasticCritic};

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::MetricReport;
use crate::program::{parse_description, DifferenceDescription, RetouchProgram};
use crate::raster::{ImageBuffer, ImageStats};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    /// Every attempt produced unusable output.
    #[error("agent failed after {attempts} attempts: {last_error}")]
    Failure { attempts: usize, last_error: String },
    /// Transport or protocol failure talking to the backend.
    #[error("backend error: {0}")]
    Backend(String),
    #[error("invalid agent request: {0}")]
    InvalidRequest(String),
}

impl AgentError {
    pub fn is_backend(&self) -> bool {
        matches!(self, AgentError::Backend(_))
    }
}

/// Everything the critic sees in one iteration.
#[derive(Debug, Clone)]
pub struct CriticRequest<'a> {
    pub source: &'a ImageBuffer,
    /// Empty in instruction mode.
    pub refs: &'a [ImageBuffer],
    pub source_stats: ImageStats,
    pub ref_stats_mean: Option<ImageStats>,
    pub score_summary: Option<MetricReport>,
    pub instruction: Option<String>,
    /// Statistics of earlier sources, oldest first.
    pub history: Vec<ImageStats>,
    pub n_candidates: usize,
}

impl CriticRequest<'_> {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.n_candidates == 0 {
            return Err(AgentError::InvalidRequest("n_candidates must be at least 1".into()));
        }
        match (self.refs.is_empty(), self.instruction.is_some()) {
            (false, false) | (true, true) => Ok(()),
            (false, true) => Err(AgentError::InvalidRequest("both references and an instruction given".into())),
            (true, false) => Err(AgentError::InvalidRequest("neither references nor an instruction given".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticOutput {
    pub descriptions: Vec<DifferenceDescription>,
    pub attempts: usize,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodegenOutput {
    pub program: RetouchProgram,
    pub attempts: usize,
    pub raw: String,
}

pub trait VisualCritic: Send + Sync {
    fn describe(&self, req: &CriticRequest<'_>) -> Result<CriticOutput, AgentError>;

    /// Whether the request should carry PSNR/SSIM/ΔE against the references.
    fn wants_score_summary(&self) -> bool {
        true
    }
}

pub trait CodeGenerator: Send + Sync {
    fn generate(&self, desc: &DifferenceDescription, save_name: &str) -> Result<CodegenOutput, AgentError>;
}

pub(crate) fn require_go(desc: &DifferenceDescription) -> Result<(), AgentError> {
    if desc.is_stop() {
        Err(AgentError::InvalidRequest("code generation requested for a Stop description".into()))
    } else {
        Ok(())
    }
}

/// Runs `attempt` once per temperature until it yields a value.
///
/// The inner `Err` marks unusable output and moves on to the next
/// temperature; the outer `Err` aborts immediately.
pub(crate) fn with_retries<T>(
    temperatures: &[f64],
    mut attempt: impl FnMut(f64) -> Result<Result<T, String>, AgentError>,
) -> Result<(T, usize), AgentError> {
    let mut last_error = String::from("no attempts made");
    for (i, &t) in temperatures.iter().enumerate() {
        match attempt(t)? {
            Ok(v) => return Ok((v, i + 1)),
            Err(e) => {
                log::warn!("agent attempt {} at temperature {t} unusable: {e}", i + 1);
                last_error = e;
            }
        }
    }
    Err(AgentError::Failure { attempts: temperatures.len(), last_error })
}

fn candidate_heading_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[\s#*_]*candidate\s*(\d+)\b.*$").unwrap())
}

/// Splits a critic reply into `n` parsed descriptions.
///
/// A reply without candidate headings is accepted only when it is a single
/// Stop verdict. Fewer than `n` usable blocks is an error; extra blocks are
/// ignored.
pub fn split_candidates(reply: &str, n: usize) -> Result<Vec<DifferenceDescription>, String> {
    let headings: Vec<(usize, usize)> = candidate_heading_regex()
        .find_iter(reply)
        .map(|m| (m.start(), m.end()))
        .collect();
    if headings.is_empty() {
        let desc = parse_description(reply).map_err(|e| e.to_string())?;
        return if desc.is_stop() {
            Ok(vec![desc])
        } else {
            Err(format!("reply has no candidate blocks, expected {n}"))
        };
    }
    let mut out = Vec::with_capacity(n);
    for (k, &(_, body_start)) in headings.iter().enumerate() {
        let end = headings.get(k + 1).map_or(reply.len(), |h| h.0);
        let block = reply[body_start..end].trim();
        let desc = parse_description(block).map_err(|e| format!("candidate {}: {e}", k + 1))?;
        out.push(desc);
        if out.len() == n {
            return Ok(out);
        }
    }
    Err(format!("reply has {} candidate blocks, expected {n}", out.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterKind;
    use crate::program::Overall;

    pub(crate) const THREE_CANDIDATES: &str = "Similar parts
Both images show a landscape.

Candidate 1
- Exposure: the brightness of the target image is 10-20% higher than the one of the source image.
- Contrast: N/A
- Highlight: N/A
- Shadow: N/A
- Saturation: N/A
- Temperature: N/A
- Texture: N/A
- Overall: Go

**Candidate 2**
- Exposure: the brightness of the target image is 20-40% higher than the one of the source image.
- Saturation: the saturation of the target image is 5-10% lower than the one of the source image.
- Overall: Go

Candidate 3:
- Exposure: N/A
- Shadow: the shadow of the target image is 5-10% higher than the one of the source image.
";

    #[test]
    fn three_blocks_in_order() {
        let descs = split_candidates(THREE_CANDIDATES, 3).unwrap();
        assert_eq!(descs.len(), 3);
        assert_eq!(descs[0].judgment(FilterKind::Exposure).range().unwrap().lo, 10);
        assert_eq!(descs[1].judgment(FilterKind::Exposure).range().unwrap().lo, 20);
        assert!(descs[1].judgment(FilterKind::Saturation).direction().is_some());
        // Missing Overall line with a parsed aspect means Go.
        assert_eq!(descs[2].overall, Overall::Go);
        assert!(split_candidates(THREE_CANDIDATES, 4).is_err());
        assert_eq!(split_candidates(THREE_CANDIDATES, 2).unwrap().len(), 2);
    }

    #[test]
    fn bare_stop_is_one_description() {
        let reply = "- Exposure: N/A\n- Contrast: N/A\n- Highlight: N/A\n- Shadow: N/A\n- Saturation: N/A\n- Temperature: N/A\n- Texture: N/A\n- Overall: Stop\n";
        let descs = split_candidates(reply, 3).unwrap();
        assert_eq!(descs.len(), 1);
        assert!(descs[0].is_stop());
        assert!(split_candidates("- Exposure: the brightness is 5-10% higher\n", 3).is_err());
        assert!(split_candidates("I cannot help with that.", 3).is_err());
    }

    #[test]
    fn retries_follow_temperature_order() {
        let mut seen = Vec::new();
        let (v, attempts) = with_retries(&[0.2, 0.7, 1.0], |t| {
            seen.push(t);
            Ok(if t < 0.5 { Err("bad".to_string()) } else { Ok(t) })
        })
        .unwrap();
        assert_eq!((v, attempts), (0.7, 2));
        assert_eq!(seen, vec![0.2, 0.7]);
        let err = with_retries::<()>(&[0.2, 0.7, 1.0], |_| Ok(Err("bad".into()))).unwrap_err();
        assert_eq!(err, AgentError::Failure { attempts: 3, last_error: "bad".into() });
        let err = with_retries::<()>(&[0.2, 0.7, 1.0], |_| Err(AgentError::Backend("down".into()))).unwrap_err();
        assert!(err.is_backend());
    }
}
