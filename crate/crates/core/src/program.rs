//! Retouching programs and critic descriptions: parsing, validation and
//! serialization.
//!
//! Agents answer in free-form code. Nothing they write is ever executed:
//! only `filter.<name>(<number>)` calls are extracted, in textual order, and
//! interpreted by [`crate::filters::execute_program`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::{FilterKind, RetouchStep};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("no filter calls found")]
    NoFilterCalls,
    #[error("unknown filter `{0}`")]
    UnknownFilter(String),
    #[error("parameter `{arg}` of {filter} is not a decimal number")]
    NonNumericParam { filter: String, arg: String },
    #[error("parameter {param} of {filter} is outside [-1, 1]")]
    ParamOutOfRange { filter: FilterKind, param: f64 },
    #[error("placeholder `...` in generated code")]
    Placeholder,
    #[error("invalid program document: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no aspect line could be parsed from the description")]
pub struct DescriptionParseError;

/// An ordered list of filter applications.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetouchProgram {
    pub steps: Vec<RetouchStep>,
    /// Free-text note on where the program came from.
    #[serde(default)]
    pub provenance: String,
}

impl RetouchProgram {
    pub fn new(steps: Vec<RetouchStep>) -> Self {
        RetouchProgram { steps, provenance: String::new() }
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Appends another program's steps (used to compose iterations).
    pub fn extend(&mut self, other: &RetouchProgram) {
        self.steps.extend_from_slice(&other.steps);
    }

    /// Canonical JSON document (`.retouch.json`).
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("program serialization cannot fail")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serialization cannot fail")
    }

    /// Reads a program document, rejecting out-of-range parameters.
    pub fn from_json(text: &str) -> Result<Self, ParseError> {
        let program: RetouchProgram = serde_json::from_str(text).map_err(|e| ParseError::Json(e.to_string()))?;
        for step in &program.steps {
            step.validate().map_err(|_| ParseError::ParamOutOfRange { filter: step.filter, param: step.param })?;
        }
        Ok(program)
    }

    /// Renders the program as filter-call lines that [`parse_program`] reads back.
    pub fn to_calls(&self, var: &str) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&format!("{var} = filter.{}({})\n", step.filter, step.param));
        }
        out
    }
}

impl fmt::Display for RetouchProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.steps.iter().map(ToString::to_string).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

fn call_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bfilter\s*\.\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(([^()]*)\)").unwrap())
}

fn decimal_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)$").unwrap())
}

fn keyword_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*\s*=\s*(.*)$").unwrap())
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Extracts the filter-call subset of agent-written code.
pub fn parse_program(text: &str) -> Result<RetouchProgram, ParseError> {
    if text.contains("...") {
        return Err(ParseError::Placeholder);
    }
    let mut steps = Vec::new();
    for line in text.lines() {
        let code = strip_comment(line);
        for cap in call_regex().captures_iter(code) {
            let name = &cap[1];
            let filter: FilterKind = name.parse().map_err(|_| ParseError::UnknownFilter(name.to_string()))?;
            let raw = cap[2].trim();
            // `filter.exposure(f_exp=0.3)` is accepted as well as the positional form.
            let arg = keyword_regex().captures(raw).map_or(raw, |c| c.get(1).unwrap().as_str()).trim();
            if !decimal_regex().is_match(arg) {
                return Err(ParseError::NonNumericParam { filter: name.to_string(), arg: arg.to_string() });
            }
            let param: f64 = arg
                .parse()
                .map_err(|_| ParseError::NonNumericParam { filter: name.to_string(), arg: arg.to_string() })?;
            let step = RetouchStep::new(filter, param).map_err(|_| ParseError::ParamOutOfRange { filter, param })?;
            steps.push(step);
        }
    }
    if steps.is_empty() {
        return Err(ParseError::NoFilterCalls);
    }
    Ok(RetouchProgram::new(steps))
}

/// Reads either a JSON program document or filter-call code.
pub fn parse_program_any(text: &str) -> Result<RetouchProgram, ParseError> {
    if text.trim_start().starts_with('{') {
        RetouchProgram::from_json(text)
    } else {
        parse_program(text)
    }
}

/// A percent interval a critic may use to quantify a difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PercentRange {
    pub lo: u8,
    pub hi: u8,
}

impl PercentRange {
    pub fn midpoint(self) -> f64 {
        (self.lo as f64 + self.hi as f64) / 2.0
    }
}

impl fmt::Display for PercentRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}%", self.lo, self.hi)
    }
}

const ALLOWED_RANGES: [PercentRange; 6] = [
    PercentRange { lo: 0, hi: 5 },
    PercentRange { lo: 5, hi: 10 },
    PercentRange { lo: 10, hi: 20 },
    PercentRange { lo: 20, hi: 40 },
    PercentRange { lo: 40, hi: 60 },
    PercentRange { lo: 60, hi: 100 },
];

/// The six discrete difference intervals, ascending.
pub fn allowed_ranges() -> &'static [PercentRange; 6] {
    &ALLOWED_RANGES
}

pub fn is_allowed_range(lo: u8, hi: u8) -> bool {
    ALLOWED_RANGES.iter().any(|r| r.lo == lo && r.hi == hi)
}

/// Index of the allowed range containing `percent` (values ≥ 100 map to the last).
pub fn range_index_for(percent: f64) -> usize {
    ALLOWED_RANGES
        .iter()
        .position(|r| percent < r.hi as f64)
        .unwrap_or(ALLOWED_RANGES.len() - 1)
}

/// `[(0,5), (5,10), ...]`, as substituted into the critic prompt.
pub fn range_list_text() -> String {
    let parts: Vec<String> = ALLOWED_RANGES.iter().map(|r| format!("({},{})", r.lo, r.hi)).collect();
    format!("[{}]", parts.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increase => 1.0,
            Direction::Decrease => -1.0,
        }
    }
}

/// The critic's verdict on one aspect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "direction", rename_all = "lowercase")]
pub enum AspectJudgment {
    #[serde(rename = "na")]
    NotApplicable,
    Increase(PercentRange),
    Decrease(PercentRange),
}

impl AspectJudgment {
    pub fn adjust(direction: Direction, range: PercentRange) -> Self {
        match direction {
            Direction::Increase => AspectJudgment::Increase(range),
            Direction::Decrease => AspectJudgment::Decrease(range),
        }
    }

    pub fn is_na(&self) -> bool {
        matches!(self, AspectJudgment::NotApplicable)
    }

    pub fn direction(&self) -> Option<Direction> {
        match self {
            AspectJudgment::NotApplicable => None,
            AspectJudgment::Increase(_) => Some(Direction::Increase),
            AspectJudgment::Decrease(_) => Some(Direction::Decrease),
        }
    }

    pub fn range(&self) -> Option<PercentRange> {
        match self {
            AspectJudgment::NotApplicable => None,
            AspectJudgment::Increase(r) | AspectJudgment::Decrease(r) => Some(*r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overall {
    Go,
    Stop,
}

/// A parsed per-aspect difference report plus the continue/stop verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceDescription {
    judgments: BTreeMap<FilterKind, AspectJudgment>,
    pub overall: Overall,
    pub raw_text: String,
}

impl DifferenceDescription {
    /// Builds a description; a `Stop` with any non-NA aspect becomes `Go`.
    pub fn new(judgments: [AspectJudgment; 7], overall: Overall, raw_text: impl Into<String>) -> Self {
        let judgments: BTreeMap<FilterKind, AspectJudgment> = FilterKind::ALL.into_iter().zip(judgments).collect();
        let overall = if overall == Overall::Stop && judgments.values().any(|j| !j.is_na()) {
            Overall::Go
        } else {
            overall
        };
        DifferenceDescription { judgments, overall, raw_text: raw_text.into() }
    }

    /// All aspects NA, overall Stop.
    pub fn stop(raw_text: impl Into<String>) -> Self {
        DifferenceDescription::new([AspectJudgment::NotApplicable; 7], Overall::Stop, raw_text)
    }

    pub fn judgment(&self, kind: FilterKind) -> AspectJudgment {
        self.judgments.get(&kind).copied().unwrap_or(AspectJudgment::NotApplicable)
    }

    pub fn judgments(&self) -> impl Iterator<Item = (FilterKind, AspectJudgment)> + '_ {
        FilterKind::ALL.into_iter().map(|k| (k, self.judgment(k)))
    }

    pub fn is_stop(&self) -> bool {
        self.overall == Overall::Stop
    }

    /// Renders in the critic's line format; [`parse_description`] inverts it.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (kind, judgment) in self.judgments() {
            let noun = if kind == FilterKind::Exposure { "brightness" } else { kind.name() };
            match judgment {
                AspectJudgment::NotApplicable => out.push_str(&format!("- {}: N/A\n", kind.label())),
                AspectJudgment::Increase(r) | AspectJudgment::Decrease(r) => {
                    let word = if judgment.direction() == Some(Direction::Increase) { "higher" } else { "lower" };
                    out.push_str(&format!(
                        "- {}: the {noun} of the target image is {r} {word} than the one of the source image.\n",
                        kind.label()
                    ));
                }
            }
        }
        let verdict = match self.overall {
            Overall::Go => "Go",
            Overall::Stop => "Stop",
        };
        out.push_str(&format!("- Overall: {verdict}\n"));
        out
    }
}

fn aspect_line_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*[-*•]\s*\**\s*(exposure|contrast|highlights?|shadows?|saturation|temperature|texture|overall)\s*\**\s*:\s*\**(.*)$",
        )
        .unwrap()
    })
}

fn percent_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d+(?:\.\d+)?)\s*%?\s*(?:-|\x{2013}|\x{2014}|to)\s*(\d+(?:\.\d+)?)\s*%").unwrap())
}

fn direction_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(higher|increase[sd]?|lower|decrease[sd]?)\b").unwrap())
}

fn parse_aspect_body(body: &str) -> Option<AspectJudgment> {
    if body.to_ascii_lowercase().contains("n/a") {
        return Some(AspectJudgment::NotApplicable);
    }
    let cap = percent_regex().captures(body)?;
    let lo: f64 = cap[1].parse().ok()?;
    let hi: f64 = cap[2].parse().ok()?;
    let direction = match direction_regex().captures(body)?[1].to_ascii_lowercase().as_str() {
        w if w.starts_with("higher") || w.starts_with("increase") => Direction::Increase,
        _ => Direction::Decrease,
    };
    let range = ALLOWED_RANGES
        .iter()
        .copied()
        .find(|r| r.lo as f64 == lo && r.hi as f64 == hi)
        .unwrap_or_else(|| ALLOWED_RANGES[range_index_for((lo + hi) / 2.0)]);
    Some(AspectJudgment::adjust(direction, range))
}

/// Parses one critic description block.
///
/// Missing aspects count as NA; a missing Overall line with at least one
/// parsed aspect means Go.
pub fn parse_description(text: &str) -> Result<DifferenceDescription, DescriptionParseError> {
    let mut judgments = [None; 7];
    let mut overall = None;
    for line in text.lines() {
        let Some(cap) = aspect_line_regex().captures(line) else { continue };
        let key = cap[1].to_ascii_lowercase();
        let body = cap[2].trim();
        if key == "overall" {
            let lower = body.to_ascii_lowercase();
            if lower.contains("stop") {
                overall = Some(Overall::Stop);
            } else if lower.contains("go") {
                overall = Some(Overall::Go);
            }
            continue;
        }
        let key = key.trim_end_matches('s');
        let kind = FilterKind::ALL.into_iter().find(|k| k.name() == key);
        let Some(kind) = kind else { continue };
        if judgments[kind.index()].is_some() {
            continue;
        }
        judgments[kind.index()] = parse_aspect_body(body);
    }
    if judgments.iter().all(Option::is_none) {
        return Err(DescriptionParseError);
    }
    let judgments = judgments.map(|j| j.unwrap_or(AspectJudgment::NotApplicable));
    Ok(DifferenceDescription::new(judgments, overall.unwrap_or(Overall::Go), text))
}
