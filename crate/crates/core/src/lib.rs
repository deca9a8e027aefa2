//! Reference-guided photo retouching.
//!
//! A session repeatedly asks a critic to describe how the current image
//! differs from a set of reference photos, turns that description into a
//! short program of global filters, and keeps whichever candidate scores
//! closest to the references.
//!
//! ```
//! use retouch_core::{apply_filter, FilterKind, ImageBuffer, RetouchStep};
//!
//! let img = ImageBuffer::uniform(4, 4, [0.25; 3]).unwrap();
//! let brighter = apply_filter(&img, RetouchStep::new(FilterKind::Exposure, 1.0).unwrap()).unwrap();
//! assert_eq!(brighter.pixel(0, 0), [0.5; 3]);
//! ```

pub mod agents;
pub mod evaluation;
pub mod filters;
pub mod orchestrator;
pub mod program;
pub mod raster;
pub mod scoring;

pub use agents::{AgentError, CodeGenerator, VisualCritic};
pub use evaluation::{delta_e, psnr, ssim, MetricReport};
pub use filters::{apply_filter, execute_program, FilterError, FilterKind, RetouchStep};
pub use orchestrator::{
    run_session, AgentKind, Agents, IterationRecord, Mode, ScoreKind, Session, SessionConfig, SessionError,
    SessionStatus,
};
pub use program::{parse_description, parse_program, DifferenceDescription, ParseError, RetouchProgram};
pub use raster::{ImageBuffer, ImageError, ImageStats};
pub use scoring::{DistributionProvider, PromptDistribution, Scorer, ScoringError, StatsProvider};
