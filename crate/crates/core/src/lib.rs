//! Projection of span annotations (named entities, opinion targets, argument
//! components) from a labeled source corpus onto its parallel translation.
//!
//! The main method works in two steps:
//!
//! 1. **Candidate generation.** A text-to-text model receives the target
//!    sentence followed by one `<Category>None</Category>` block per source
//!    span and fills each block through beam search
//!    ([`prompting`], [`generation`]). Candidates that are not token runs of
//!    the target are dropped. Every target n-gram can be used instead.
//! 2. **Candidate selection.** Each source span is compared with the
//!    candidates of its category by a symmetrized, self-normalized translation
//!    probability ([`scoring`]), and spans are assigned greedily left to right
//!    without reusing target tokens ([`selection`]).
//!
//! Baselines (most probable beam, span translation, word-alignment hulls) and
//! an oracle upper bound share the same [`selection::Assignment`] output and
//! are evaluated with exact-match span F1 ([`eval`]). All model inference sits
//! behind the traits in [`backend`].

pub mod alignment;
pub mod backend;
pub mod corpus;
mod error;
pub mod eval;
pub mod generation;
pub mod pipeline;
pub mod prompting;
pub mod scoring;
pub mod selection;

pub use error::{BackendError, ConfigError, Error, EvalError, FormatError, Result, ScoreError};

pub use corpus::{CategoryMap, LabeledSentence, ParallelPair, Span, TokenRange};
pub use pipeline::{Method, PipelineConfig, Projector};
