//! Core of the SABA reasoning engine.
//!
//! The crate is `no_std` with `alloc`. It owns the domain types, the
//! information-fusion stage, the gated query-driven reasoning loop, the
//! structured model gateway (prompt rendering, schema validation, retries,
//! cache lookups) and the evaluation metrics. Everything that touches a
//! filesystem, a clock or a socket lives in the `saba` companion crate and
//! reaches this crate through the [`model::LanguageModel`],
//! [`model::ResponseCache`] and [`engine::TraceSink`] traits.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod case;
pub mod cost;
pub mod embedding;
pub mod engine;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod prompt;
pub mod state;

mod json;
#[cfg(test)]
mod testing;

pub use case::{CaseSpec, Difficulty, Gold};
pub use engine::{run, RunError, RunResult, Runtime, TerminationReason, TraceSink};
pub use state::{ReasoningState, RunConfig, Variant};
