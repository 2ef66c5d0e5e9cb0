//! Host-side companion to `saba-core`: model backends, the on-disk response
//! cache, dataset loading, the trace store, report formatting and the
//! command-line front end.

pub mod backend;
pub mod cache;
pub mod cli;
pub mod dataset;
pub mod report;
pub mod runner;
pub mod trace_store;

pub use saba_core as core;
