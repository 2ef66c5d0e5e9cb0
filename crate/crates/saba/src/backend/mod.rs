//! Language-model and embedding providers.

pub mod http;
pub mod mock;

pub use http::{HttpConfig, HttpEmbedder, HttpModel};
pub use mock::{FixtureEntry, FixtureFile, MockModel};
