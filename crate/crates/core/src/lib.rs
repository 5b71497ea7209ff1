//! Core library for hybrid retrieval-augmented text completion.
//!
//! A lightweight client model produces suggestions conditioned on a small
//! memory of takeaway bullets. A cloud side retrieves passages, condenses them
//! with a larger model, and ships the bullets back. The [`coordinator`] decides
//! when the client asks for a refresh; [`harness`] provides a virtual-clock
//! simulator, utility metrics and dataset tooling.

pub mod backend;
pub mod coordinator;
pub mod engine;
pub mod error;
pub mod harness;
pub mod memgen;
pub mod protocol;
pub mod retriever;
pub mod text;
pub mod types;

pub use error::{Error, Result};
