//! Toolkit for measuring and repairing cognition/perception conflicts in
//! document-understanding MLLMs.
//!
//! The pipeline runs in four stages:
//!
//! * [`corpus`] normalizes dataset annotations into canonical page records.
//! * [`pairgen`] turns extractive QA into paired VQA / red-box OCR queries.
//! * [`harness`] asks a chat-with-image endpoint both queries and [`report`]
//!   scores the answers with [`metrics`].
//! * [`ftgen`] writes link-token and connector training records.

pub mod corpus;
pub mod endpoint;
pub mod error;
pub mod ftgen;
pub mod harness;
pub mod jsonl;
pub mod metrics;
pub mod pairgen;
pub mod report;
pub mod scalar;

pub use error::{EndpointError, Error, Result};
pub use scalar::{Exact, Scalar};

/// Default scalar for reported figures.
pub type Real = f64;
