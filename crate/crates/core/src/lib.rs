//! Short-form video quality assessment with a multimodal LLM.
//!
//! The crate covers two halves of one pipeline:
//!
//! * eliciting quality ratings from an MLLM over many zero-shot trials
//!   ([`frame`] pre-processing, [`gateway`] backends and the trial driver,
//!   [`parser`] response filtering, [`aggregate`] per-video averaging and
//!   trial-count stability profiles), and
//! * blending those ratings with a conventional video quality model through
//!   a learned, content-dependent weight ([`ensemble`]), evaluated with
//!   [`metrics`] rank and linear correlation.
//!
//! [`pipeline`] wires the stages into the commands exposed by the CLI.

pub mod aggregate;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod fixture;
pub mod frame;
pub mod gateway;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod parser;
pub mod pipeline;
pub mod rng;
pub mod score;

pub use error::{Error, Result};
