//! Step counting from smartphone inertial data with a two-layer LSTM.
//!
//! The pipeline parses sensor recordings and heel-strike annotations
//! ([`ingest`]), encodes strikes as a square wave ([`labeling`]), windows and
//! splits the data ([`dataset`]), trains the network ([`neural`]), turns its
//! output back into strike times ([`postprocess`]) and scores them with three
//! over/undercount metrics ([`metrics`]). [`synth`] generates labeled walks
//! for testing and [`experiment`] runs the evaluation protocols.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod ingest;
pub mod labeling;
pub mod metrics;
pub mod neural;
pub mod par;
pub mod postprocess;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
