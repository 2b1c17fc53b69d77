//! Offline network traffic classification toolkit.
//!
//! Packet captures are metered into bidirectional flow records
//! ([`meter`]), labelled ([`labeling`]), cleaned and enriched ([`prep`]),
//! partitioned without leakage ([`split`]), transformed with train-only
//! fitted parameters ([`transforms`]), and used to fit and evaluate
//! from-scratch tree and neighbour models ([`models`], [`eval`],
//! [`explain`]). [`pipeline`] chains the stages with hashed manifests.

pub mod dataset;
pub mod digest;
pub mod error;
pub mod eval;
pub mod explain;
pub mod ingest;
pub mod labeling;
pub mod meter;
pub mod models;
pub mod net;
pub mod pipeline;
pub mod prep;
pub mod split;
pub mod synth;
pub mod transforms;

pub use error::{Error, Result};
