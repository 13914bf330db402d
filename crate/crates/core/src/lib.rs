//! Traffic pattern classification toolkit core.
//!
//! Everything in this crate is a pure transformation over in-memory data:
//! parsing sensor CSV text into labeled windows, speed transition matrices
//! over a directed road graph, a multi-layer LSTM classifier trained by
//! backpropagation through time, grid search with k-fold cross-validation,
//! classification metrics, and time-dependent routing over daily speed
//! patterns. The crate builds without `std` (an allocator is required);
//! file formats, the CLI and the network service live in the `tpc` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod ingest;
pub mod metrics;
pub mod neural;
pub mod roadnet;
pub mod routing;
pub mod synth;
pub mod time;
pub mod tuning;

pub use ingest::{ClassTaxonomy, SampleSet, TrafficSample};
pub use metrics::ConfusionMatrix;
pub use neural::{HyperParams, ModelParams};
pub use roadnet::{RoadGraph, Segment, SpeedTransitionMatrix};
pub use routing::{DailyPattern, RouteDb, RoutePlan};
pub use time::Timestamp;

/// Seconds in one day; daily patterns and time windows are periodic over it.
pub const SECONDS_PER_DAY: f64 = 86_400.0;
