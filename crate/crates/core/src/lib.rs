//! Differentially private release of tabular trip records.
//!
//! The crate is organised bottom-up:
//!
//! - [`noise`]: Laplace sampling, snapping, keyed substreams.
//! - [`domain`] and [`sbh`]: schemas, histograms, and the stability-based
//!   histogram, which adds `Lap(2/ε)` to the count of every point present in
//!   the data and suppresses anything below `2·ln(2/δ)/ε + 1`.
//! - [`accountant`]: sequential and parallel composition with an
//!   append-only release log.
//! - [`pipeline`]: the trip-record release, from CSV ingest to per-marginal
//!   output files.
//! - [`audit`]: Monte Carlo checks of the privacy and utility guarantees.
//!
//! With the default `parallel` feature, partitions and audit trials run on
//! the rayon pool. Output never depends on scheduling because every task
//! draws noise from its own labelled substream.

pub mod accountant;
pub mod audit;
pub mod domain;
mod error;
pub mod exec;
pub mod noise;
pub mod pipeline;
pub mod sbh;

pub use accountant::{BudgetLedger, Guarantee, ReleaseLog};
pub use domain::{Attribute, AttributeKind, Dataset, DomainPoint, DomainSchema, Histogram, Value};
pub use error::{Error, Result};
pub use exec::Execution;
pub use noise::{
    laplace_tail, noisy_count, sample_laplace, LaplaceScale, NoiseMode, NoiseSource, PrivacyBudget,
    Snapping,
};
pub use sbh::{
    canonicalize, density_profile, exact_histogram, point_count, sbh_release, sbh_threshold,
    HistogramMechanism, StabilityHistogram,
};
