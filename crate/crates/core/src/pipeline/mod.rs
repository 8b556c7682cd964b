//! Trip-record release pipeline: ingest, pre-process, partition by
//! `(mode, date)`, project six marginals, release each with the
//! stability-based histogram, and write the results.

pub mod counts;
pub mod density;
pub mod marginal;
pub mod output;
pub mod plan;
pub mod release;
pub mod synthetic;
pub mod trip;

pub use marginal::{
    partition, partition_schema, prepare, project_marginal, Column, MarginalSpec, PartitionKey,
    PreparedTrip, QuarantineCounts, MARGINALS,
};
pub use plan::ReleasePlan;
pub use release::{run_release, MarginalRelease, ReleaseOutput, ReleaseReport};
pub use trip::{
    bin_time, generalize_location, read_trips, strip_identifiers, CardId, Ingest, LocationRule,
    Mode, PostcodeTable, Tap, Trip, TripRecord,
};
