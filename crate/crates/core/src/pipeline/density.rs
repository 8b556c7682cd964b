//! Pre-release density diagnostics per partition and marginal.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::Result;
use crate::exec::Execution;
use crate::pipeline::marginal::{
    partition, prepare, project_marginal, QuarantineCounts, MARGINALS,
};
use crate::pipeline::plan::ReleasePlan;
use crate::pipeline::trip::{strip_identifiers, PostcodeTable, TripRecord};
use crate::sbh::density_profile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRow {
    pub partition: String,
    pub marginal: u8,
    pub rows: u64,
    pub k: u64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityReport {
    pub quarantine: QuarantineCounts,
    pub rows: Vec<DensityRow>,
}

/// A plan covering exactly the `(mode, date)` pairs present in `records`,
/// with identity location rules. Used when no release config is given.
pub fn plan_from_records(records: &[TripRecord], bin_width: u32) -> ReleasePlan {
    let dates: BTreeSet<_> = records.iter().map(|r| r.date).collect();
    let modes: BTreeSet<_> = records.iter().map(|r| r.mode).collect();
    let mut plan =
        ReleasePlan::with_default_budgets(dates.into_iter().collect(), modes.into_iter().collect());
    plan.time_bin_minutes = bin_width;
    plan.location_generalization.clear();
    plan
}

/// `(k, γ)` for every partition/marginal the plan would release.
pub fn density_by_marginal(
    records: Vec<TripRecord>,
    plan: &ReleasePlan,
    lookup: &PostcodeTable,
    k: u64,
    exec: Execution,
) -> Result<DensityReport> {
    let mut quarantine = QuarantineCounts::default();
    let prepared = prepare(
        strip_identifiers(records),
        plan.time_bin_minutes,
        plan,
        lookup,
        &mut quarantine,
    )?;
    let parts: Vec<_> = partition(
        prepared,
        &plan.partition_keys(),
        &mut quarantine.outside_plan,
    )
    .into_iter()
    .collect();
    let per_part = exec.try_map(&parts, |(key, data)| {
        MARGINALS
            .iter()
            .map(|spec| {
                let projected = project_marginal(data, spec);
                let profile = density_profile(&projected, k)?;
                Ok(DensityRow {
                    partition: key.label(),
                    marginal: spec.id(),
                    rows: projected.len() as u64,
                    k,
                    gamma: profile.gamma,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(DensityReport {
        quarantine,
        rows: per_part.into_iter().flatten().collect(),
    })
}
