//! End-to-end release: charge, pre-process, partition, project, release.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::accountant::{BudgetLedger, Charge, Guarantee};
use crate::domain::{Dataset, DomainPoint, Histogram};
use crate::error::Result;
use crate::exec::Execution;
use crate::noise::{NoiseMode, NoiseSource, PrivacyBudget};
use crate::pipeline::marginal::{
    partition, prepare, project_marginal, MarginalSpec, PartitionKey, QuarantineCounts, MARGINALS,
};
use crate::pipeline::plan::ReleasePlan;
use crate::pipeline::trip::{strip_identifiers, PostcodeTable, TripRecord};
use crate::sbh::{canonicalize_with, HistogramMechanism, StabilityHistogram};

pub const REPORT_FORMAT: &str = "tripdp-release-report/1";

/// One released marginal of one partition.
#[derive(Debug, Clone)]
pub struct MarginalRelease {
    pub key: PartitionKey,
    pub marginal: MarginalSpec,
    pub budget: PrivacyBudget,
    pub histogram: Histogram,
    pub input_rows: u64,
    pub input_distinct_points: u64,
}

impl MarginalRelease {
    /// `mode=<m>/date=<d>/marginal=<j>.csv`
    pub fn file_name(&self) -> String {
        format!("{}/marginal={}.csv", self.key.label(), self.marginal.id())
    }

    pub fn scope(&self) -> String {
        scope_key(&self.key, &self.marginal)
    }
}

pub fn scope_key(key: &PartitionKey, marginal: &MarginalSpec) -> String {
    format!("{}/marginal={}", key.label(), marginal.id())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputStats {
    pub file: String,
    pub partition: String,
    pub marginal: u8,
    pub columns: Vec<&'static str>,
    pub input_rows: u64,
    pub input_distinct_points: u64,
    pub released_points: u64,
    pub released_rows: u64,
    pub suppressed_points: u64,
}

/// How far a released two-way marginal's support, projected onto one of its
/// columns, differs from the separately released one-way support. Noise is
/// independent across marginals, so some divergence is expected; it is
/// reported, never repaired.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportDivergence {
    pub partition: String,
    pub two_way: u8,
    pub one_way: u8,
    pub only_in_two_way: u64,
    pub only_in_one_way: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReleaseReport {
    pub format: &'static str,
    pub noise: &'static str,
    pub input_records: u64,
    pub quarantine: QuarantineCounts,
    pub retained_rows: u64,
    pub per_partition_budget: Guarantee,
    pub guarantee: Guarantee,
    pub outputs: Vec<OutputStats>,
    pub support_divergence: Vec<SupportDivergence>,
}

impl ReleaseReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct ReleaseOutput {
    pub releases: Vec<MarginalRelease>,
    pub charges: Vec<Charge>,
    pub report: ReleaseReport,
}

/// One charge per `(partition, marginal)` pair in the plan.
pub fn planned_charges(plan: &ReleasePlan) -> Vec<Charge> {
    plan.partition_keys()
        .iter()
        .flat_map(|key| {
            MARGINALS
                .iter()
                .zip(&plan.marginal_budgets)
                .map(move |(m, b)| Charge {
                    scope: scope_key(key, m),
                    partition: key.label(),
                    budget: *b,
                })
        })
        .collect()
}

fn release_partition(
    key: PartitionKey,
    data: &Dataset,
    plan: &ReleasePlan,
    rng: &NoiseSource,
) -> Result<Vec<MarginalRelease>> {
    MARGINALS
        .iter()
        .zip(&plan.marginal_budgets)
        .map(|(spec, &budget)| {
            let projected = canonicalize_with(project_marginal(data, spec), Execution::Sequential);
            let input_distinct_points = crate::sbh::exact_histogram(&projected).len() as u64;
            let mut stream = rng.substream(&scope_key(&key, spec));
            let histogram = StabilityHistogram::new(budget)?.release(&projected, &mut stream)?;
            Ok(MarginalRelease {
                key,
                marginal: *spec,
                budget,
                histogram,
                input_rows: projected.len() as u64,
                input_distinct_points,
            })
        })
        .collect()
}

fn divergence(partition: &[MarginalRelease]) -> Vec<SupportDivergence> {
    let find = |id: u8| partition.iter().find(|r| r.marginal.id() == id);
    let mut out = Vec::new();
    for (two, one) in [(5u8, 1u8), (5, 2), (6, 3), (6, 4)] {
        let (Some(t), Some(o)) = (find(two), find(one)) else {
            continue;
        };
        let idx = o
            .marginal
            .indices_within(&t.marginal)
            .expect("one-way column belongs to its two-way marginal");
        let projected: BTreeSet<DomainPoint> =
            t.histogram.points().map(|p| p.project(&idx)).collect();
        let direct: BTreeSet<DomainPoint> = o.histogram.points().cloned().collect();
        out.push(SupportDivergence {
            partition: t.key.label(),
            two_way: two,
            one_way: one,
            only_in_two_way: projected.difference(&direct).count() as u64,
            only_in_one_way: direct.difference(&projected).count() as u64,
        });
    }
    out
}

/// Run a full release.
///
/// Every planned `(partition, marginal)` charge is made against `ledger`
/// before any data is touched; if any is refused, the ledger is left as it
/// was and nothing is released. Each marginal draws noise from its own
/// substream of `rng`, keyed by its scope, so output is independent of
/// `exec`.
pub fn run_release(
    records: Vec<TripRecord>,
    plan: &ReleasePlan,
    lookup: &PostcodeTable,
    ledger: &mut BudgetLedger,
    rng: &NoiseSource,
    exec: Execution,
) -> Result<ReleaseOutput> {
    plan.validate()?;
    let charges = planned_charges(plan);
    ledger.charge_all(&charges)?;

    let input_records = records.len() as u64;
    let mut quarantine = QuarantineCounts::default();
    let trips = strip_identifiers(records);
    let prepared = prepare(trips, plan.time_bin_minutes, plan, lookup, &mut quarantine)?;
    let keys = plan.partition_keys();
    let parts: Vec<(PartitionKey, Dataset)> =
        partition(prepared, &keys, &mut quarantine.outside_plan)
            .into_iter()
            .collect();
    let retained_rows = parts.iter().map(|(_, d)| d.len() as u64).sum();

    let per_partition = exec.try_map(&parts, |(key, data)| {
        release_partition(*key, data, plan, rng)
    })?;

    let support_divergence = per_partition.iter().flat_map(|p| divergence(p)).collect();
    let releases: Vec<MarginalRelease> = per_partition.into_iter().flatten().collect();
    let outputs = releases
        .iter()
        .map(|r| OutputStats {
            file: r.file_name(),
            partition: r.key.label(),
            marginal: r.marginal.id(),
            columns: r.marginal.columns().iter().map(|c| c.name()).collect(),
            input_rows: r.input_rows,
            input_distinct_points: r.input_distinct_points,
            released_points: r.histogram.len() as u64,
            released_rows: r.histogram.total(),
            suppressed_points: r.input_distinct_points - r.histogram.len() as u64,
        })
        .collect();

    let report = ReleaseReport {
        format: REPORT_FORMAT,
        noise: match rng.mode() {
            NoiseMode::SeededTest => "seeded-test",
            NoiseMode::SecureRelease => "secure-release",
        },
        input_records,
        quarantine,
        retained_rows,
        per_partition_budget: Guarantee {
            epsilon: plan.total_budget.epsilon(),
            delta: plan.total_budget.delta(),
        },
        guarantee: ledger.global_guarantee(),
        outputs,
        support_divergence,
    };
    Ok(ReleaseOutput {
        releases,
        charges,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synthetic::{SyntheticTrips, TripGenerator};
    use crate::pipeline::trip::Mode;
    use chrono::NaiveDate;

    fn dates(n: u32) -> Vec<NaiveDate> {
        (0..n)
            .map(|i| NaiveDate::from_ymd_opt(2016, 7, 25 + i).unwrap())
            .collect()
    }

    #[test]
    fn default_plan_guarantee() {
        let plan = ReleasePlan::with_default_budgets(dates(2), Mode::ALL.to_vec());
        let mut ledger = BudgetLedger::new(plan.total_budget);
        let out = run_release(
            Vec::new(),
            &plan,
            &PostcodeTable::default(),
            &mut ledger,
            &NoiseSource::seeded(1),
            Execution::default(),
        )
        .unwrap();
        assert_eq!(out.releases.len(), 2 * 4 * 6);
        assert!(out.releases.iter().all(|r| r.histogram.is_empty()));
        assert_eq!(out.report.guarantee.epsilon, 8.0);
        assert!((out.report.guarantee.delta - 7.5e-7).abs() < 1e-18);
        for p in ledger.partitions() {
            assert_eq!(ledger.partition_spent(p).epsilon, 8.0);
        }
    }

    #[test]
    fn refusal_leaves_ledger_unchanged() {
        let plan = ReleasePlan::with_default_budgets(dates(1), vec![Mode::Train]);
        let mut ledger = BudgetLedger::new(plan.total_budget);
        ledger
            .charge(
                "earlier",
                "mode=train/date=2016-07-25",
                PrivacyBudget::new(0.5, 1e-9).unwrap(),
            )
            .unwrap();
        let before = ledger.charges().len();
        let r = run_release(
            Vec::new(),
            &plan,
            &PostcodeTable::default(),
            &mut ledger,
            &NoiseSource::seeded(1),
            Execution::Sequential,
        );
        assert!(matches!(r, Err(crate::Error::BudgetExceeded { .. })));
        assert_eq!(ledger.charges().len(), before);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let gen = TripGenerator::new(dates(3), Mode::ALL.to_vec(), 300);
        let SyntheticTrips { records, lookup } = gen.generate(11);
        let plan = ReleasePlan::with_default_budgets(dates(3), Mode::ALL.to_vec());
        let run = |exec| {
            let mut ledger = BudgetLedger::new(plan.total_budget);
            run_release(
                records.clone(),
                &plan,
                &lookup,
                &mut ledger,
                &NoiseSource::seeded(7),
                exec,
            )
            .unwrap()
        };
        let a = run(Execution::Sequential);
        let b = run(Execution::Parallel);
        assert_eq!(a.report, b.report);
        for (x, y) in a.releases.iter().zip(&b.releases) {
            assert_eq!(x.histogram, y.histogram);
        }
    }

    #[test]
    fn dense_fixture_keeps_one_way_support() {
        let gen = TripGenerator::new(dates(2), Mode::ALL.to_vec(), 2_400).dense();
        let SyntheticTrips { records, lookup } = gen.generate(3);
        let plan = ReleasePlan::with_default_budgets(dates(2), Mode::ALL.to_vec());
        let mut ledger = BudgetLedger::new(plan.total_budget);
        let out = run_release(
            records,
            &plan,
            &lookup,
            &mut ledger,
            &NoiseSource::seeded(5),
            Execution::default(),
        )
        .unwrap();
        for s in &out.report.outputs {
            assert!(s.input_rows > 0);
            if s.marginal <= 4 {
                let kept = s.released_points as f64 / s.input_distinct_points as f64;
                assert!(kept >= 0.95, "{}: kept {kept}", s.file);
            }
        }
        assert_eq!(out.report.quarantine.total(), 0);
    }
}
