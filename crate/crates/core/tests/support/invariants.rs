//! Structural invariants run as randomized property checks. Shared by the
//! crate's property tests and the workspace acceptance gate.

#![allow(dead_code)]
use std::collections::BTreeMap;

use chrono::NaiveDate;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use tripdp_core::domain::TimeWindow;
use tripdp_core::pipeline::counts::{aggregate_rows, expand_counts, write_counts, CountsTable};
use tripdp_core::pipeline::{
    partition, partition_schema, project_marginal, Mode, PartitionKey, PreparedTrip, MARGINALS,
};
use tripdp_core::{
    canonicalize, exact_histogram, sbh_release, sbh_threshold, Attribute, AttributeKind, Dataset,
    DomainPoint, DomainSchema, NoiseSource, PrivacyBudget, Value,
};

pub type Check = fn(u32) -> Result<(), String>;

/// Every invariant with its name.
pub const ALL: [(&str, Check); 6] = [
    ("no new points", no_new_points),
    ("threshold floor", threshold_floor),
    ("order invariance", order_invariance),
    (
        "partition disjointness and size conservation",
        partitions_disjoint_and_complete,
    ),
    (
        "projection matches brute force",
        projection_matches_brute_force,
    ),
    ("expand/aggregate round trip", expand_aggregate_round_trip),
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

pub fn unary(labels: &[String]) -> Dataset {
    let schema = DomainSchema::new(vec![Attribute::new("x", AttributeKind::Categorical)]).unwrap();
    let rows = labels
        .iter()
        .map(|l| DomainPoint::new(vec![Value::code(l)]))
        .collect();
    Dataset::new(schema, rows).unwrap()
}

/// Rows over at most six labels, with multiplicities up to 60 so that some
/// points clear the threshold.
pub fn rows() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0u8..6, 1usize..60), 0..8).prop_map(|groups| {
        groups
            .into_iter()
            .flat_map(|(p, m)| std::iter::repeat_n(format!("p{p}"), m))
            .collect()
    })
}

pub fn budget() -> impl Strategy<Value = PrivacyBudget> {
    (0.2f64..3.0, 1e-6f64..0.5).prop_map(|(e, d)| PrivacyBudget::new(e, d).unwrap())
}

fn trip_row() -> impl Strategy<Value = DomainPoint> {
    let w = (0u32..96).prop_map(|i| Value::Window(TimeWindow::from_start(i * 15).unwrap()));
    let loc = (0u8..5).prop_map(|i| Value::code(&format!("L{i}")));
    (w.clone(), loc.clone(), w, loc).prop_map(|(a, b, c, d)| DomainPoint::new(vec![a, b, c, d]))
}

fn key() -> impl Strategy<Value = PartitionKey> {
    (0usize..4, 0u32..3).prop_map(|(m, d)| PartitionKey {
        mode: Mode::ALL[m],
        date: NaiveDate::from_ymd_opt(2016, 7, 25 + d).unwrap(),
    })
}

pub fn no_new_points(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(rows(), budget(), any::<u64>()), |(labels, b, seed)| {
            let d = canonicalize(unary(&labels));
            let input = exact_histogram(&d);
            let out = sbh_release(&d, b, &mut NoiseSource::seeded(seed)).unwrap();
            for p in out.points() {
                prop_assert!(input.get(p) > 0, "{p} was not in the input");
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn threshold_floor(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(rows(), budget(), any::<u64>()), |(labels, b, seed)| {
            let d = canonicalize(unary(&labels));
            let floor = sbh_threshold(b).unwrap().round() - 1.0;
            let out = sbh_release(&d, b, &mut NoiseSource::seeded(seed)).unwrap();
            for (_, c) in out.iter() {
                prop_assert!(c >= 1);
                prop_assert!(c as f64 >= floor, "count {c} below floor {floor}");
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn order_invariance(cases: u32) -> Result<(), String> {
    let shuffled = rows().prop_flat_map(|r| (Just(r.clone()), Just(r).prop_shuffle()));
    runner(cases)
        .run(
            &(shuffled, budget(), any::<u64>()),
            |((labels, perm), b, seed)| {
                let a = sbh_release(
                    &canonicalize(unary(&labels)),
                    b,
                    &mut NoiseSource::seeded(seed),
                )
                .unwrap();
                let c = sbh_release(
                    &canonicalize(unary(&perm)),
                    b,
                    &mut NoiseSource::seeded(seed),
                )
                .unwrap();
                prop_assert_eq!(a, c);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn partitions_disjoint_and_complete(cases: u32) -> Result<(), String> {
    let strategy = (
        prop::collection::vec((key(), trip_row()), 0..200),
        prop::collection::btree_set(key(), 0..12),
    );
    runner(cases)
        .run(&strategy, |(trips, planned)| {
            let keys: Vec<PartitionKey> = planned.iter().copied().collect();
            let prepared = trips
                .iter()
                .map(|(k, r)| PreparedTrip {
                    key: *k,
                    row: r.clone(),
                })
                .collect();
            let mut outside = 0;
            let parts = partition(prepared, &keys, &mut outside);

            let mut oracle: BTreeMap<PartitionKey, Vec<DomainPoint>> = BTreeMap::new();
            let mut oracle_outside = 0;
            for (k, r) in &trips {
                if planned.contains(k) {
                    oracle.entry(*k).or_default().push(r.clone());
                } else {
                    oracle_outside += 1;
                }
            }
            prop_assert_eq!(outside, oracle_outside);
            prop_assert_eq!(parts.len(), keys.len());
            let retained: usize = parts.values().map(Dataset::len).sum();
            prop_assert_eq!(retained as u64 + outside, trips.len() as u64);
            for (k, d) in &parts {
                let mut got = d.rows().to_vec();
                got.sort();
                let mut want = oracle.remove(k).unwrap_or_default();
                want.sort();
                prop_assert_eq!(got, want);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn projection_matches_brute_force(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&prop::collection::vec(trip_row(), 0..150), |rows| {
            let data = Dataset::new(partition_schema(), rows.clone()).unwrap();
            let full = exact_histogram(&data);
            for spec in &MARGINALS {
                let idx = spec.indices();
                let mut oracle: BTreeMap<Vec<Value>, u64> = BTreeMap::new();
                for r in &rows {
                    *oracle
                        .entry(idx.iter().map(|&i| r.values()[i].clone()).collect())
                        .or_default() += 1;
                }
                let projected = exact_histogram(&project_marginal(&data, spec));
                prop_assert_eq!(&projected, &full.marginalize(spec.schema(), &idx));
                let got: BTreeMap<Vec<Value>, u64> = projected
                    .iter()
                    .map(|(p, c)| (p.values().to_vec(), c))
                    .collect();
                prop_assert_eq!(got, oracle);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn expand_aggregate_round_trip(cases: u32) -> Result<(), String> {
    let strategy =
        prop::collection::btree_map(prop::collection::vec("[0-9A-Z:]{1,5}", 2), 1u64..20, 0..12);
    runner(cases)
        .run(&strategy, |counts| {
            let table = CountsTable {
                columns: vec!["tap_on_time".into(), "tap_on_loc".into()],
                counts,
            };
            let mut original = Vec::new();
            write_counts(&table, &mut original).unwrap();
            let mut rows = Vec::new();
            let n = expand_counts(original.as_slice(), &mut rows).unwrap();
            prop_assert_eq!(n, table.counts.values().sum::<u64>());
            let mut back = Vec::new();
            aggregate_rows(rows.as_slice(), &mut back).unwrap();
            prop_assert_eq!(back, original);
            Ok(())
        })
        .map_err(|e| e.to_string())
}
