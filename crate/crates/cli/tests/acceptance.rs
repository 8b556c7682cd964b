//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/support/invariants.rs"]
mod invariants;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chrono::NaiveDate;
use tempfile::TempDir;
use tripdp_cli::commands::{self, audit_grid};
use tripdp_cli::Status;
use tripdp_core::audit::{
    bad_event_frequency, estimate_indistinguishability, measure_utility, micro_suite,
    singleton_pair, utility_fixture, AuditConfig, UnthresholdedHistogram,
};
use tripdp_core::pipeline::release::planned_charges;
use tripdp_core::pipeline::{Mode, ReleasePlan};
use tripdp_core::{
    sbh_threshold, BudgetLedger, Execution, NoiseSource, PrivacyBudget, ReleaseLog,
    StabilityHistogram,
};

const AUDIT_TRIALS: u64 = 100_000;
const UTILITY_TRIALS: u64 = 10_000;
const PROPERTY_CASES: u32 = 1000;
const DJ: f64 = 1.0 / 8_000_000.0;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1e-300)
}

fn dates(n: u32) -> Vec<NaiveDate> {
    NaiveDate::from_ymd_opt(2016, 7, 25)
        .unwrap()
        .iter_days()
        .take(n as usize)
        .collect()
}

fn parameters() -> Outcome {
    let t1 = sbh_threshold(PrivacyBudget::new(1.0, DJ).unwrap()).unwrap();
    let t2 = sbh_threshold(PrivacyBudget::new(2.0, DJ).unwrap()).unwrap();
    let want1 = 2.0 * (2.0f64 * 8_000_000.0).ln() + 1.0;
    let want2 = (2.0f64 * 8_000_000.0).ln() + 1.0;
    ensure(close(t1, want1) && close(t2, want2), || {
        format!("thresholds {t1}, {t2}")
    })?;
    ensure(
        format!("{t1:.2}") == "34.18" && format!("{t2:.2}") == "17.59",
        || format!("thresholds round to {t1:.2} and {t2:.2}"),
    )?;

    let plan = ReleasePlan::with_default_budgets(dates(14), Mode::ALL.to_vec());
    plan.validate().map_err(|e| e.to_string())?;
    let mut ledger = BudgetLedger::new(plan.total_budget);
    ledger
        .charge_all(&planned_charges(&plan))
        .map_err(|e| e.to_string())?;
    let g = ledger.global_guarantee();
    ensure(close(g.epsilon, 8.0) && close(g.delta, 7.5e-7), || {
        format!("guarantee {g:?}")
    })?;
    ensure(g.delta < 2f64.powi(-20), || {
        format!("{} is not below 2^-20", g.delta)
    })?;

    let mut out = Vec::new();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/default-release.json");
    commands::validate(&config, &mut out).map_err(|e| e.to_string())?;
    let line = String::from_utf8(out).unwrap();
    ensure(
        line.starts_with("valid; guarantee (ε=8, δ=7.5e-7)"),
        || line.clone(),
    )?;
    Ok(format!(
        "thresholds {t1:.6} (ε=1) and {t2:.6} (ε=2); guarantee (ε={}, δ={:e}) over {} partitions",
        g.epsilon,
        g.delta,
        ledger.partitions().count()
    ))
}

fn audit_config() -> AuditConfig {
    AuditConfig::standard(AUDIT_TRIALS).unwrap()
}

fn soundness() -> Outcome {
    let root = NoiseSource::seeded(2);
    let (mut checked, mut failures, mut closest) = (0, Vec::new(), f64::NEG_INFINITY);
    for b in audit_grid() {
        let sbh = StabilityHistogram::new(b).unwrap();
        for (i, pair) in micro_suite().iter().enumerate() {
            let rng = root.substream(&format!("{}/{}/{i}", b.epsilon(), b.delta()));
            let v = estimate_indistinguishability(
                &sbh,
                pair,
                b,
                &audit_config(),
                &rng,
                Execution::default(),
            )
            .map_err(|e| e.to_string())?;
            checked += 1;
            closest = closest.max(v.worst_margin);
            if !v.passed {
                failures.push(format!(
                    "{pair} at ε={} δ={}: `{}`",
                    b.epsilon(),
                    b.delta(),
                    v.worst_event
                ));
            }
        }
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!(
        "{checked} pair/budget audits, {AUDIT_TRIALS} trials per side, 0 failures at 3σ (closest margin {closest:.4})"
    ))
}

fn power() -> Outcome {
    let root = NoiseSource::seeded(3);
    let mut weakest = f64::INFINITY;
    for b in audit_grid() {
        let broken = UnthresholdedHistogram::new(b).unwrap();
        let rng = root.substream(&format!("{}/{}", b.epsilon(), b.delta()));
        let v = estimate_indistinguishability(
            &broken,
            &singleton_pair(),
            b,
            &audit_config(),
            &rng,
            Execution::default(),
        )
        .map_err(|e| e.to_string())?;
        ensure(!v.passed, || {
            format!("not detected at ε={} δ={}", b.epsilon(), b.delta())
        })?;
        ensure(v.worst_event.contains("present"), || {
            format!("worst event was `{}`", v.worst_event)
        })?;
        weakest = weakest.min(v.worst_margin);
    }
    Ok(format!(
        "unthresholded mechanism rejected at all 9 budgets on a presence event (smallest violation {weakest:.4})"
    ))
}

fn bad_event() -> Outcome {
    let root = NoiseSource::seeded(4);
    let mut lines = Vec::new();
    for delta in [0.05, 0.5] {
        for eps in [0.5, 1.0, 2.0] {
            let b = PrivacyBudget::new(eps, delta).unwrap();
            let sbh = StabilityHistogram::new(b).unwrap();
            let rng = root.substream(&format!("{eps}/{delta}"));
            let r = bad_event_frequency(&sbh, b, &audit_config(), &rng, Execution::default())
                .map_err(|e| e.to_string())?;
            ensure(r.within_bound, || {
                format!("ε={eps} δ={delta}: rate {} above δ/2 + 3σ", r.rate)
            })?;
            ensure(r.matches_analytic, || {
                format!(
                    "ε={eps} δ={delta}: rate {} vs closed form {}",
                    r.rate, r.analytic
                )
            })?;
            if eps == 1.0 {
                lines.push(format!(
                    "δ={delta}: {:.5} vs closed form {:.5}",
                    r.rate, r.analytic
                ));
            }
        }
    }
    Ok(format!(
        "survival rates at ε=1, {}; all 6 budgets pass",
        lines.join(", ")
    ))
}

fn utility() -> Outcome {
    let b = PrivacyBudget::new(1.0, 0.05).unwrap();
    let sbh = StabilityHistogram::new(b).unwrap();
    let min = (3.0 * sbh.threshold()).ceil() as u64;
    let cfg = AuditConfig::standard(UTILITY_TRIALS).unwrap();
    let data = utility_fixture(20, min);
    let u = measure_utility(
        &sbh,
        &data,
        b,
        &cfg,
        &NoiseSource::seeded(5),
        Execution::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(u.passed, || format!("{u:?}"))?;
    Ok(format!(
        "99th percentile max error {} <= {:.3} (m={}, counts >= {min}, {} trials)",
        u.quantile_max_error, u.laplace_bound, u.distinct_points, u.trials
    ))
}

fn properties() -> Outcome {
    let mut failed = Vec::new();
    for (name, check) in invariants::ALL {
        if let Err(e) = check(PROPERTY_CASES) {
            failed.push(format!("{name}: {e}"));
        }
    }
    ensure(failed.is_empty(), || failed.join("; "))?;
    Ok(format!(
        "{} invariants, {PROPERTY_CASES} cases each",
        invariants::ALL.len()
    ))
}

fn generate(dir: &Path, rows_per_partition: usize) -> Result<PathBuf, String> {
    let start = NaiveDate::from_ymd_opt(2016, 7, 25).unwrap();
    commands::generate(dir, rows_per_partition, start, 14, 1, &mut Vec::new())
        .map_err(|e| e.to_string())?;
    Ok(dir.join("release.json"))
}

fn release(config: &Path, seed: u64) -> Result<commands::ReleaseSummary, tripdp_cli::CliError> {
    commands::release(
        config,
        Some(seed),
        false,
        Execution::default(),
        &mut Vec::new(),
        &mut Vec::new(),
    )
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

fn with_paths(config: &Path, output: &str, ledger: &str) -> PathBuf {
    let mut doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(config).unwrap()).unwrap();
    doc["output_dir"] = output.into();
    doc["ledger"] = ledger.into();
    let p = config.with_file_name(format!("{output}.json"));
    fs::write(&p, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    p
}

fn determinism() -> Outcome {
    let dir = TempDir::new().unwrap();
    let base = generate(dir.path(), 2000)?;
    let a = with_paths(&base, "run-a", "log-a.ndjson");
    let b = with_paths(&base, "run-b", "log-b.ndjson");
    let ra = release(&a, 7).map_err(|e| e.to_string())?;
    let rb = release(&b, 7).map_err(|e| e.to_string())?;
    let (ta, tb) = (tree(&ra.output_dir), tree(&rb.output_dir));
    ensure(ta == tb, || "output trees differ".into())?;
    let partitions = ra.report.outputs.len() / 6;
    ensure(partitions == 56, || format!("{partitions} partitions"))?;
    Ok(format!(
        "{partitions} partitions, {} files byte-identical across two seed-7 runs",
        ta.len()
    ))
}

fn ledger_enforcement() -> Outcome {
    let dir = TempDir::new().unwrap();
    let config = generate(dir.path(), 200)?;
    release(&config, 1).map_err(|e| e.to_string())?;
    let log = ReleaseLog::open(dir.path().join("release-log.ndjson")).map_err(|e| e.to_string())?;
    let ledger = log
        .ledger(PrivacyBudget::new(8.0, 7.5e-7).unwrap())
        .map_err(|e| e.to_string())?;
    let mut partitions = 0;
    for p in ledger.partitions() {
        let s = ledger.partition_spent(p);
        ensure(s.epsilon == 8.0 && s.delta == 7.5e-7, || {
            format!("{p} spent {s:?}")
        })?;
        partitions += 1;
    }
    ensure(partitions == 56, || {
        format!("{partitions} partitions in the log")
    })?;
    drop(log);

    let again = with_paths(&config, "second", "release-log.ndjson");
    match release(&again, 2) {
        Err(e) if e.status == Status::BudgetRefused => {}
        Err(e) => return Err(format!("wrong refusal: {e}")),
        Ok(_) => return Err("second release was accepted".into()),
    }
    ensure(!dir.path().join("second").exists(), || {
        "partial output left behind".into()
    })?;
    let staging = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .contains("staging")
        })
        .count();
    ensure(staging == 0, || "staging directory left behind".into())?;
    Ok(format!(
        "every one of {partitions} partitions at exactly (ε=8, δ=7.5e-7); second release refused, nothing written"
    ))
}

fn performance() -> Outcome {
    let dir = TempDir::new().unwrap();
    let per_partition = 1_000_000usize.div_ceil(56);
    let config = generate(dir.path(), per_partition)?;
    let started = Instant::now();
    let summary = release(&config, 9).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let rows = summary.report.input_records + summary.report.quarantine.malformed_rows;
    ensure(rows >= 1_000_000, || format!("only {rows} rows"))?;
    ensure(secs < 60.0, || format!("{rows} rows took {secs:.1}s"))?;
    Ok(format!("{rows} rows released in {secs:.1}s"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("parameter reproduction", parameters),
        ("privacy audit soundness", soundness),
        ("privacy audit power", power),
        ("bad-event bound", bad_event),
        ("utility bound", utility),
        ("structural invariants", properties),
        ("end-to-end determinism", determinism),
        ("ledger enforcement", ledger_enforcement),
        ("performance", performance),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
