//! One function per subcommand.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, SecondsFormat, Utc};
use tripdp_core::accountant::LogRecord;
use tripdp_core::audit::run_suite;
use tripdp_core::pipeline::counts::{aggregate_rows, expand_counts};
use tripdp_core::pipeline::density::{density_by_marginal, plan_from_records};
use tripdp_core::pipeline::output::stage_release;
use tripdp_core::pipeline::synthetic::TripGenerator;
use tripdp_core::pipeline::{
    read_trips, run_release, Ingest, Mode, PostcodeTable, ReleasePlan, ReleaseReport,
};
use tripdp_core::{BudgetLedger, Execution, NoiseMode, NoiseSource, PrivacyBudget};

use crate::config::{LoadedConfig, ReleaseConfig, SCHEMA_VERSION};
use crate::{format_guarantee, CliError, Status};

pub const SEEDED_BANNER: &str = "\
**************************************************************************
* SEEDED NOISE: this run is reproducible and for testing only.           *
* Its output is NOT a private release. Use --secure to publish.          *
**************************************************************************";

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn read_input(path: &Path) -> Result<Ingest, CliError> {
    Ok(read_trips(open(path)?)?)
}

fn read_lookup(path: Option<&Path>) -> Result<PostcodeTable, CliError> {
    match path {
        Some(p) => Ok(PostcodeTable::read_csv(open(p)?)?),
        None => Ok(PostcodeTable::default()),
    }
}

/// The guarantee a plan would reach on a fresh ledger.
fn planned_guarantee(plan: &ReleasePlan) -> Result<String, CliError> {
    let mut ledger = BudgetLedger::new(plan.total_budget);
    ledger.charge_all(&tripdp_core::pipeline::release::planned_charges(plan))?;
    let g = ledger.global_guarantee();
    Ok(format_guarantee(g.epsilon, g.delta))
}

pub fn validate(path: &Path, out: &mut dyn Write) -> Result<Status, CliError> {
    let cfg = LoadedConfig::load(path)?;
    cfg.validate()?;
    let plan = &cfg.config.plan;
    writeln!(out, "valid; guarantee {}", planned_guarantee(plan)?)?;
    writeln!(
        out,
        "{} partitions ({} modes x {} dates), 6 marginals each",
        plan.partition_keys().len(),
        plan.modes.len(),
        plan.dates.len()
    )?;
    Ok(Status::Success)
}

#[derive(Debug, Clone)]
pub struct ReleaseSummary {
    pub output_dir: PathBuf,
    pub files: usize,
    pub report: ReleaseReport,
}

/// Flags take precedence over the config; exactly one source must be chosen.
fn noise_source(
    cfg: &ReleaseConfig,
    seed: Option<u64>,
    secure: bool,
) -> Result<NoiseSource, CliError> {
    let chosen = if seed.is_some() || secure {
        (seed, secure)
    } else {
        (cfg.seed, cfg.secure)
    };
    match chosen {
        (Some(s), false) => Ok(NoiseSource::seeded(s)),
        (None, true) => Ok(NoiseSource::secure()),
        _ => Err(CliError::config(
            "choose a noise source: --seed N for a test run or --secure for a release",
        )),
    }
}

/// Ingest, release, stage the outputs, log the charges, then publish.
///
/// Charges are logged before the staged tree is moved into place, so a
/// failure between the two leaves budget spent with nothing published,
/// never the reverse.
pub fn release(
    path: &Path,
    seed: Option<u64>,
    secure: bool,
    exec: Execution,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<ReleaseSummary, CliError> {
    let cfg = LoadedConfig::load(path)?;
    cfg.validate()?;
    let rng = noise_source(&cfg.config, seed, secure)?;
    if rng.mode() == NoiseMode::SeededTest {
        writeln!(err, "{SEEDED_BANNER}")?;
    }
    let plan = &cfg.config.plan;
    let ingest = read_input(&cfg.input())?;
    let lookup = read_lookup(cfg.postcode_lookup().as_deref())?;

    let mut log = tripdp_core::ReleaseLog::open(cfg.ledger())?;
    let mut ledger = log.ledger(plan.total_budget)?;
    let mut output = run_release(ingest.records, plan, &lookup, &mut ledger, &rng, exec)?;
    output.report.quarantine.malformed_rows = ingest.malformed;

    let target = cfg.output_dir();
    let staged = stage_release(&output, &target, cfg.config.expand_rows)?;
    let timestamp = Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true);
    let records: Vec<LogRecord> = output
        .releases
        .iter()
        .map(|r| LogRecord {
            scope: r.scope(),
            partition: r.key.label(),
            epsilon: r.budget.epsilon(),
            delta: r.budget.delta(),
            timestamp: timestamp.clone(),
            digest: staged
                .digest_of(&r.file_name())
                .expect("every release is staged")
                .to_string(),
        })
        .collect();
    let files = staged.files().len();
    log.append(&records)?;
    staged.commit()?;

    let report = output.report;
    let q = &report.quarantine;
    writeln!(
        out,
        "released {} marginals over {} partitions to {}",
        output.releases.len(),
        plan.partition_keys().len(),
        target.display()
    )?;
    writeln!(
        out,
        "guarantee {}",
        format_guarantee(report.guarantee.epsilon, report.guarantee.delta)
    )?;
    writeln!(
        out,
        "records {}, retained {}, quarantined: malformed {}, incomplete {}, unknown stops {}, outside plan {}",
        report.input_records + q.malformed_rows,
        report.retained_rows,
        q.malformed_rows,
        q.incomplete_trips,
        q.unknown_stops,
        q.outside_plan
    )?;
    Ok(ReleaseSummary {
        output_dir: target,
        files,
        report,
    })
}

pub fn density(
    input: &Path,
    k: u64,
    config: Option<&Path>,
    bin_minutes: u32,
    exec: Execution,
    out: &mut dyn Write,
) -> Result<Status, CliError> {
    let ingest = read_input(input)?;
    let (plan, lookup) = match config {
        Some(p) => {
            let cfg = LoadedConfig::load(p)?;
            cfg.validate()?;
            let lookup = read_lookup(cfg.postcode_lookup().as_deref())?;
            (cfg.config.plan, lookup)
        }
        None => {
            tripdp_core::pipeline::trip::BinWidth::new(bin_minutes)?;
            (
                plan_from_records(&ingest.records, bin_minutes),
                PostcodeTable::default(),
            )
        }
    };
    let mut report = density_by_marginal(ingest.records, &plan, &lookup, k, exec)?;
    report.quarantine.malformed_rows = ingest.malformed;
    let q = &report.quarantine;
    writeln!(
        out,
        "quarantined: malformed {}, incomplete {}, unknown stops {}, outside plan {}",
        q.malformed_rows, q.incomplete_trips, q.unknown_stops, q.outside_plan
    )?;
    writeln!(out, "partition\tmarginal\trows\tk\tgamma")?;
    for r in &report.rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.4}",
            r.partition, r.marginal, r.rows, r.k, r.gamma
        )?;
    }
    Ok(Status::Success)
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn expand(input: &Path, output: &Path, out: &mut dyn Write) -> Result<Status, CliError> {
    let mut buf = Vec::new();
    let rows = expand_counts(open(input)?, &mut buf)?;
    write_output(output, &buf)?;
    writeln!(out, "wrote {rows} rows to {}", output.display())?;
    Ok(Status::Success)
}

pub fn aggregate(input: &Path, output: &Path, out: &mut dyn Write) -> Result<Status, CliError> {
    let mut buf = Vec::new();
    aggregate_rows(open(input)?, &mut buf)?;
    write_output(output, &buf)?;
    writeln!(out, "wrote counts to {}", output.display())?;
    Ok(Status::Success)
}

/// The desk-scale budget grid the suite runs by default.
pub fn audit_grid() -> Vec<PrivacyBudget> {
    let mut out = Vec::new();
    for e in [0.5, 1.0, 2.0] {
        for d in [0.05, 0.1, 0.5] {
            out.push(PrivacyBudget::new(e, d).expect("valid grid budget"));
        }
    }
    out
}

pub fn audit(
    trials: u64,
    budget: Option<(f64, f64)>,
    seed: u64,
    exec: Execution,
    out: &mut dyn Write,
) -> Result<Status, CliError> {
    let budgets = match budget {
        Some((e, d)) => vec![PrivacyBudget::new(e, d)?],
        None => audit_grid(),
    };
    let results = run_suite(&budgets, trials, &NoiseSource::seeded(seed), exec)?;
    for r in &results {
        writeln!(out, "{r}")?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    writeln!(
        out,
        "{} of {} checks passed, {trials} trials per estimate",
        results.len() - failed,
        results.len()
    )?;
    Ok(if failed == 0 {
        Status::Success
    } else {
        Status::AuditFailed
    })
}

pub fn generate(
    dir: &Path,
    rows_per_partition: usize,
    start: NaiveDate,
    days: u32,
    seed: u64,
    out: &mut dyn Write,
) -> Result<Status, CliError> {
    if days == 0 {
        return Err(CliError::config("--days must be at least 1"));
    }
    let dates: Vec<NaiveDate> = start.iter_days().take(days as usize).collect();
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let (trips, stops, config) = (
        dir.join("trips.csv"),
        dir.join("stops.csv"),
        dir.join("release.json"),
    );
    let create = |p: &Path| {
        File::create(p)
            .map(BufWriter::new)
            .map_err(|e| CliError::io(p, e))
    };
    let n = TripGenerator::new(dates.clone(), Mode::ALL.to_vec(), rows_per_partition).write_csv(
        seed,
        create(&trips)?,
        create(&stops)?,
    )?;
    let doc = ReleaseConfig {
        schema_version: SCHEMA_VERSION,
        input: "trips.csv".into(),
        postcode_lookup: Some("stops.csv".into()),
        output_dir: "release".into(),
        ledger: "release-log.ndjson".into(),
        seed: None,
        secure: false,
        expand_rows: false,
        plan: ReleasePlan::with_default_budgets(dates, Mode::ALL.to_vec()),
    };
    let mut json = serde_json::to_string_pretty(&doc).expect("config serializes");
    json.push('\n');
    write_output(&config, json.as_bytes())?;
    writeln!(out, "wrote {n} trips to {}", trips.display())?;
    writeln!(out, "wrote stop lookup to {}", stops.display())?;
    writeln!(out, "wrote config to {}", config.display())?;
    Ok(Status::Success)
}
