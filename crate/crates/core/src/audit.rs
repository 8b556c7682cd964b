//! Monte Carlo audit of histogram mechanisms.
//!
//! Mechanisms are treated as black boxes through [`HistogramMechanism`]. The
//! harness estimates event probabilities on neighbouring micro-datasets and
//! checks `P(M(D) ∈ S) <= e^ε · P(M(D') ∈ S) + δ` in both directions, with
//! each estimate widened by a fixed number of binomial standard deviations.
//!
//! Desk-scale audits use δ in roughly `[0.01, 0.5]`. Verifying a production
//! δ near `2^-23` would need far more trials than is practical; that value
//! is covered by the closed-form tail bound instead.

use std::fmt;

use serde::Serialize;

use crate::domain::{
    Attribute, AttributeKind, Dataset, DomainPoint, DomainSchema, Histogram, Value,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::noise::{laplace_tail, sample_laplace, LaplaceScale, NoiseSource, PrivacyBudget};
use crate::sbh::{
    canonicalize, exact_histogram, sbh_threshold, HistogramMechanism, StabilityHistogram,
};

/// Fewest trials for which a verdict is reported.
pub const MIN_TRIALS: u64 = 10_000;
/// Largest number of distinct points an indistinguishability audit enumerates.
pub const MAX_AUDIT_POINTS: usize = 64;
/// Thresholds `c` for the "released count ≥ c" events.
pub const COUNT_GRID: [u64; 14] = [1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventFamily {
    /// "point x is present" for every point in the joint support.
    PerPointPresence,
    /// "released count of x ≥ c" for every point and every c in [`COUNT_GRID`].
    ReleasedCountThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditConfig {
    trials: u64,
    beta: f64,
    event_family: EventFamily,
    tolerance_sigmas: f64,
}

impl AuditConfig {
    pub fn new(
        trials: u64,
        beta: f64,
        event_family: EventFamily,
        tolerance_sigmas: f64,
    ) -> Result<Self> {
        if trials < MIN_TRIALS {
            return Err(Error::InvalidAudit(format!(
                "at least {MIN_TRIALS} trials are required for a verdict, got {trials}"
            )));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidAudit(format!(
                "beta must lie in (0, 1], got {beta}"
            )));
        }
        if !(tolerance_sigmas.is_finite() && tolerance_sigmas >= 0.0) {
            return Err(Error::InvalidAudit(format!(
                "tolerance must be a non-negative number of standard deviations, got {tolerance_sigmas}"
            )));
        }
        Ok(AuditConfig {
            trials,
            beta,
            event_family,
            tolerance_sigmas,
        })
    }

    /// `trials` at β = 0.01, threshold events, 3σ slack.
    pub fn standard(trials: u64) -> Result<Self> {
        Self::new(trials, 0.01, EventFamily::ReleasedCountThresholds, 3.0)
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn tolerance_sigmas(&self) -> f64 {
        self.tolerance_sigmas
    }
}

/// Two equal-size datasets over the same schema differing in exactly one row.
#[derive(Debug, Clone)]
pub struct NeighborPair {
    d: Dataset,
    d_prime: Dataset,
}

impl NeighborPair {
    pub fn new(d: Dataset, d_prime: Dataset) -> Result<Self> {
        if d.schema() != d_prime.schema() {
            return Err(Error::InvalidAudit("neighbours must share a schema".into()));
        }
        if d.len() != d_prime.len() {
            return Err(Error::InvalidAudit(format!(
                "neighbours must have equal row counts, got {} and {}",
                d.len(),
                d_prime.len()
            )));
        }
        let (h, hp) = (exact_histogram(&d), exact_histogram(&d_prime));
        let excess: u64 = h.iter().map(|(p, c)| c.saturating_sub(hp.get(p))).sum();
        if excess != 1 {
            return Err(Error::InvalidAudit(format!(
                "neighbours must differ in exactly one row, they differ in {excess}"
            )));
        }
        Ok(NeighborPair {
            d: canonicalize(d),
            d_prime: canonicalize(d_prime),
        })
    }

    pub fn d(&self) -> &Dataset {
        &self.d
    }

    pub fn d_prime(&self) -> &Dataset {
        &self.d_prime
    }

    fn support(&self) -> Vec<DomainPoint> {
        let mut pts: Vec<DomainPoint> = self
            .d
            .rows()
            .iter()
            .chain(self.d_prime.rows())
            .cloned()
            .collect();
        pts.sort();
        pts.dedup();
        pts
    }
}

impl fmt::Display for NeighborPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |d: &Dataset| {
            d.rows()
                .iter()
                .map(|p| {
                    p.values()
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join("|")
                })
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "{{{}}} ~ {{{}}}", show(&self.d), show(&self.d_prime))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Event {
    CountAtLeast(DomainPoint, u64),
}

impl Event {
    fn holds(&self, h: &Histogram) -> bool {
        match self {
            Event::CountAtLeast(p, c) => h.get(p) >= *c,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::CountAtLeast(p, 1) => write!(f, "point {p} present"),
            Event::CountAtLeast(p, c) => write!(f, "count of {p} >= {c}"),
        }
    }
}

fn events(points: &[DomainPoint], family: EventFamily) -> Vec<Event> {
    let grid: &[u64] = match family {
        EventFamily::PerPointPresence => &COUNT_GRID[..1],
        EventFamily::ReleasedCountThresholds => &COUNT_GRID,
    };
    points
        .iter()
        .flat_map(|p| grid.iter().map(move |&c| Event::CountAtLeast(p.clone(), c)))
        .collect()
}

/// Hits per event over `trials` independent releases of `data`.
fn event_hits<M: HistogramMechanism>(
    mechanism: &M,
    data: &Dataset,
    events: &[Event],
    trials: u64,
    rng: &NoiseSource,
    label: &str,
    exec: Execution,
) -> Result<Vec<u64>> {
    let n = events.len();
    let acc = exec.fold_range(
        trials,
        || Ok(vec![0u64; n]),
        |acc: Result<Vec<u64>>, t| {
            let mut acc = acc?;
            let mut stream = rng.substream(&format!("{label}/{t}"));
            let h = mechanism.release(data, &mut stream)?;
            for (slot, e) in acc.iter_mut().zip(events) {
                *slot += u64::from(e.holds(&h));
            }
            Ok(acc)
        },
        |a, b| {
            let (mut a, b) = (a?, b?);
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            Ok(a)
        },
    );
    acc
}

/// Binomial standard error, with the estimate pulled off 0 and 1 so that an
/// event never observed still carries some uncertainty.
fn binomial_sigma(hits: u64, trials: u64) -> f64 {
    let p = (hits as f64 + 0.5) / (trials as f64 + 1.0);
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndistinguishabilityVerdict {
    pub passed: bool,
    pub trials: u64,
    pub events_checked: usize,
    /// Event with the largest (least negative) margin.
    pub worst_event: String,
    /// Whether the worst event was checked as `D` against `D'` or reverse.
    pub worst_direction: &'static str,
    /// `(p̂ − zσ) − (e^ε (p̂' + zσ') + δ)`; positive means a violation.
    pub worst_margin: f64,
    pub worst_p: f64,
    pub worst_p_other: f64,
}

/// Estimate whether `mechanism` keeps the pair `(ε, δ)`-indistinguishable
/// on the configured event family.
pub fn estimate_indistinguishability<M: HistogramMechanism>(
    mechanism: &M,
    pair: &NeighborPair,
    budget: PrivacyBudget,
    config: &AuditConfig,
    rng: &NoiseSource,
    exec: Execution,
) -> Result<IndistinguishabilityVerdict> {
    let points = pair.support();
    if points.len() > MAX_AUDIT_POINTS {
        return Err(Error::InvalidAudit(format!(
            "the pair spans {} distinct points; shrink the domain to at most {MAX_AUDIT_POINTS}",
            points.len()
        )));
    }
    let events = events(&points, config.event_family);
    let n = config.trials;
    let hits_d = event_hits(mechanism, pair.d(), &events, n, rng, "d", exec)?;
    let hits_dp = event_hits(mechanism, pair.d_prime(), &events, n, rng, "d-prime", exec)?;

    let z = config.tolerance_sigmas;
    let e_eps = budget.epsilon().exp();
    let mut verdict = IndistinguishabilityVerdict {
        passed: true,
        trials: n,
        events_checked: events.len(),
        worst_event: String::new(),
        worst_direction: "",
        worst_margin: f64::NEG_INFINITY,
        worst_p: 0.0,
        worst_p_other: 0.0,
    };
    for (i, e) in events.iter().enumerate() {
        for (dir, a, b) in [
            ("D vs D'", hits_d[i], hits_dp[i]),
            ("D' vs D", hits_dp[i], hits_d[i]),
        ] {
            let (pa, pb) = (a as f64 / n as f64, b as f64 / n as f64);
            let lhs = pa - z * binomial_sigma(a, n);
            let rhs = e_eps * (pb + z * binomial_sigma(b, n)) + budget.delta();
            let margin = lhs - rhs;
            if margin > verdict.worst_margin {
                verdict.worst_margin = margin;
                verdict.worst_event = e.to_string();
                verdict.worst_direction = dir;
                verdict.worst_p = pa;
                verdict.worst_p_other = pb;
            }
        }
    }
    verdict.passed = verdict.worst_margin <= 0.0;
    Ok(verdict)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BadEventReport {
    pub trials: u64,
    pub survivals: u64,
    pub rate: f64,
    /// The δ/2 bound.
    pub bound: f64,
    /// Exact `P(1 + Lap(2/ε) >= threshold)`.
    pub analytic: f64,
    pub within_bound: bool,
    pub matches_analytic: bool,
    pub passed: bool,
}

fn singleton_schema() -> std::sync::Arc<DomainSchema> {
    DomainSchema::new(vec![Attribute::new("x", AttributeKind::Categorical)]).expect("valid schema")
}

/// Rate at which a point occurring exactly once survives release.
pub fn bad_event_frequency<M: HistogramMechanism>(
    mechanism: &M,
    budget: PrivacyBudget,
    config: &AuditConfig,
    rng: &NoiseSource,
    exec: Execution,
) -> Result<BadEventReport> {
    let point = DomainPoint::new(vec![Value::code("x")]);
    let data = Dataset::new(singleton_schema(), vec![point.clone()])?;
    let events = [Event::CountAtLeast(point, 1)];
    let n = config.trials;
    let survivals = event_hits(mechanism, &data, &events, n, rng, "bad-event", exec)?[0];
    let rate = survivals as f64 / n as f64;
    let bound = budget.delta() / 2.0;
    let threshold = sbh_threshold(budget)?;
    let analytic = laplace_tail(
        LaplaceScale::for_query(2.0, budget.epsilon())?,
        threshold - 1.0,
    )?;
    let z = config.tolerance_sigmas;
    let sigma_at = |p: f64| (p * (1.0 - p) / n as f64).sqrt();
    let within_bound = rate <= bound + z * sigma_at(bound);
    let matches_analytic = (rate - analytic).abs() <= z * sigma_at(analytic);
    Ok(BadEventReport {
        trials: n,
        survivals,
        rate,
        bound,
        analytic,
        within_bound,
        matches_analytic,
        passed: within_bound && matches_analytic,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityReport {
    pub trials: u64,
    pub distinct_points: usize,
    pub beta: f64,
    /// (1 − β)-quantile of the per-trial max point error.
    pub quantile_max_error: f64,
    pub worst_max_error: f64,
    /// `(2/ε)·ln(2m/β) + 0.5`, the bound for unsuppressed points.
    pub laplace_bound: f64,
    /// `threshold + (2/ε)·ln(m/β)`, the overall error scale including
    /// suppression.
    pub scale_bound: f64,
    pub passed: bool,
}

/// Distribution of `max_x |released(x) − q_x(D)|` over repeated releases.
pub fn measure_utility<M: HistogramMechanism>(
    mechanism: &M,
    dataset: &Dataset,
    budget: PrivacyBudget,
    config: &AuditConfig,
    rng: &NoiseSource,
    exec: Execution,
) -> Result<UtilityReport> {
    let data = canonicalize(dataset.clone());
    let truth = exact_histogram(&data);
    let trials: Vec<u64> = (0..config.trials).collect();
    let errors = exec.try_map(&trials, |&t| -> Result<f64> {
        let h = mechanism.release(&data, &mut rng.substream(&format!("utility/{t}")))?;
        let on_support = truth
            .iter()
            .map(|(p, c)| (h.get(p) as f64 - c as f64).abs());
        let off_support = h
            .iter()
            .filter(|(p, _)| truth.get(p) == 0)
            .map(|(_, c)| c as f64);
        Ok(on_support.chain(off_support).fold(0.0, f64::max))
    })?;
    let mut sorted = errors;
    sorted.sort_by(f64::total_cmp);
    let idx =
        (((1.0 - config.beta) * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    let m = truth.len();
    let eps = budget.epsilon();
    let beta = config.beta;
    let (laplace_bound, scale_bound) = if m == 0 {
        (0.5, sbh_threshold(budget)?)
    } else {
        (
            (2.0 / eps) * (2.0 * m as f64 / beta).ln() + 0.5,
            sbh_threshold(budget)? + (2.0 / eps) * (m as f64 / beta).ln(),
        )
    };
    let quantile = sorted[idx];
    Ok(UtilityReport {
        trials: config.trials,
        distinct_points: m,
        beta,
        quantile_max_error: quantile,
        worst_max_error: *sorted.last().expect("at least MIN_TRIALS trials"),
        laplace_bound,
        scale_bound,
        passed: quantile <= laplace_bound,
    })
}

/// Deliberately broken mechanism: Laplace-noised counts with no suppression
/// threshold. Used to show the harness can detect a privacy failure.
#[derive(Debug, Clone, Copy)]
pub struct UnthresholdedHistogram {
    scale: LaplaceScale,
}

impl UnthresholdedHistogram {
    pub fn new(budget: PrivacyBudget) -> Result<Self> {
        Ok(UnthresholdedHistogram {
            scale: LaplaceScale::for_query(2.0, budget.epsilon())?,
        })
    }
}

impl HistogramMechanism for UnthresholdedHistogram {
    fn release(&self, dataset: &Dataset, rng: &mut NoiseSource) -> Result<Histogram> {
        let truth = exact_histogram(dataset);
        let mut counts = Vec::new();
        for (p, c) in truth.iter() {
            let noisy = (c as f64 + sample_laplace(self.scale, rng)).round();
            if noisy >= 1.0 {
                counts.push((p.clone(), noisy as u64));
            }
        }
        Histogram::from_counts(dataset.schema().clone(), counts)
    }
}

fn unary(rows: &[&str]) -> Dataset {
    let rows = rows
        .iter()
        .map(|s| DomainPoint::new(vec![Value::code(s)]))
        .collect();
    Dataset::new(singleton_schema(), rows).expect("valid rows")
}

/// Neighbour pairs over domains of two to four points with at most six rows.
pub fn micro_suite() -> Vec<NeighborPair> {
    let pairs: [(&[&str], &[&str]); 6] = [
        (&["a"], &["b"]),
        (&["a", "a", "a", "b"], &["a", "a", "b", "b"]),
        (&["a", "b", "c"], &["a", "b", "b"]),
        (&["a", "b", "c", "d"], &["a", "b", "c", "c"]),
        (
            &["a", "a", "a", "a", "a", "a"],
            &["a", "a", "a", "a", "a", "b"],
        ),
        (
            &["a", "a", "b", "c", "c", "c"],
            &["a", "a", "b", "c", "c", "d"],
        ),
    ];
    pairs
        .iter()
        .map(|(d, dp)| NeighborPair::new(unary(d), unary(dp)).expect("valid neighbours"))
        .collect()
}

/// The `{a}` / `{b}` pair, on which any mechanism without suppression leaks.
pub fn singleton_pair() -> NeighborPair {
    NeighborPair::new(unary(&["a"]), unary(&["b"])).expect("valid neighbours")
}

/// Points `p0..p{m-1}` with counts `min_count, min_count+1, ...`.
pub fn utility_fixture(distinct_points: usize, min_count: u64) -> Dataset {
    let mut rows = Vec::new();
    for i in 0..distinct_points {
        let p = DomainPoint::new(vec![Value::code(&format!("p{i:03}"))]);
        rows.extend(std::iter::repeat_n(p, (min_count + i as u64) as usize));
    }
    Dataset::new(singleton_schema(), rows).expect("valid rows")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Every audit check at every budget in `budgets`: soundness on the micro
/// suite, power against the unthresholded mechanism, the bad-event rate,
/// and the utility bound.
pub fn run_suite(
    budgets: &[PrivacyBudget],
    trials: u64,
    seed_source: &NoiseSource,
    exec: Execution,
) -> Result<Vec<CheckResult>> {
    let config = AuditConfig::standard(trials)?;
    let mut out = Vec::new();
    for &b in budgets {
        let tag = format!("ε={} δ={}", b.epsilon(), b.delta());
        let rng = seed_source.substream(&tag);
        let sbh = StabilityHistogram::new(b)?;
        for (i, pair) in micro_suite().iter().enumerate() {
            let v = estimate_indistinguishability(
                &sbh,
                pair,
                b,
                &config,
                &rng.substream(&format!("pair{i}")),
                exec,
            )?;
            out.push(CheckResult {
                name: format!("indistinguishability {tag} pair {pair}"),
                passed: v.passed,
                detail: format!(
                    "worst margin {:.5} on `{}` ({}), p={:.5} vs {:.5}, {} events, {} trials per side",
                    v.worst_margin, v.worst_event, v.worst_direction, v.worst_p, v.worst_p_other, v.events_checked, v.trials
                ),
            });
        }
        let broken = UnthresholdedHistogram::new(b)?;
        let v = estimate_indistinguishability(
            &broken,
            &singleton_pair(),
            b,
            &config,
            &rng.substream("power"),
            exec,
        )?;
        out.push(CheckResult {
            name: format!("power {tag} unthresholded mechanism detected"),
            passed: !v.passed,
            detail: format!(
                "worst margin {:.5} on `{}` ({})",
                v.worst_margin, v.worst_event, v.worst_direction
            ),
        });
        let be = bad_event_frequency(&sbh, b, &config, &rng.substream("bad-event"), exec)?;
        out.push(CheckResult {
            name: format!("bad-event {tag}"),
            passed: be.passed,
            detail: format!(
                "survival rate {:.6} (bound {:.6}, closed form {:.6}) over {} trials",
                be.rate, be.bound, be.analytic, be.trials
            ),
        });
        let min_count = (3.0 * sbh.threshold()).ceil() as u64;
        let u = measure_utility(
            &sbh,
            &utility_fixture(20, min_count),
            b,
            &config,
            &rng.substream("utility"),
            exec,
        )?;
        out.push(CheckResult {
            name: format!("utility {tag}"),
            passed: u.passed,
            detail: format!(
                "{:.0}th percentile max error {:.1} <= bound {:.3} (m={}, worst {:.1})",
                100.0 * (1.0 - u.beta),
                u.quantile_max_error,
                u.laplace_bound,
                u.distinct_points,
                u.worst_max_error
            ),
        });
    }
    Ok(out)
}
