use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::PrivacyBudget;
use crate::pipeline::marginal::PartitionKey;
use crate::pipeline::trip::{BinWidth, LocationRule, Mode};

/// Per-marginal budget split used when nothing else is configured.
pub const DEFAULT_MARGINAL_EPSILONS: [f64; 6] = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
pub const DEFAULT_MARGINAL_DELTA: f64 = 1.0 / 8_000_000.0;

/// Budget sums must match the total to this relative precision.
const SUM_REL_TOLERANCE: f64 = 1e-9;

/// Which partitions to release, how to pre-process, and how to split the
/// budget across the six marginals. The same split applies to every
/// partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleasePlan {
    pub dates: Vec<NaiveDate>,
    pub modes: Vec<Mode>,
    #[serde(default = "default_bin")]
    pub time_bin_minutes: u32,
    #[serde(default)]
    pub location_generalization: BTreeMap<Mode, LocationRule>,
    pub marginal_budgets: Vec<PrivacyBudget>,
    pub total_budget: PrivacyBudget,
}

fn default_bin() -> u32 {
    15
}

impl ReleasePlan {
    /// Fifteen-minute bins, bus stops collapsed to postcodes, and the
    /// `(1, 1, 1, 1, 2, 2)` epsilon split with δ_j = 1/8,000,000.
    pub fn with_default_budgets(dates: Vec<NaiveDate>, modes: Vec<Mode>) -> Self {
        let marginal_budgets: Vec<PrivacyBudget> = DEFAULT_MARGINAL_EPSILONS
            .iter()
            .map(|&e| PrivacyBudget::new(e, DEFAULT_MARGINAL_DELTA).expect("valid default"))
            .collect();
        let total_budget = PrivacyBudget::new(
            DEFAULT_MARGINAL_EPSILONS.iter().sum(),
            6.0 * DEFAULT_MARGINAL_DELTA,
        )
        .expect("valid default");
        ReleasePlan {
            dates,
            modes,
            time_bin_minutes: default_bin(),
            location_generalization: BTreeMap::from([(Mode::Bus, LocationRule::PostcodeLookup)]),
            marginal_budgets,
            total_budget,
        }
    }

    pub fn location_rule(&self, mode: Mode) -> LocationRule {
        self.location_generalization
            .get(&mode)
            .copied()
            .unwrap_or(LocationRule::Identity)
    }

    pub fn needs_lookup(&self) -> bool {
        self.modes
            .iter()
            .any(|&m| self.location_rule(m) == LocationRule::PostcodeLookup)
    }

    /// Every `(mode, date)` pair, in sorted order.
    pub fn partition_keys(&self) -> Vec<PartitionKey> {
        let modes: BTreeSet<Mode> = self.modes.iter().copied().collect();
        let dates: BTreeSet<NaiveDate> = self.dates.iter().copied().collect();
        modes
            .iter()
            .flat_map(|&mode| dates.iter().map(move |&date| PartitionKey { mode, date }))
            .collect()
    }

    /// All problems with the plan, empty if it is valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dates.is_empty() {
            out.push("plan lists no dates".to_string());
        }
        if self.dates.iter().collect::<BTreeSet<_>>().len() != self.dates.len() {
            out.push("plan lists a date more than once".to_string());
        }
        if self.modes.is_empty() {
            out.push("plan lists no modes".to_string());
        }
        if self.modes.iter().collect::<BTreeSet<_>>().len() != self.modes.len() {
            out.push("plan lists a mode more than once".to_string());
        }
        if let Err(e) = BinWidth::new(self.time_bin_minutes) {
            out.push(e.to_string());
        }
        if self.marginal_budgets.len() != 6 {
            out.push(format!(
                "expected 6 marginal budgets, got {}",
                self.marginal_budgets.len()
            ));
        }
        if self.marginal_budgets.iter().any(|b| b.delta() <= 0.0) {
            out.push("every marginal delta must be positive".to_string());
        }
        let eps: f64 = self.marginal_budgets.iter().map(|b| b.epsilon()).sum();
        let del: f64 = self.marginal_budgets.iter().map(|b| b.delta()).sum();
        let total = self.total_budget;
        if (eps - total.epsilon()).abs() > SUM_REL_TOLERANCE * total.epsilon() {
            out.push(format!(
                "marginal epsilons sum to {eps} but the total epsilon is {}",
                total.epsilon()
            ));
        }
        if (del - total.delta()).abs() > SUM_REL_TOLERANCE * total.delta().max(f64::MIN_POSITIVE) {
            out.push(format!(
                "marginal deltas sum to {del:e} but the total delta is {:e}",
                total.delta()
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().as_slice() {
            [] => Ok(()),
            ps => Err(Error::InvalidPlan(ps.join("; "))),
        }
    }
}
