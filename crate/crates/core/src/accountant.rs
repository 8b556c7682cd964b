//! Privacy-budget accounting under basic composition.
//!
//! Charges within one partition add up (sequential composition). Partitions
//! hold disjoint rows, so the release as a whole is bound by the largest
//! per-partition sum (parallel composition).

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::PrivacyBudget;

/// Relative slack when comparing floating-point sums against the total.
const SUM_REL_TOLERANCE: f64 = 1e-12;

/// Spent or guaranteed privacy loss. Unlike [`PrivacyBudget`], may be zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Guarantee {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Charge {
    pub scope: String,
    pub partition: String,
    pub budget: PrivacyBudget,
}

#[derive(Debug, Clone)]
pub struct BudgetLedger {
    total: PrivacyBudget,
    charges: Vec<Charge>,
    scope_partition: BTreeMap<String, String>,
    by_partition: BTreeMap<String, Vec<PrivacyBudget>>,
}

fn within(sum: f64, cap: f64) -> bool {
    sum <= cap + cap.abs() * SUM_REL_TOLERANCE
}

/// Order-independent compensated (Neumaier) sum over the sorted terms.
fn sorted_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + comp
}

impl BudgetLedger {
    pub fn new(total: PrivacyBudget) -> Self {
        BudgetLedger {
            total,
            charges: Vec::new(),
            scope_partition: BTreeMap::new(),
            by_partition: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> PrivacyBudget {
        self.total
    }

    pub fn charges(&self) -> &[Charge] {
        &self.charges
    }

    fn sum_with(&self, partition: &str, extra: Option<PrivacyBudget>) -> Guarantee {
        let spent = self
            .by_partition
            .get(partition)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let all = spent.iter().chain(extra.as_ref());
        Guarantee {
            epsilon: sorted_sum(all.clone().map(PrivacyBudget::epsilon).collect()),
            delta: sorted_sum(all.map(PrivacyBudget::delta).collect()),
        }
    }

    /// Sequential sum of the charges made against one partition.
    pub fn partition_spent(&self, partition: &str) -> Guarantee {
        self.sum_with(partition, None)
    }

    pub fn partitions(&self) -> impl Iterator<Item = &str> {
        self.by_partition.keys().map(String::as_str)
    }

    /// Append a charge if the partition stays within the total. A refused
    /// charge leaves the ledger untouched.
    pub fn charge(&mut self, scope: &str, partition: &str, budget: PrivacyBudget) -> Result<()> {
        if let Some(existing) = self.scope_partition.get(scope) {
            if existing != partition {
                return Err(Error::ScopeConflict {
                    scope: scope.to_string(),
                    existing: existing.clone(),
                    requested: partition.to_string(),
                });
            }
        }
        let would = self.sum_with(partition, Some(budget));
        if !within(would.epsilon, self.total.epsilon()) || !within(would.delta, self.total.delta())
        {
            return Err(Error::BudgetExceeded {
                scope: scope.to_string(),
                partition: partition.to_string(),
                would_epsilon: would.epsilon,
                would_delta: would.delta,
                total_epsilon: self.total.epsilon(),
                total_delta: self.total.delta(),
            });
        }
        self.scope_partition
            .insert(scope.to_string(), partition.to_string());
        self.by_partition
            .entry(partition.to_string())
            .or_default()
            .push(budget);
        self.charges.push(Charge {
            scope: scope.to_string(),
            partition: partition.to_string(),
            budget,
        });
        Ok(())
    }

    /// Charge a batch atomically: either every charge lands or none does.
    pub fn charge_all<'a>(&mut self, batch: impl IntoIterator<Item = &'a Charge>) -> Result<()> {
        let mut staged = self.clone();
        for c in batch {
            staged.charge(&c.scope, &c.partition, c.budget)?;
        }
        *self = staged;
        Ok(())
    }

    /// Per-coordinate maximum over partitions of the sequential sums.
    pub fn global_guarantee(&self) -> Guarantee {
        self.by_partition.keys().fold(Guarantee::default(), |g, p| {
            let s = self.partition_spent(p);
            Guarantee {
                epsilon: g.epsilon.max(s.epsilon),
                delta: g.delta.max(s.delta),
            }
        })
    }
}

/// One line of the release log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub scope: String,
    pub partition: String,
    pub epsilon: f64,
    pub delta: f64,
    /// RFC 3339, UTC.
    pub timestamp: String,
    /// Hex SHA-256 of the published output file.
    pub digest: String,
}

/// Append-only newline-delimited JSON log of charges, held under an
/// exclusive file lock for as long as the value lives.
#[derive(Debug)]
pub struct ReleaseLog {
    path: PathBuf,
    file: File,
    records: Vec<LogRecord>,
}

impl ReleaseLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.lock().map_err(|e| Error::io(&path, e))?;
        file.seek(SeekFrom::Start(0))
            .map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(&file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line).map_err(|e| Error::ReleaseLog {
                path: path.clone(),
                message: format!("line {}: {e}", i + 1),
            })?;
            records.push(rec);
        }
        Ok(ReleaseLog {
            path,
            file,
            records,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    /// Rebuild the ledger implied by the log under `total`.
    pub fn ledger(&self, total: PrivacyBudget) -> Result<BudgetLedger> {
        let mut ledger = BudgetLedger::new(total);
        for r in &self.records {
            let budget = PrivacyBudget::new(r.epsilon, r.delta).map_err(|e| Error::ReleaseLog {
                path: self.path.clone(),
                message: e.to_string(),
            })?;
            ledger
                .charge(&r.scope, &r.partition, budget)
                .map_err(|e| Error::ReleaseLog {
                    path: self.path.clone(),
                    message: format!("log is inconsistent with the configured total: {e}"),
                })?;
        }
        Ok(ledger)
    }

    pub fn append(&mut self, records: &[LogRecord]) -> Result<()> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        self.file
            .write_all(&buf)
            .and_then(|_| self.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))?;
        self.records.extend_from_slice(records);
        Ok(())
    }
}
