//! Partition keys, the four tap columns, and the six released marginals.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use chrono::NaiveDate;

use crate::domain::{Attribute, AttributeKind, Dataset, DomainPoint, DomainSchema, Value};
use crate::error::Result;
use crate::pipeline::plan::ReleasePlan;
use crate::pipeline::trip::{bin_time, generalize_location, PostcodeTable, Trip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Column {
    OnTime,
    OnLoc,
    OffTime,
    OffLoc,
}

impl Column {
    pub const ALL: [Column; 4] = [
        Column::OnTime,
        Column::OnLoc,
        Column::OffTime,
        Column::OffLoc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::OnTime => "tap_on_time",
            Column::OnLoc => "tap_on_loc",
            Column::OffTime => "tap_off_time",
            Column::OffLoc => "tap_off_loc",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn attribute(self) -> Attribute {
        let kind = match self {
            Column::OnTime | Column::OffTime => AttributeKind::TimeWindow,
            Column::OnLoc | Column::OffLoc => AttributeKind::LocationCode,
        };
        Attribute::new(self.name(), kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MarginalSpec {
    id: u8,
    columns: &'static [Column],
}

/// The four one-way and two two-way marginals, ids 1 through 6.
pub const MARGINALS: [MarginalSpec; 6] = [
    MarginalSpec {
        id: 1,
        columns: &[Column::OnTime],
    },
    MarginalSpec {
        id: 2,
        columns: &[Column::OnLoc],
    },
    MarginalSpec {
        id: 3,
        columns: &[Column::OffTime],
    },
    MarginalSpec {
        id: 4,
        columns: &[Column::OffLoc],
    },
    MarginalSpec {
        id: 5,
        columns: &[Column::OnTime, Column::OnLoc],
    },
    MarginalSpec {
        id: 6,
        columns: &[Column::OffTime, Column::OffLoc],
    },
];

impl MarginalSpec {
    pub fn by_id(id: u8) -> Option<MarginalSpec> {
        MARGINALS.iter().copied().find(|m| m.id == id)
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn columns(&self) -> &'static [Column] {
        self.columns
    }

    pub fn schema(&self) -> Arc<DomainSchema> {
        DomainSchema::new(self.columns.iter().map(|c| c.attribute()).collect())
            .expect("marginal columns are distinct")
    }

    /// Positions of this marginal's columns in the partition schema.
    pub fn indices(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.index()).collect()
    }

    /// Positions of this marginal's columns inside `wider`, if it is a
    /// sub-marginal of it.
    pub fn indices_within(&self, wider: &MarginalSpec) -> Option<Vec<usize>> {
        self.columns
            .iter()
            .map(|c| wider.columns.iter().position(|w| w == c))
            .collect()
    }
}

/// Schema of a partition: the four tap columns in fixed order.
pub fn partition_schema() -> Arc<DomainSchema> {
    DomainSchema::new(Column::ALL.iter().map(|c| c.attribute()).collect())
        .expect("tap columns are distinct")
}

/// Row count preserved; only the marginal's columns survive.
pub fn project_marginal(partition: &Dataset, spec: &MarginalSpec) -> Dataset {
    let idx = spec.indices();
    let rows = partition.rows().iter().map(|r| r.project(&idx)).collect();
    Dataset::from_valid_rows(spec.schema(), rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartitionKey {
    pub mode: crate::pipeline::trip::Mode,
    pub date: NaiveDate,
}

impl PartitionKey {
    /// Relative directory, `mode=<m>/date=<d>`.
    pub fn label(&self) -> String {
        format!("mode={}/date={}", self.mode, self.date.format("%Y-%m-%d"))
    }
}

impl fmt::Display for PartitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct QuarantineCounts {
    pub malformed_rows: u64,
    pub incomplete_trips: u64,
    pub unknown_stops: u64,
    pub outside_plan: u64,
}

impl QuarantineCounts {
    pub fn total(&self) -> u64 {
        self.malformed_rows + self.incomplete_trips + self.unknown_stops + self.outside_plan
    }
}

/// A complete trip after binning and location generalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTrip {
    pub key: PartitionKey,
    pub row: DomainPoint,
}

#[derive(Default)]
struct Interner(HashMap<String, Arc<str>>);

impl Interner {
    fn get(&mut self, s: &str) -> Value {
        if let Some(v) = self.0.get(s) {
            return Value::Code(v.clone());
        }
        let v: Arc<str> = Arc::from(s);
        self.0.insert(s.to_string(), v.clone());
        Value::Code(v)
    }
}

/// Bin times and generalize locations. Incomplete trips and unknown bus
/// stops are counted and dropped.
pub fn prepare(
    trips: Vec<Trip>,
    bin_width: u32,
    plan: &ReleasePlan,
    lookup: &PostcodeTable,
    quarantine: &mut QuarantineCounts,
) -> Result<Vec<PreparedTrip>> {
    let mut interner = Interner::default();
    let mut out = Vec::with_capacity(trips.len());
    for t in trips {
        let Some(off) = t.tap_off else {
            quarantine.incomplete_trips += 1;
            continue;
        };
        let rule = plan.location_rule(t.mode);
        let (Ok(on_loc), Ok(off_loc)) = (
            generalize_location(&t.tap_on.location, rule, lookup),
            generalize_location(&off.location, rule, lookup),
        ) else {
            quarantine.unknown_stops += 1;
            continue;
        };
        let row = DomainPoint::new(vec![
            Value::Window(bin_time(t.tap_on.time, bin_width)?),
            interner.get(on_loc),
            Value::Window(bin_time(off.time, bin_width)?),
            interner.get(off_loc),
        ]);
        out.push(PreparedTrip {
            key: PartitionKey {
                mode: t.mode,
                date: t.date,
            },
            row,
        });
    }
    Ok(out)
}

/// Split by `(mode, date)`. Every key in `keys` gets a (possibly empty)
/// dataset; rows whose key is not listed are counted in `outside`.
pub fn partition(
    trips: Vec<PreparedTrip>,
    keys: &[PartitionKey],
    outside: &mut u64,
) -> BTreeMap<PartitionKey, Dataset> {
    let schema = partition_schema();
    let mut rows: BTreeMap<PartitionKey, Vec<DomainPoint>> =
        keys.iter().map(|k| (*k, Vec::new())).collect();
    for t in trips {
        match rows.get_mut(&t.key) {
            Some(v) => v.push(t.row),
            None => *outside += 1,
        }
    }
    rows.into_iter()
        .map(|(k, v)| (k, Dataset::from_valid_rows(schema.clone(), v)))
        .collect()
}
