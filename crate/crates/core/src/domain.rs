//! Schemas, domain points, datasets and histograms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Start of a time window, in minutes since midnight. Displays as `HH:MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeWindow(u16);

impl TimeWindow {
    pub fn from_start(minutes: u32) -> Result<Self> {
        if minutes < 1440 {
            Ok(TimeWindow(minutes as u16))
        } else {
            Err(Error::InvalidTime(minutes))
        }
    }

    pub fn start_minutes(self) -> u32 {
        u32::from(self.0)
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.0 / 60, self.0 % 60)
    }
}

/// Parse `HH:MM` into minutes since midnight.
pub fn parse_hhmm(s: &str) -> Result<u32> {
    let bad = || Error::MalformedInput(format!("expected HH:MM time, got `{s}`"));
    let (h, m) = s.split_once(':').ok_or_else(bad)?;
    if h.len() != 2 || m.len() != 2 {
        return Err(bad());
    }
    let h: u32 = h.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if h > 23 || m > 59 {
        return Err(bad());
    }
    Ok(h * 60 + m)
}

/// A single attribute value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Window(TimeWindow),
    Code(Arc<str>),
}

impl Value {
    pub fn code(s: &str) -> Value {
        Value::Code(Arc::from(s))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Window(w) => w.fmt(f),
            Value::Code(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeKind {
    Categorical,
    TimeWindow,
    LocationCode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    name: String,
    kind: AttributeKind,
    allowed: Option<BTreeSet<Value>>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, kind: AttributeKind) -> Self {
        Attribute {
            name: name.into(),
            kind,
            allowed: None,
        }
    }

    /// Restrict the attribute to a declared finite value set.
    pub fn with_values(mut self, values: impl IntoIterator<Item = Value>) -> Self {
        self.allowed = Some(values.into_iter().collect());
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> AttributeKind {
        self.kind
    }

    fn validate(&self, value: &Value) -> Result<()> {
        let kind_ok = match (self.kind, value) {
            (AttributeKind::TimeWindow, Value::Window(_)) => true,
            (AttributeKind::Categorical | AttributeKind::LocationCode, Value::Code(c)) => {
                !c.is_empty()
            }
            _ => false,
        };
        if !kind_ok {
            return Err(Error::SchemaMismatch(format!(
                "value `{value}` is not a valid {:?} for attribute `{}`",
                self.kind, self.name
            )));
        }
        if let Some(allowed) = &self.allowed {
            if !allowed.contains(value) {
                return Err(Error::SchemaMismatch(format!(
                    "value `{value}` is outside the declared domain of `{}`",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Ordered list of uniquely named attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSchema {
    attributes: Vec<Attribute>,
}

impl DomainSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Arc<Self>> {
        if attributes.is_empty() {
            return Err(Error::InvalidSchema(
                "a schema needs at least one attribute".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for a in &attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate attribute name `{}`",
                    a.name
                )));
            }
        }
        Ok(Arc::new(DomainSchema { attributes }))
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn arity(&self) -> usize {
        self.attributes.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn validate(&self, point: &DomainPoint) -> Result<()> {
        if point.0.len() != self.arity() {
            return Err(Error::SchemaMismatch(format!(
                "point has {} values, schema has {} attributes",
                point.0.len(),
                self.arity()
            )));
        }
        self.attributes
            .iter()
            .zip(point.0.iter())
            .try_for_each(|(a, v)| a.validate(v))
    }
}

/// An ordered tuple of values. Ordering is lexicographic over the tuple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainPoint(Vec<Value>);

impl DomainPoint {
    pub fn new(values: Vec<Value>) -> Self {
        DomainPoint(values)
    }

    pub fn values(&self) -> &[Value] {
        &self.0
    }

    pub fn project(&self, indices: &[usize]) -> DomainPoint {
        DomainPoint(indices.iter().map(|&i| self.0[i].clone()).collect())
    }
}

impl fmt::Display for DomainPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            v.fmt(f)?;
        }
        f.write_str(")")
    }
}

/// A multiset of rows under a fixed schema.
///
/// Rows keep the order they were supplied in; [`crate::sbh::canonicalize`]
/// produces the lexicographic order that releases require.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<DomainSchema>,
    rows: Vec<DomainPoint>,
}

impl Dataset {
    pub fn new(schema: Arc<DomainSchema>, rows: Vec<DomainPoint>) -> Result<Self> {
        for row in &rows {
            schema.validate(row)?;
        }
        Ok(Dataset { schema, rows })
    }

    pub fn empty(schema: Arc<DomainSchema>) -> Self {
        Dataset {
            schema,
            rows: Vec::new(),
        }
    }

    /// Rows already known to conform, e.g. projections of a validated dataset.
    pub(crate) fn from_valid_rows(schema: Arc<DomainSchema>, rows: Vec<DomainPoint>) -> Self {
        debug_assert!(rows.iter().all(|r| schema.validate(r).is_ok()));
        Dataset { schema, rows }
    }

    pub fn schema(&self) -> &Arc<DomainSchema> {
        &self.schema
    }

    pub fn rows(&self) -> &[DomainPoint] {
        &self.rows
    }

    pub(crate) fn rows_mut(&mut self) -> &mut Vec<DomainPoint> {
        &mut self.rows
    }

    pub fn into_rows(self) -> Vec<DomainPoint> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_canonical(&self) -> bool {
        self.rows.windows(2).all(|w| w[0] <= w[1])
    }

    /// Distinct points with multiplicities, in row order. Only meaningful on
    /// canonical datasets, where each distinct point forms one run.
    pub(crate) fn runs(&self) -> Runs<'_> {
        Runs {
            rows: &self.rows,
            pos: 0,
        }
    }
}

pub(crate) struct Runs<'a> {
    rows: &'a [DomainPoint],
    pos: usize,
}

impl<'a> Iterator for Runs<'a> {
    type Item = (&'a DomainPoint, u64);

    fn next(&mut self) -> Option<Self::Item> {
        let first = self.rows.get(self.pos)?;
        let len = self.rows[self.pos..]
            .iter()
            .take_while(|r| *r == first)
            .count();
        self.pos += len;
        Some((first, len as u64))
    }
}

/// A map from points to positive counts. Absent points have count zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    schema: Arc<DomainSchema>,
    entries: BTreeMap<DomainPoint, u64>,
}

impl Histogram {
    pub fn empty(schema: Arc<DomainSchema>) -> Self {
        Histogram {
            schema,
            entries: BTreeMap::new(),
        }
    }

    /// Build from `(point, count)` pairs; repeated points accumulate. Zero
    /// counts and non-conforming points are rejected.
    pub fn from_counts(
        schema: Arc<DomainSchema>,
        counts: impl IntoIterator<Item = (DomainPoint, u64)>,
    ) -> Result<Self> {
        let mut h = Histogram::empty(schema);
        for (p, c) in counts {
            if c == 0 {
                return Err(Error::MalformedInput(format!("zero count for point {p}")));
            }
            h.schema.validate(&p)?;
            *h.entries.entry(p).or_insert(0) += c;
        }
        Ok(h)
    }

    pub(crate) fn insert_positive(&mut self, point: DomainPoint, count: u64) {
        debug_assert!(count > 0);
        *self.entries.entry(point).or_insert(0) += count;
    }

    pub fn schema(&self) -> &Arc<DomainSchema> {
        &self.schema
    }

    pub fn get(&self, point: &DomainPoint) -> u64 {
        self.entries.get(point).copied().unwrap_or(0)
    }

    /// Entries in lexicographic point order.
    pub fn iter(&self) -> impl Iterator<Item = (&DomainPoint, u64)> {
        self.entries.iter().map(|(p, &c)| (p, c))
    }

    pub fn points(&self) -> impl Iterator<Item = &DomainPoint> {
        self.entries.keys()
    }

    /// Number of distinct points.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of all counts.
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    /// Row form: each point repeated `count` times, in canonical order.
    pub fn expand(&self) -> Dataset {
        let rows = self
            .entries
            .iter()
            .flat_map(|(p, &c)| std::iter::repeat_n(p.clone(), c as usize))
            .collect();
        Dataset::from_valid_rows(self.schema.clone(), rows)
    }

    /// Sum counts onto the attributes at `indices`.
    pub fn marginalize(&self, schema: Arc<DomainSchema>, indices: &[usize]) -> Histogram {
        let mut out = Histogram::empty(schema);
        for (p, &c) in &self.entries {
            out.insert_positive(p.project(indices), c);
        }
        out
    }
}
