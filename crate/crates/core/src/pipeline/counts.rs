//! Converting between counts files and row-form files.
//!
//! Both directions treat every cell as an opaque string and order points
//! lexicographically over the string tuple. That matches the order release
//! output is written in, since time windows are zero-padded `HH:MM`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Columns (without `count`) and points with positive counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CountsTable {
    pub columns: Vec<String>,
    pub counts: BTreeMap<Vec<String>, u64>,
}

fn reader(r: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new().has_headers(false).from_reader(r)
}

fn flush<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::io("<output>", e.into_error()))?
        .flush()
        .map_err(|e| Error::io("<output>", e))
}

/// Parse a counts file. `None` for a zero-byte input.
pub fn read_counts(input: impl Read) -> Result<Option<CountsTable>> {
    let mut records = reader(input).into_records();
    let Some(header) = records.next().transpose()? else {
        return Ok(None);
    };
    let mut columns: Vec<String> = header.iter().map(str::to_string).collect();
    if columns.last().map(String::as_str) != Some("count") || columns.len() < 2 {
        return Err(Error::MalformedInput(
            "counts file must have at least one attribute column and a final `count` column".into(),
        ));
    }
    columns.pop();
    let mut counts = BTreeMap::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let line = i + 2;
        let (count, point) = rec
            .iter()
            .collect::<Vec<_>>()
            .split_last()
            .map(|(c, p)| {
                (
                    c.to_string(),
                    p.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                )
            })
            .unwrap_or_default();
        if point.len() != columns.len() {
            return Err(Error::MalformedInput(format!(
                "line {line}: wrong number of fields"
            )));
        }
        let n: u64 = count.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::MalformedInput(format!(
                "line {line}: count must be a positive integer, got `{count}`"
            ))
        })?;
        if counts.insert(point, n).is_some() {
            return Err(Error::MalformedInput(format!(
                "line {line}: duplicate point"
            )));
        }
    }
    Ok(Some(CountsTable { columns, counts }))
}

pub fn write_counts(table: &CountsTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = table.columns.clone();
    header.push("count".into());
    w.write_record(&header)?;
    for (p, c) in &table.counts {
        let mut rec = p.clone();
        rec.push(c.to_string());
        w.write_record(&rec)?;
    }
    flush(w)
}

/// Write each point `count` times, in lexicographic order. Returns the
/// number of rows written. A zero-byte input yields a zero-byte output.
pub fn expand_counts(input: impl Read, out: impl Write) -> Result<u64> {
    let Some(table) = read_counts(input)? else {
        return Ok(0);
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.columns)?;
    let mut rows = 0;
    for (p, &c) in &table.counts {
        for _ in 0..c {
            w.write_record(p)?;
        }
        rows += c;
    }
    flush(w)?;
    Ok(rows)
}

/// Inverse of [`expand_counts`]: count identical rows.
pub fn aggregate_rows(input: impl Read, out: impl Write) -> Result<()> {
    let mut records = reader(input).into_records();
    let Some(header) = records.next().transpose()? else {
        return Ok(());
    };
    let columns: Vec<String> = header.iter().map(str::to_string).collect();
    let mut counts = BTreeMap::new();
    for rec in records {
        let rec = rec?;
        if rec.len() != columns.len() {
            return Err(Error::MalformedInput(
                "row has the wrong number of fields".into(),
            ));
        }
        *counts
            .entry(rec.iter().map(str::to_string).collect())
            .or_insert(0u64) += 1;
    }
    write_counts(&CountsTable { columns, counts }, out)
}
