//! CSV forms of the per-speech tables passed between pipeline stages.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Category, CountTable, LabelStats, Topic, NUM_CATEGORIES};
use crate::error::{Error, Result};

/// `id` followed by one column per category (canonical names).
pub fn write_count_table(path: &Path, table: &CountTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(Category::ALL.iter().map(|c| c.name().to_string()));
    w.write_record(&header)?;
    for (id, row) in table.ids().iter().zip(table.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_count_table`]. Columns may come in any
/// order but every category must be present.
pub fn read_count_table(path: &Path) -> Result<CountTable> {
    if !path.is_file() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let loc = |line: usize| format!("{} line {line}", path.display());
    if header.get(0) != Some("id") {
        return Err(Error::parse(loc(1), "first column must be `id`"));
    }
    let mut cols = [usize::MAX; NUM_CATEGORIES];
    for (k, name) in header.iter().enumerate().skip(1) {
        let c: Category = name.parse()?;
        cols[c.index()] = k;
    }
    if let Some(j) = cols.iter().position(|&k| k == usize::MAX) {
        return Err(Error::parse(
            loc(1),
            format!("missing column `{}`", Category::ALL[j].name()),
        ));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        let mut row = [0.0; NUM_CATEGORIES];
        for j in 0..NUM_CATEGORIES {
            let s = &rec[cols[j]];
            row[j] = s
                .parse()
                .map_err(|_| Error::parse(loc(i + 2), format!("bad number `{s}`")))?;
        }
        rows.push(row);
    }
    CountTable::new(ids, rows)
}

/// `id,topic` rows.
pub fn write_topics(path: &Path, topics: &BTreeMap<String, Topic>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "topic"])?;
    for (id, t) in topics {
        w.write_record([id.as_str(), &t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_topics(path: &Path) -> Result<BTreeMap<String, Topic>> {
    if !path.is_file() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::parse(
                path.display().to_string(),
                "expected `id,topic` rows",
            ));
        }
        out.insert(rec[0].to_string(), rec[1].parse()?);
    }
    Ok(out)
}

pub fn write_label_stats(path: &Path, stats: &[LabelStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["category", "min", "max", "mean"])?;
    for s in stats {
        w.write_record([
            s.category.name().to_string(),
            s.min.to_string(),
            s.max.to_string(),
            s.mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_label_stats(path: &Path) -> Result<Vec<LabelStats>> {
    if !path.is_file() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| {
                Error::parse(
                    path.display().to_string(),
                    format!("bad number `{}`", &rec[k]),
                )
            })
        };
        out.push(LabelStats {
            category: rec[0].parse()?,
            min: num(1)?,
            max: num(2)?,
            mean: num(3)?,
        });
    }
    Ok(out)
}
