//! Plain-text renderings of the label, reliability, performance and
//! importance tables, plus their CSV forms.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contour::FeatureGroup;
use crate::corpus::{Category, KappaReport, LabelStats};
use crate::error::{Error, Result};
use crate::explain::RankedGroup;
use crate::pipeline::ResultRow;

/// Row order of the reliability table.
pub const KAPPA_ORDER: [Category; 14] = [
    Category::Persuasive,
    Category::Courageous,
    Category::Inspiring,
    Category::JawDropping,
    Category::Fascinating,
    Category::Beautiful,
    Category::Informative,
    Category::Ingenious,
    Category::Funny,
    Category::Unconvincing,
    Category::Ok,
    Category::Confusing,
    Category::Obnoxious,
    Category::Longwinded,
];

/// Two decimals, without a sign on values that round to zero.
fn fmt2(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn opt2(v: Option<f64>) -> String {
    v.map(fmt2).unwrap_or_else(|| "-".into())
}

/// Integers print without decimals, everything else with two.
fn count(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn rule(out: &mut String, width: usize) {
    out.push_str(&"-".repeat(width));
    out.push('\n');
}

fn centered(out: &mut String, text: &str, width: usize) {
    let pad = width.saturating_sub(text.len()) / 2;
    let _ = writeln!(out, "{}{}", " ".repeat(pad), text);
}

/// Minimum, maximum and mean tag frequency per label, split into the
/// positive and the neutral/negative block.
pub fn render_label_stats(stats: &[LabelStats]) -> Result<String> {
    const W: usize = 44;
    let find = |c: Category| {
        stats.iter().find(|s| s.category == c).ok_or_else(|| {
            Error::InvalidArgument(format!("no label statistics for `{}`", c.name()))
        })
    };
    let mut out = String::new();
    rule(&mut out, W);
    let _ = writeln!(out, "{:<16}{:^28}", "", "Tag frequency");
    let _ = writeln!(
        out,
        "{:<16}{:>8}{:>10}{:>10}",
        "Label", "min", "max", "mean"
    );
    rule(&mut out, W);
    for (title, block) in [
        ("Positive", &Category::POSITIVE[..]),
        ("Neutral / Negative", &Category::NEUTRAL_NEGATIVE[..]),
    ] {
        centered(&mut out, title, W);
        rule(&mut out, W);
        for &c in block {
            let s = find(c)?;
            let _ = writeln!(
                out,
                "{:<16}{:>8}{:>10}{:>10.2}",
                c.display_name(),
                count(s.min),
                count(s.max),
                s.mean
            );
        }
        rule(&mut out, W);
    }
    Ok(out)
}

/// One reliability value per category (`None` when undefined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaRow {
    pub category: String,
    pub kappa: Option<f64>,
}

pub fn kappa_rows(report: &KappaReport) -> Vec<KappaRow> {
    KAPPA_ORDER
        .iter()
        .map(|&c| KappaRow {
            category: c.name().to_string(),
            kappa: report.get(c),
        })
        .collect()
}

/// Reliability table with an `Overall` row: the mean of the defined
/// per-category values.
pub fn render_kappa(rows: &[KappaRow]) -> Result<String> {
    const W: usize = 40;
    let mut out = String::new();
    rule(&mut out, W);
    let _ = writeln!(out, "{:<16}{:>24}", "Category", "Inter-rater reliability");
    let _ = writeln!(out, "{:<16}{:>24}", "", "(Cohen's Kappa)");
    rule(&mut out, W);
    let mut defined = Vec::new();
    for r in rows {
        let c: Category = r.category.parse()?;
        if let Some(k) = r.kappa {
            defined.push(k);
        }
        let _ = writeln!(out, "{:<16}{:>24}", c.display_name(), opt2(r.kappa));
    }
    rule(&mut out, W);
    let overall = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let _ = writeln!(out, "{:<16}{:>24}", "Overall", opt2(overall));
    rule(&mut out, W);
    Ok(out)
}

/// A performance-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub category: String,
    pub acc: f64,
    pub rec: Option<f64>,
    pub prec: Option<f64>,
    pub f1: Option<f64>,
    pub imbalanced: bool,
}

impl PerformanceRow {
    /// Picks the `mean` rows out of a cross-validation results file.
    pub fn from_results(rows: &[ResultRow]) -> Vec<Self> {
        rows.iter()
            .filter(|r| r.fold == "mean")
            .map(|r| PerformanceRow {
                category: r.category.clone(),
                acc: r.acc,
                rec: r.rec,
                prec: r.prec,
                f1: r.f1,
                imbalanced: r.imbalanced,
            })
            .collect()
    }
}

fn mean_of(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `(Total Avg, Avg)` where `Avg` leaves out imbalanced categories.
pub fn performance_averages(rows: &[PerformanceRow]) -> [[Option<f64>; 4]; 2] {
    let avg = |sel: &dyn Fn(&PerformanceRow) -> bool| {
        let r: Vec<&PerformanceRow> = rows.iter().filter(|r| sel(r)).collect();
        [
            mean_of(r.iter().map(|x| Some(x.acc))),
            mean_of(r.iter().map(|x| x.rec)),
            mean_of(r.iter().map(|x| x.prec)),
            mean_of(r.iter().map(|x| x.f1)),
        ]
    };
    [avg(&|_| true), avg(&|r| !r.imbalanced)]
}

fn label_of(category: &str) -> String {
    category
        .parse::<Category>()
        .map(|c| c.display_name().to_string())
        .unwrap_or_else(|_| category.to_string())
}

/// Performance table sorted by accuracy (descending, stable), imbalanced
/// categories starred, followed by `Total Avg` and `Avg` rows.
pub fn render_performance(rows: &[PerformanceRow]) -> String {
    const W: usize = 50;
    let mut sorted: Vec<&PerformanceRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.acc.total_cmp(&a.acc));
    let mut out = String::new();
    rule(&mut out, W);
    let _ = writeln!(
        out,
        "{:>16} {:>7} {:>7} {:>7} {:>7}",
        "Category", "Acc", "Rec", "Prec", "F1"
    );
    rule(&mut out, W);
    for r in sorted {
        let name = format!(
            "{}{}",
            label_of(&r.category),
            if r.imbalanced { "*" } else { "" }
        );
        let _ = writeln!(
            out,
            "{:>16} {:>7} {:>7} {:>7} {:>7}",
            name,
            fmt2(r.acc),
            opt2(r.rec),
            opt2(r.prec),
            opt2(r.f1)
        );
    }
    rule(&mut out, W);
    let [total, avg] = performance_averages(rows);
    for (name, v) in [("Total Avg", total), ("Avg", avg)] {
        let _ = writeln!(
            out,
            "{:>16} {:>7} {:>7} {:>7} {:>7}",
            name,
            opt2(v[0]),
            opt2(v[1]),
            opt2(v[2]),
            opt2(v[3])
        );
    }
    rule(&mut out, W);
    out.push_str("* minority:majority class ratio below 4:6; excluded from Avg\n");
    out
}

fn group_label(g: &str) -> String {
    g.parse::<FeatureGroup>()
        .map(|g| g.display_name().to_string())
        .unwrap_or_else(|_| g.to_string())
}

/// Side-by-side importance rankings, one `Group | FI` column pair per
/// category, each sorted by descending importance.
pub fn render_importance(blocks: &[(String, Vec<RankedGroup>)]) -> String {
    const CW: usize = 24;
    let width = CW * blocks.len().max(1);
    let mut out = String::new();
    rule(&mut out, width);
    centered(&mut out, "Rating category", width);
    let mut line = String::new();
    for (cat, _) in blocks {
        let _ = write!(line, "{:^CW$}", label_of(cat));
    }
    out.push_str(line.trim_end());
    out.push('\n');
    let mut line = String::new();
    for _ in blocks {
        let _ = write!(line, "{:>14}{:>10}", "Group", "FI");
    }
    out.push_str(&line);
    out.push('\n');
    rule(&mut out, width);
    let sorted: Vec<Vec<&RankedGroup>> = blocks
        .iter()
        .map(|(_, rows)| {
            let mut v: Vec<&RankedGroup> = rows.iter().collect();
            v.sort_by(|a, b| b.importance.total_cmp(&a.importance));
            v
        })
        .collect();
    let depth = sorted.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..depth {
        let mut line = String::new();
        for col in &sorted {
            match col.get(i) {
                Some(r) => {
                    let _ = write!(
                        line,
                        "{:>14}{:>10}",
                        group_label(&r.group),
                        fmt2(r.importance)
                    );
                }
                None => line.push_str(&" ".repeat(CW)),
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    rule(&mut out, width);
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.is_file() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Performance CSV including the two average rows (category `Total Avg` and
/// `Avg`, `imbalanced` false).
pub fn performance_csv_rows(rows: &[PerformanceRow]) -> Vec<PerformanceRow> {
    let mut sorted: Vec<PerformanceRow> = rows.to_vec();
    sorted.sort_by(|a, b| b.acc.total_cmp(&a.acc));
    let [total, avg] = performance_averages(rows);
    for (name, v) in [("Total Avg", total), ("Avg", avg)] {
        sorted.push(PerformanceRow {
            category: name.to_string(),
            acc: v[0].unwrap_or(f64::NAN),
            rec: v[1],
            prec: v[2],
            f1: v[3],
            imbalanced: false,
        });
    }
    sorted
}
