//! Analysis artifacts: label statistics, reliability, performance and
//! importance tables (text plus CSV), median-split differences and SVG bar
//! charts. All renderings are deterministic functions of their input.

mod split;
mod svg;
mod tables;

pub use split::{
    aggregate_subgroups, group_mean_diffs, median_split_diffs, reduce_contour, Reduction, SplitDiff,
};
pub use svg::render_bars;
pub use tables::{
    kappa_rows, performance_averages, performance_csv_rows, read_csv, render_importance,
    render_kappa, render_label_stats, render_performance, write_csv, KappaRow, PerformanceRow,
    KAPPA_ORDER,
};
