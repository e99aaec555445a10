//! Hand-assembled SVG bar charts.

use std::fmt::Write as _;

use super::split::SplitDiff;

const WIDTH: f64 = 640.0;
const LABEL_W: f64 = 180.0;
const ROW_H: f64 = 18.0;
const TOP: f64 = 40.0;
const MARGIN: f64 = 20.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One horizontal bar per entry, drawn left (negative) or right (positive)
/// of a central zero axis. Undefined entries get a label and `n/a`.
pub fn render_bars(title: &str, diffs: &[SplitDiff]) -> String {
    let height = TOP + ROW_H * diffs.len() as f64 + MARGIN;
    let plot_w = WIDTH - LABEL_W - 2.0 * MARGIN;
    let axis_x = LABEL_W + MARGIN + plot_w / 2.0;
    let max = diffs
        .iter()
        .filter_map(|d| d.diff)
        .map(f64::abs)
        .fold(0.0, f64::max);
    let scale = if max > 0.0 { (plot_w / 2.0) / max } else { 0.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (i, d) in diffs.iter().enumerate() {
        let y = TOP + ROW_H * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            LABEL_W,
            y + ROW_H * 0.7,
            escape(&d.feature)
        );
        match d.diff {
            Some(v) => {
                let w = v.abs() * scale;
                let x = if v < 0.0 { axis_x - w } else { axis_x };
                let fill = if v < 0.0 { "#c0504d" } else { "#4f81bd" };
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="{fill}"><title>{v:.4}</title></rect>"#,
                    y + 2.0,
                    ROW_H - 4.0
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">n/a</text>"#,
                    axis_x + 4.0,
                    y + ROW_H * 0.7
                );
            }
        }
    }
    let _ = writeln!(
        s,
        r#"<line x1="{axis_x:.2}" y1="{:.1}" x2="{axis_x:.2}" y2="{:.1}" stroke="black" stroke-width="1"/>"#,
        TOP - 4.0,
        height - MARGIN + 4.0
    );
    s.push_str("</svg>\n");
    s
}
