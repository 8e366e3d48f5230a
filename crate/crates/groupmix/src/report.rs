//! Report emission: metrics tables as CSV and bar/line plots as
//! self-generated SVG. Output bytes are a pure function of the inputs.

use std::path::Path;

use crate::data::GroupId;
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::textfmt::fmt6;
use crate::train::RunHistory;

/// One row of the comparison table.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub method: String,
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// Fixed-schema CSV: `method,seed,avg_acc,worst_acc`, one `acc_g_{c}_{y}`
/// column per group in lexicographic order, then the group-weighted average
/// as a secondary column. Row order follows the input.
pub fn metrics_csv(rows: &[ReportRow], groups: &[GroupId]) -> String {
    let mut out = String::from("method,seed,avg_acc,worst_acc");
    for g in groups {
        out.push_str(&format!(",acc_g_{}_{}", g.c, g.y));
    }
    out.push_str(",group_weighted_avg_acc\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}",
            row.method,
            row.seed,
            fmt6(row.metrics.average_accuracy),
            fmt6(row.metrics.worst_group_accuracy)
        ));
        for g in groups {
            let acc = row
                .metrics
                .per_group_accuracy
                .iter()
                .find(|(gid, _)| gid == g)
                .map(|&(_, a)| a)
                .unwrap_or(f64::NAN);
            out.push_str(&format!(",{}", fmt6(acc)));
        }
        out.push_str(&format!(",{}\n", fmt6(row.metrics.group_weighted_accuracy)));
    }
    out
}

/// Write the comparison CSV plus a worst/average bar plot and, when
/// histories are supplied, a validation worst-group line plot per method.
pub fn emit_report(
    rows: &[ReportRow],
    histories: &[(String, u64, RunHistory)],
    groups: &[GroupId],
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("metrics.csv");
    std::fs::write(&csv_path, metrics_csv(rows, groups)).map_err(|e| Error::io(&csv_path, e))?;

    let bar_path = dir.join("accuracy_bars.svg");
    std::fs::write(&bar_path, accuracy_bar_svg(rows)).map_err(|e| Error::io(&bar_path, e))?;

    if !histories.is_empty() {
        let line_path = dir.join("val_worst_curves.svg");
        std::fs::write(&line_path, history_line_svg(histories))
            .map_err(|e| Error::io(&line_path, e))?;
    }
    Ok(())
}

fn svg_header(width: usize, height: usize) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"11\">\n"
    )
}

const PALETTE: [&str; 8] = [
    "#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb", "#000000",
];

/// Mean worst-group and average accuracy per method, as paired bars.
pub fn accuracy_bar_svg(rows: &[ReportRow]) -> String {
    // Aggregate to per-method means, preserving first-appearance order.
    let mut methods: Vec<String> = Vec::new();
    for row in rows {
        if !methods.contains(&row.method) {
            methods.push(row.method.clone());
        }
    }
    let mut means: Vec<(String, f64, f64)> = Vec::new();
    for m in &methods {
        let group: Vec<&ReportRow> = rows.iter().filter(|r| &r.method == m).collect();
        let n = group.len() as f64;
        let avg = group.iter().map(|r| r.metrics.average_accuracy).sum::<f64>() / n;
        let worst = group
            .iter()
            .map(|r| r.metrics.worst_group_accuracy)
            .sum::<f64>()
            / n;
        means.push((m.clone(), avg, worst));
    }

    let (w, h, margin, plot_h) = (80 + means.len() * 90, 320, 50.0, 240.0);
    let mut svg = svg_header(w, h);
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for tick in 0..=10 {
        let y = margin + plot_h - plot_h * tick as f64 / 10.0;
        svg.push_str(&format!(
            "<line x1=\"40\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n",
            w - 20
        ));
        svg.push_str(&format!(
            "<text x=\"8\" y=\"{:.1}\">{:.1}</text>\n",
            y + 4.0,
            tick as f64 / 10.0
        ));
    }
    for (i, (method, avg, worst)) in means.iter().enumerate() {
        let x0 = 60.0 + i as f64 * 90.0;
        let avg_h = plot_h * avg;
        let worst_h = plot_h * worst;
        svg.push_str(&format!(
            "<rect x=\"{x0:.1}\" y=\"{:.1}\" width=\"30\" height=\"{avg_h:.1}\" fill=\"{}\"/>\n",
            margin + plot_h - avg_h,
            PALETTE[0]
        ));
        svg.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"30\" height=\"{worst_h:.1}\" fill=\"{}\"/>\n",
            x0 + 34.0,
            margin + plot_h - worst_h,
            PALETTE[1]
        ));
        svg.push_str(&format!(
            "<text x=\"{x0:.1}\" y=\"{:.1}\">{method}</text>\n",
            margin + plot_h + 16.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"60\" y=\"20\" fill=\"{}\">average</text>\n",
        PALETTE[0]
    ));
    svg.push_str(&format!(
        "<text x=\"140\" y=\"20\" fill=\"{}\">worst-group</text>\n",
        PALETTE[1]
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Validation worst-group accuracy per epoch, one polyline per (method, seed).
pub fn history_line_svg(histories: &[(String, u64, RunHistory)]) -> String {
    let (w, h) = (640, 360);
    let (x0, y0, plot_w, plot_h) = (50.0, 30.0, 560.0, 280.0);
    let max_epoch = histories
        .iter()
        .flat_map(|(_, _, hist)| hist.epochs.last().map(|e| e.epoch))
        .max()
        .unwrap_or(1) as f64;
    let mut svg = svg_header(w, h);
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for tick in 0..=10 {
        let y = y0 + plot_h - plot_h * tick as f64 / 10.0;
        svg.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n",
            x0 + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"8\" y=\"{:.1}\">{:.1}</text>\n",
            y + 4.0,
            tick as f64 / 10.0
        ));
    }
    let mut seen: Vec<String> = Vec::new();
    for (method, _seed, hist) in histories {
        let idx = match seen.iter().position(|m| m == method) {
            Some(i) => i,
            None => {
                seen.push(method.clone());
                let color = seen.len() - 1;
                svg.push_str(&format!(
                    "<text x=\"{:.1}\" y=\"20\" fill=\"{}\">{method}</text>\n",
                    x0 + 90.0 * color as f64,
                    PALETTE[color % PALETTE.len()]
                ));
                color
            }
        };
        let mut points = String::new();
        for e in &hist.epochs {
            if let Some(worst) = e.val_worst_acc {
                let x = x0 + plot_w * (e.epoch as f64 - 1.0) / (max_epoch - 1.0).max(1.0);
                let y = y0 + plot_h - plot_h * worst;
                points.push_str(&format!("{x:.1},{y:.1} "));
            }
        }
        if !points.is_empty() {
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                PALETTE[idx % PALETTE.len()],
                points.trim_end()
            ));
        }
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\">epoch</text>\n",
        x0 + plot_w / 2.0,
        y0 + plot_h + 30.0
    ));
    svg.push_str("</svg>\n");
    svg
}
