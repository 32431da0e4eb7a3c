//! Plot-data tables: a leading `x` column, then one column per series.

use std::fmt::Write as _;

use super::metrics::to_db;
use super::report::EvalReport;
use super::serve::ServeLog;

fn ordered<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

fn series_name(r: &EvalReport) -> String {
    format!("{}/{}", r.model, r.test_set)
}

/// Mean NMSE in dB per cell (rows) and model/test set (columns).
pub fn sweep_plot_data(reports: &[EvalReport]) -> String {
    let cells = ordered(reports.iter().map(|r| r.cell.clone()));
    let series = ordered(reports.iter().map(series_name));
    let mut s = format!("x,{}\n", series.join(","));
    for c in &cells {
        s.push_str(c);
        for name in &series {
            let v = reports
                .iter()
                .find(|r| &r.cell == c && &series_name(r) == name)
                .map(|r| r.nmse_db);
            match v {
                Some(v) => {
                    let _ = write!(s, ",{v:.6}");
                }
                None => s.push_str(",nan"),
            }
        }
        s.push('\n');
    }
    s
}

/// Empirical CDFs of per-sample NMSE in dB on a shared grid: each series
/// column holds the fraction of its samples at or below `x`.
pub fn cdf_plot_data(reports: &[EvalReport]) -> String {
    let sorted: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| {
            let mut v: Vec<f64> = r.per_sample.iter().map(|&x| to_db(x)).collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let mut grid: Vec<f64> = sorted.iter().flatten().copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let names: Vec<String> = reports.iter().map(|r| format!("{}/{}", series_name(r), r.cell)).collect();
    let mut s = format!("x,{}\n", names.join(","));
    for x in grid {
        let _ = write!(s, "{x:.6}");
        for v in &sorted {
            let below = v.partition_point(|&y| y <= x);
            let _ = write!(s, ",{:.6}", below as f64 / v.len().max(1) as f64);
        }
        s.push('\n');
    }
    s
}

/// Per-slot NMSE in dB, one column per log.
pub fn serve_plot_data(logs: &[ServeLog]) -> String {
    let names: Vec<String> = logs.iter().map(|l| format!("{}/{}", l.model, l.mode)).collect();
    let slots = ordered(logs.iter().flat_map(|l| l.rows.iter().map(|r| r.slot)));
    let mut s = format!("x,{}\n", names.join(","));
    for slot in slots {
        let _ = write!(s, "{slot}");
        for l in logs {
            match l.rows.iter().find(|r| r.slot == slot) {
                Some(r) => {
                    let _ = write!(s, ",{:.6}", to_db(r.nmse));
                }
                None => s.push_str(",nan"),
            }
        }
        s.push('\n');
    }
    s
}
