//! Base / +Valid / +Valid+CL grid definitions and summary tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eval::EvalReport;
use crate::trainer::TrainConfig;

/// Grid rows in display order: name, uses the validator, uses the
/// contrastive term.
pub const GRID: [(&str, bool, bool); 3] = [("base", false, false), ("valid", true, false), ("valid_cl", true, true)];

/// Default k values for the grid columns.
pub const DEFAULT_KS: [usize; 5] = [6, 9, 12, 15, 18];

/// `base` with the seed set and the disabled terms zeroed.
pub fn cell_config(base: &TrainConfig, seed: u64, validator: bool, contrastive: bool) -> TrainConfig {
    TrainConfig {
        seed,
        alpha: if validator { base.alpha } else { 0.0 },
        beta: if contrastive { base.beta } else { 0.0 },
        ..base.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config: String,
    pub k: usize,
    pub seed: u64,
    pub f1: f64,
    pub mention_f1: f64,
    pub longtail_f1: f64,
    pub avg_mention_tokens: f64,
    pub train_sentences: usize,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
}

impl CellResult {
    pub fn from_report(config: &str, k: usize, seed: u64, report: &EvalReport) -> Self {
        Self {
            config: config.into(),
            k,
            seed,
            f1: report.f1,
            mention_f1: report.mention.f1,
            longtail_f1: report.longtail.f1,
            avg_mention_tokens: report.avg_mention_tokens,
            train_sentences: 0,
            best_epoch: None,
            epochs_run: 0,
        }
    }
}

/// Mean and sample standard deviation; zeros for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn select<'a>(results: &'a [CellResult], config: &'a str, k: usize) -> impl Iterator<Item = &'a CellResult> {
    results.iter().filter(move |r| r.config == config && r.k == k)
}

/// Mean of `metric` over seeds for one grid cell.
pub fn cell_mean(results: &[CellResult], config: &str, k: usize, metric: fn(&CellResult) -> f64) -> f64 {
    let xs: Vec<f64> = select(results, config, k).map(metric).collect();
    mean_std(&xs).0
}

/// Markdown tables with one row per grid config and one column per k. Cells
/// hold the mean and sample standard deviation over seeds. A final line
/// reports the F1 ordering of the rows at each k.
pub fn summarize(results: &[CellResult], ks: &[usize]) -> String {
    let mut s = String::new();
    let metrics: [(&str, fn(&CellResult) -> f64, f64); 3] = [
        ("Entity micro-F1 (%)", |r| r.f1, 100.0),
        ("Long-tail F1 (%)", |r| r.longtail_f1, 100.0),
        ("Mean predicted mention length (tokens)", |r| r.avg_mention_tokens, 1.0),
    ];
    for (title, get, scale) in metrics {
        writeln!(s, "## {title}\n").unwrap();
        let header: Vec<String> = ks.iter().map(|k| format!("k={k}")).collect();
        writeln!(s, "| config | {} |", header.join(" | ")).unwrap();
        writeln!(s, "|---|{}", "---|".repeat(ks.len())).unwrap();
        for (name, _, _) in GRID {
            let cells: Vec<String> = ks
                .iter()
                .map(|&k| {
                    let xs: Vec<f64> = select(results, name, k).map(|r| scale * get(r)).collect();
                    let (m, sd) = mean_std(&xs);
                    format!("{m:.2} ± {sd:.2}")
                })
                .collect();
            writeln!(s, "| {name} | {} |", cells.join(" | ")).unwrap();
        }
        writeln!(s).unwrap();
    }
    writeln!(s, "## F1 ordering\n").unwrap();
    for &k in ks {
        let mut rows: Vec<(&str, f64)> = GRID.iter().map(|g| (g.0, cell_mean(results, g.0, k, |r| r.f1))).collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1));
        let order: Vec<&str> = rows.iter().map(|r| r.0).collect();
        writeln!(s, "- k={k}: {}", order.join(" > ")).unwrap();
    }
    s
}
