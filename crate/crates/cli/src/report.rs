//! Plain-text summary of sweep tables and backtest directories.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use ewi_core::io::{self, BacktestSummary};
use ewi_core::pipeline::{SweepRow, SweepTable};

pub const TABLE_FILES: [&str; 2] = ["sweep.csv", "summary.csv"];

fn fmt_opt(v: Option<f64>, signed: bool) -> String {
    match v {
        Some(v) if signed => format!("{v:+.3}"),
        Some(v) => format!("{v:.3}"),
        None => "-".into(),
    }
}

fn dash(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
}

/// One line per indicator, model shape and horizon; two columns (AUC PR and
/// AUC PR minus the positive rate) per alpha, and a closing positive-rate row
/// per horizon.
pub fn render_table(table: &SweepTable) -> String {
    let mut alphas: Vec<f64> = Vec::new();
    for r in &table.rows {
        if !alphas.contains(&r.alpha) {
            alphas.push(r.alpha);
        }
    }
    alphas.sort_by(f64::total_cmp);

    let mut keys: Vec<(String, Option<usize>, Option<usize>, usize)> = Vec::new();
    for r in &table.rows {
        let key = (r.indicator.to_string(), r.k, r.delta, r.horizon);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }

    let mut out = String::new();
    let _ = write!(out, "{:<10} {:>4} {:>6} {:>4}", "indicator", "k", "delta", "h");
    for a in &alphas {
        let _ = write!(out, " | {:^17}", format!("alpha = {a}"));
    }
    out.push('\n');
    let _ = write!(out, "{:<10} {:>4} {:>6} {:>4}", "", "", "", "");
    for _ in &alphas {
        let _ = write!(out, " | {:>8} {:>8}", "AUC PR", "-eps");
    }
    out.push('\n');

    let find = |key: &(String, Option<usize>, Option<usize>, usize), a: f64| -> Option<&SweepRow> {
        table
            .rows
            .iter()
            .find(|r| r.indicator.to_string() == key.0 && r.k == key.1 && r.delta == key.2 && r.horizon == key.3 && r.alpha == a)
    };
    for key in &keys {
        let _ = write!(out, "{:<10} {:>4} {:>6} {:>4}", key.0, dash(key.1), dash(key.2), key.3);
        for &a in &alphas {
            let row = find(key, a);
            let _ = write!(
                out,
                " | {:>8} {:>8}",
                fmt_opt(row.and_then(|r| r.pr_auc), false),
                fmt_opt(row.and_then(|r| r.pr_minus_epsilon), true)
            );
        }
        out.push('\n');
    }

    let horizons: BTreeSet<usize> = table.rows.iter().map(|r| r.horizon).collect();
    for h in horizons {
        let _ = write!(out, "{:<10} {:>4} {:>6} {:>4}", "eps", "", "", h);
        for &a in &alphas {
            let _ = write!(out, " | {:>8} {:>8}", fmt_opt(table.epsilon(a, h), false), "");
        }
        out.push('\n');
    }
    out
}

fn find_metrics(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_metrics(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == "metrics.json") {
            found.push(p);
        }
    }
    Ok(())
}

fn curve_len(path: &Path) -> Option<usize> {
    io::read_curve_points(path).ok().map(|p| p.len())
}

/// Summary of everything `report` understands below `dir`.
pub fn render_dir(dir: &Path) -> Result<String> {
    let mut out = String::new();
    let mut any = false;
    for name in TABLE_FILES {
        let path = dir.join(name);
        if path.is_file() {
            let table = io::read_sweep(&path)?;
            let _ = writeln!(out, "== {name} ({} rows)\n", table.rows.len());
            out.push_str(&render_table(&table));
            out.push('\n');
            any = true;
        }
    }

    let mut metrics = Vec::new();
    find_metrics(dir, &mut metrics)?;
    let backtests: Vec<(PathBuf, BacktestSummary)> =
        metrics.into_iter().filter_map(|p| io::read_json::<BacktestSummary>(&p).ok().map(|s| (p, s))).collect();
    if !backtests.is_empty() {
        let _ = writeln!(out, "== curves\n");
        let _ = writeln!(
            out,
            "{:<36} {:>8} {:>8} {:>7} {:>9} {:>9} {:>10}",
            "run", "AUC ROC", "AUC PR", "eps", "roc pts", "pr pts", "degenerate"
        );
        for (path, s) in backtests {
            let run = path.parent().unwrap_or(dir);
            let label = run.strip_prefix(dir).unwrap_or(run).display().to_string();
            let _ = writeln!(
                out,
                "{:<36} {:>8} {:>8} {:>7.3} {:>9} {:>9} {:>10}",
                if label.is_empty() { ".".into() } else { label },
                fmt_opt(s.roc_auc, false),
                fmt_opt(s.pr_auc, false),
                s.epsilon,
                dash(curve_len(&run.join("roc.csv"))),
                dash(curve_len(&run.join("pr.csv"))),
                s.degenerate_folds.len()
            );
        }
        any = true;
    }
    if !any {
        bail!(crate::MissingData(dir.join("sweep.csv")));
    }
    Ok(out)
}
