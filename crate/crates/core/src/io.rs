//! On-disk formats.
//!
//! Matrices are stored as three text files sharing a stem: `<stem>.csv`
//! holds the values (one matrix row per line, no header), `<stem>.rows` the
//! row labels and `<stem>.cols` the column labels, one per line. Floats are
//! written in shortest round-trip form, so a write/read cycle is lossless.
//!
//! Days are integers counted from 1970-01-01; OHLC files may use ISO dates
//! instead and are aligned on the same calendar.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{Curve, CurvePoint, FoldMetrics};
use crate::indicator::{EwiModel, EwiParams, SvdLrModel, SvdLrParams};
use crate::ledger::{EvolutionMatrix, TransactionEvent};
use crate::pipeline::{BacktestResult, IndicatorKind, SweepRow, SweepTable};
use crate::synth::SynthData;
use crate::volatility::{GroundTruthLabels, OhlcBar};

pub const MATRIX_STEM: &str = "X";
pub const OHLC_FILE: &str = "ohlc.csv";
pub const MODEL_FORMAT: &str = "ewi-model";
pub const MODEL_VERSION: u32 = 1;

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}:{line}: {msg}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// One transaction per line as JSON; blank lines are skipped.
pub fn read_ledger(path: &Path) -> Result<Vec<TransactionEvent>> {
    let reader = BufReader::new(open(path)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?);
    }
    Ok(events)
}

pub fn write_ledger(path: &Path, events: &[TransactionEvent]) -> Result<()> {
    let mut out = create(path)?;
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn stem_path(dir: &Path, stem: &str, ext: &str) -> PathBuf {
    dir.join(format!("{stem}.{ext}"))
}

fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut out = create(path)?;
    for l in lines {
        writeln!(out, "{}", l.as_ref())?;
    }
    out.flush()?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    BufReader::new(open(path)?).lines().map(|l| l.map_err(Error::from)).collect()
}

/// Writes `<stem>.csv`, `<stem>.rows` and `<stem>.cols` under `dir`.
pub fn write_matrix<R: AsRef<str>, C: AsRef<str>>(
    dir: &Path,
    stem: &str,
    m: &DMatrix<f64>,
    row_labels: &[R],
    col_labels: &[C],
) -> Result<()> {
    if row_labels.len() != m.nrows() || col_labels.len() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{stem}: {}x{} matrix with {} row and {} column labels",
            m.nrows(),
            m.ncols(),
            row_labels.len(),
            col_labels.len()
        )));
    }
    let mut out = create(&stem_path(dir, stem, "csv"))?;
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    write_lines(&stem_path(dir, stem, "rows"), row_labels)?;
    write_lines(&stem_path(dir, stem, "cols"), col_labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledMatrix {
    pub values: DMatrix<f64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

pub fn read_matrix(dir: &Path, stem: &str) -> Result<LabelledMatrix> {
    let row_labels = read_lines(&stem_path(dir, stem, "rows"))?;
    let col_labels = read_lines(&stem_path(dir, stem, "cols"))?;
    let path = stem_path(dir, stem, "csv");
    let lines = read_lines(&path)?;
    if lines.len() != row_labels.len() {
        return Err(parse_err(&path, lines.len(), format!("{} value rows but {} row labels", lines.len(), row_labels.len())));
    }
    let mut data = Vec::with_capacity(row_labels.len() * col_labels.len());
    for (i, line) in lines.iter().enumerate() {
        let before = data.len();
        if !line.is_empty() {
            for field in line.split(',') {
                data.push(field.trim().parse::<f64>().map_err(|e| parse_err(&path, i + 1, format!("{field:?}: {e}")))?);
            }
        }
        if data.len() - before != col_labels.len() {
            return Err(parse_err(&path, i + 1, format!("expected {} values", col_labels.len())));
        }
    }
    let values = DMatrix::from_row_slice(row_labels.len(), col_labels.len(), &data);
    Ok(LabelledMatrix { values, row_labels, col_labels })
}

fn parse_days(path: &Path, labels: &[String]) -> Result<Vec<i64>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, s)| s.trim().parse::<i64>().map_err(|e| parse_err(path, i + 1, format!("day {s:?}: {e}"))))
        .collect()
}

pub fn write_evolution(dir: &Path, x: &EvolutionMatrix) -> Result<()> {
    let cols: Vec<String> = x.days.iter().map(i64::to_string).collect();
    write_matrix(dir, MATRIX_STEM, &x.values, &x.row_labels, &cols)
}

pub fn read_evolution(dir: &Path) -> Result<EvolutionMatrix> {
    let m = read_matrix(dir, MATRIX_STEM)?;
    let days = parse_days(&stem_path(dir, MATRIX_STEM, "cols"), &m.col_labels)?;
    EvolutionMatrix::new(m.values, m.row_labels, days)
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")
}

/// Day index of an ISO `YYYY-MM-DD` date or of a plain integer.
pub fn parse_day(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(d) = s.parse::<i64>() {
        return Ok(d);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| (d - epoch()).num_days())
        .map_err(|e| Error::Parse(format!("date {s:?}: {e}")))
}

pub fn format_day(day: i64) -> String {
    epoch()
        .checked_add_signed(chrono::Duration::days(day))
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| day.to_string())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn header_index(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| parse_err(path, 1, format!("missing column {name:?}")))
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, idx: usize, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(idx).unwrap_or("");
    raw.parse::<T>().map_err(|e| parse_err(path, line, format!("{raw:?}: {e}")))
}

/// Columns `date, open, high, low, close` (extra columns ignored), sorted by day.
pub fn read_ohlc(path: &Path) -> Result<Vec<OhlcBar>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = ["date", "open", "high", "low", "close"]
        .iter()
        .map(|n| header_index(path, &headers, n))
        .collect::<Result<_>>()?;
    let mut bars = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let day = parse_day(rec.get(idx[0]).unwrap_or("")).map_err(|e| parse_err(path, line, e))?;
        let bar = OhlcBar {
            day,
            open: field(path, &rec, idx[1], line)?,
            high: field(path, &rec, idx[2], line)?,
            low: field(path, &rec, idx[3], line)?,
            close: field(path, &rec, idx[4], line)?,
        };
        bar.validate().map_err(|e| parse_err(path, line, e))?;
        bars.push(bar);
    }
    bars.sort_by_key(|b| b.day);
    Ok(bars)
}

pub fn write_ohlc(path: &Path, bars: &[OhlcBar]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["date", "open", "high", "low", "close"])?;
    for b in bars {
        w.write_record([format_day(b.day), b.open.to_string(), b.high.to_string(), b.low.to_string(), b.close.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `day,<name>` file.
pub fn write_day_values(path: &Path, name: &str, days: &[i64], values: &[f64]) -> Result<()> {
    if days.len() != values.len() {
        return Err(Error::Dimension(format!("{} days for {} values", days.len(), values.len())));
    }
    let mut w = csv_writer(path)?;
    w.write_record(["day", name])?;
    for (d, v) in days.iter().zip(values) {
        w.write_record([d.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `day,<value>` file; the value column is the second one.
pub fn read_day_values(path: &Path) -> Result<(Vec<i64>, Vec<f64>)> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let day = header_index(path, &headers, "day")?;
    let value = if day == 0 { 1 } else { 0 };
    let (mut days, mut values) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        days.push(parse_day(rec.get(day).unwrap_or("")).map_err(|e| parse_err(path, i + 2, e))?);
        values.push(field(path, &rec, value, i + 2)?);
    }
    Ok((days, values))
}

/// Defined labels as `day,label` with 0/1 values.
pub fn write_labels(path: &Path, labels: &GroundTruthLabels) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["day", "label"])?;
    for (d, l) in labels.iter_defined() {
        w.write_record([d.to_string(), u8::from(l).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<(i64, bool)>> {
    let (days, values) = read_day_values(path)?;
    days.into_iter()
        .zip(values)
        .enumerate()
        .map(|(i, (d, v))| match v {
            0.0 => Ok((d, false)),
            1.0 => Ok((d, true)),
            v => Err(parse_err(path, i + 2, format!("label must be 0 or 1, got {v}"))),
        })
        .collect()
}

pub fn write_curve(path: &Path, curve: &Curve) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["threshold", "x", "y"])?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.x.to_string(), p.y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_points(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut rdr = csv_reader(path)?;
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        points.push(CurvePoint {
            threshold: field(path, &rec, 0, i + 2)?,
            x: field(path, &rec, 1, i + 2)?,
            y: field(path, &rec, 2, i + 2)?,
        });
    }
    Ok(points)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(open(path)?))?)
}

/// Row-major dense matrix as stored in model archives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixRecord {
    fn from(m: &DMatrix<f64>) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: m.transpose().as_slice().to_vec() }
    }
}

impl MatrixRecord {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Parse(format!("{}x{} matrix with {} values", self.rows, self.cols, self.data.len())));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    NmfNlr {
        params: EwiParams,
        w: MatrixRecord,
        coef: MatrixRecord,
        history: MatrixRecord,
    },
    SvdLr {
        params: SvdLrParams,
        basis: MatrixRecord,
        coef: Vec<f64>,
        intercept: f64,
        feature_mean: Vec<f64>,
        feature_scale: Vec<f64>,
        history: MatrixRecord,
    },
}

/// Self-describing model file: format tag, version, training window and the
/// row labels the basis is aligned to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub format: String,
    pub version: u32,
    pub train_days: (i64, i64),
    pub row_labels: Vec<String>,
    pub model: ModelBody,
}

impl ModelArchive {
    pub fn from_ewi(m: &EwiModel, row_labels: Vec<String>) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            train_days: m.train_days,
            row_labels,
            model: ModelBody::NmfNlr {
                params: m.params,
                w: (&m.w).into(),
                coef: (&m.coef).into(),
                history: (&m.history).into(),
            },
        }
    }

    pub fn from_svd_lr(m: &SvdLrModel, row_labels: Vec<String>) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            train_days: m.train_days,
            row_labels,
            model: ModelBody::SvdLr {
                params: m.params,
                basis: (&m.basis).into(),
                coef: m.coef.as_slice().to_vec(),
                intercept: m.intercept,
                feature_mean: m.feature_mean.as_slice().to_vec(),
                feature_scale: m.feature_scale.as_slice().to_vec(),
                history: (&m.history).into(),
            },
        }
    }

    pub fn kind(&self) -> IndicatorKind {
        match self.model {
            ModelBody::NmfNlr { .. } => IndicatorKind::NmfNlr,
            ModelBody::SvdLr { .. } => IndicatorKind::SvdLr,
        }
    }

    pub fn to_ewi(&self) -> Result<EwiModel> {
        match &self.model {
            ModelBody::NmfNlr { params, w, coef, history } => Ok(EwiModel {
                params: *params,
                w: w.to_matrix()?,
                coef: coef.to_matrix()?,
                history: history.to_matrix()?,
                train_days: self.train_days,
            }),
            ModelBody::SvdLr { .. } => Err(Error::InvalidInput("archive holds an svd_lr model".into())),
        }
    }

    pub fn to_svd_lr(&self) -> Result<SvdLrModel> {
        match &self.model {
            ModelBody::SvdLr { params, basis, coef, intercept, feature_mean, feature_scale, history } => {
                Ok(SvdLrModel {
                    params: *params,
                    basis: basis.to_matrix()?,
                    coef: coef.clone().into(),
                    intercept: *intercept,
                    feature_mean: feature_mean.clone().into(),
                    feature_scale: feature_scale.clone().into(),
                    history: history.to_matrix()?,
                    train_days: self.train_days,
                })
            }
            ModelBody::NmfNlr { .. } => Err(Error::InvalidInput("archive holds an nmf_nlr model".into())),
        }
    }
}

pub fn write_model(path: &Path, archive: &ModelArchive) -> Result<()> {
    write_json(path, archive)
}

pub fn read_model(path: &Path) -> Result<ModelArchive> {
    let archive: ModelArchive = read_json(path)?;
    if archive.format != MODEL_FORMAT {
        return Err(Error::Parse(format!("{}: not a model archive (format {:?})", path.display(), archive.format)));
    }
    if archive.version != MODEL_VERSION {
        return Err(Error::Parse(format!("{}: unsupported model version {}", path.display(), archive.version)));
    }
    Ok(archive)
}

/// Finite-valued summary of a backtest, written as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub indicator: IndicatorKind,
    pub alpha: f64,
    pub horizon: usize,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub epsilon: f64,
    pub pooled_epsilon: Option<f64>,
    pub n_total: usize,
    pub n_pooled: usize,
    pub degenerate_folds: Vec<usize>,
    pub max_day_touched: Vec<Option<i64>>,
    pub per_fold: Vec<FoldMetrics>,
}

impl From<&BacktestResult> for BacktestSummary {
    fn from(r: &BacktestResult) -> Self {
        Self {
            indicator: r.kind,
            alpha: r.alpha,
            horizon: r.horizon,
            roc_auc: r.pooled.roc_auc(),
            pr_auc: r.pooled.pr_auc(),
            epsilon: r.pooled.epsilon,
            pooled_epsilon: r.pooled.pooled_epsilon,
            n_total: r.pooled.n_total,
            n_pooled: r.pooled.n_pooled,
            degenerate_folds: r.pooled.degenerate_folds(),
            max_day_touched: r.folds.iter().map(|f| f.max_day_touched).collect(),
            per_fold: r.pooled.per_fold.clone(),
        }
    }
}

/// Writes `folds/fold_NNN.csv`, `roc.csv`, `pr.csv` and `metrics.json`
/// under `dir`; returns the written paths relative to `dir`.
pub fn write_backtest(dir: &Path, result: &BacktestResult) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for f in &result.folds {
        let rel = PathBuf::from("folds").join(format!("fold_{:03}.csv", f.fold.index));
        let mut w = csv_writer(&dir.join(&rel))?;
        w.write_record(["day", "score", "label"])?;
        for i in 0..f.scored.len() {
            w.write_record([
                f.scored.days[i].to_string(),
                f.scored.scores[i].to_string(),
                u8::from(f.scored.labels[i]).to_string(),
            ])?;
        }
        w.flush()?;
        written.push(rel);
    }
    for (name, curve) in [("roc.csv", &result.pooled.roc), ("pr.csv", &result.pooled.pr)] {
        if let Some(c) = curve {
            write_curve(&dir.join(name), c)?;
            written.push(name.into());
        }
    }
    write_json(&dir.join("metrics.json"), &BacktestSummary::from(result))?;
    written.push("metrics.json".into());
    Ok(written)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

const SWEEP_HEADER: [&str; 11] = [
    "indicator",
    "alpha",
    "horizon",
    "k",
    "delta",
    "pr_auc",
    "roc_auc",
    "epsilon",
    "pooled_epsilon",
    "pr_minus_epsilon",
    "degenerate_folds",
];

pub fn write_sweep(path: &Path, table: &SweepTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in &table.rows {
        w.write_record([
            r.indicator.to_string(),
            r.alpha.to_string(),
            r.horizon.to_string(),
            opt(r.k),
            opt(r.delta),
            opt(r.pr_auc),
            opt(r.roc_auc),
            r.epsilon.to_string(),
            opt(r.pooled_epsilon),
            opt(r.pr_minus_epsilon),
            r.degenerate_folds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt_field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, idx: usize, line: usize) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match rec.get(idx) {
        None | Some("") => Ok(None),
        Some(_) => field(path, rec, idx, line).map(Some),
    }
}

pub fn read_sweep(path: &Path) -> Result<SweepTable> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = SWEEP_HEADER.iter().map(|n| header_index(path, &headers, n)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        rows.push(SweepRow {
            indicator: field(path, &rec, idx[0], line)?,
            alpha: field(path, &rec, idx[1], line)?,
            horizon: field(path, &rec, idx[2], line)?,
            k: opt_field(path, &rec, idx[3], line)?,
            delta: opt_field(path, &rec, idx[4], line)?,
            pr_auc: opt_field(path, &rec, idx[5], line)?,
            roc_auc: opt_field(path, &rec, idx[6], line)?,
            epsilon: field(path, &rec, idx[7], line)?,
            pooled_epsilon: opt_field(path, &rec, idx[8], line)?,
            pr_minus_epsilon: opt_field(path, &rec, idx[9], line)?,
            degenerate_folds: field(path, &rec, idx[10], line)?,
        });
    }
    Ok(SweepTable { rows })
}

/// Matrix and OHLC in pipeline format, ground truth under `truth/`.
pub fn write_synth(dir: &Path, data: &SynthData) -> Result<()> {
    write_evolution(dir, &data.x)?;
    write_ohlc(&dir.join(OHLC_FILE), &data.bars)?;
    let truth = dir.join("truth");
    let k = data.w_true.ncols();
    let factors: Vec<String> = (0..k).map(|j| format!("f{j}")).collect();
    let days: Vec<String> = data.x.days.iter().map(i64::to_string).collect();
    let lags: Vec<String> = (0..data.coupling.ncols()).map(|l| format!("lag{l}")).collect();
    write_matrix(&truth, "W", &data.w_true, &data.x.row_labels, &factors)?;
    write_matrix(&truth, "H", &data.h_true, &factors, &days)?;
    write_matrix(&truth, "coupling", &data.coupling, &factors, &lags)?;
    write_day_values(&truth.join("sigma.csv"), "sigma", &data.x.days, &data.sigma)
}
