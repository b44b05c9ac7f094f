//! Garman-Klass daily volatility and extreme-event labelling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight of the squared log open-close return: `2 ln 2 - 1`.
pub const CLOSE_WEIGHT: f64 = 2.0 * std::f64::consts::LN_2 - 1.0;

/// Guaranteed fraction of `ln(H/L)^2` left in the variance: `1.5 - 2 ln 2`.
pub const VARIANCE_LOWER_BOUND: f64 = 1.5 - 2.0 * std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcBar {
    pub day: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl OhlcBar {
    pub fn validate(&self) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::InvalidInput(format!("day {}: prices must be finite and > 0", self.day)));
        }
        if self.low > self.open.min(self.close) || self.high < self.open.max(self.close) {
            return Err(Error::InvalidInput(format!(
                "day {}: low/high do not bracket open and close",
                self.day
            )));
        }
        Ok(())
    }
}

/// `sigma^2 = 0.5 ln(H/L)^2 - (2 ln 2 - 1) ln(C/O)^2`.
pub fn garman_klass_variance(bar: &OhlcBar) -> Result<f64> {
    bar.validate()?;
    let range = (bar.high / bar.low).ln();
    let ret = (bar.close / bar.open).ln();
    Ok(0.5 * range * range - CLOSE_WEIGHT * ret * ret)
}

/// Garman-Klass daily volatility `sigma`.
///
/// The variance is non-negative for any valid bar; the clamp only absorbs
/// rounding when high equals low.
pub fn garman_klass(bar: &OhlcBar) -> Result<f64> {
    Ok(garman_klass_variance(bar)?.max(0.0).sqrt())
}

/// Day-indexed volatility; `None` marks a day without a price bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilitySeries {
    pub start_day: i64,
    pub values: Vec<Option<f64>>,
}

impl VolatilitySeries {
    pub fn from_values(start_day: i64, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("volatility must be finite and >= 0".into()));
        }
        Ok(Self { start_day, values: values.into_iter().map(Some).collect() })
    }

    /// Builds the series from bars in any order; days without a bar become
    /// gaps.
    pub fn from_bars(bars: &[OhlcBar]) -> Result<Self> {
        let Some(start_day) = bars.iter().map(|b| b.day).min() else {
            return Err(Error::InvalidInput("no price bars".into()));
        };
        let end_day = bars.iter().map(|b| b.day).max().unwrap_or(start_day);
        let mut values = vec![None; (end_day - start_day + 1) as usize];
        for bar in bars {
            let slot = &mut values[(bar.day - start_day) as usize];
            if slot.is_some() {
                return Err(Error::InvalidInput(format!("duplicate bar for day {}", bar.day)));
            }
            *slot = Some(garman_klass(bar)?);
        }
        Ok(Self { start_day, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Last covered day (inclusive).
    pub fn end_day(&self) -> i64 {
        self.start_day + self.values.len() as i64 - 1
    }

    pub fn get(&self, day: i64) -> Option<f64> {
        let idx = usize::try_from(day - self.start_day).ok()?;
        self.values.get(idx).copied().flatten()
    }
}

/// Extreme-segment labels attached to anchor days.
///
/// The label at anchor `t` covers the `horizon` days `t+1 ..= t+horizon`;
/// `None` marks anchors whose segment touches a price gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabels {
    pub alpha: f64,
    pub horizon: usize,
    pub start_day: i64,
    pub labels: Vec<Option<bool>>,
}

impl GroundTruthLabels {
    pub fn get(&self, anchor: i64) -> Option<bool> {
        let idx = usize::try_from(anchor - self.start_day).ok()?;
        self.labels.get(idx).copied().flatten()
    }

    /// Defined `(anchor, label)` pairs.
    pub fn iter_defined(&self) -> impl Iterator<Item = (i64, bool)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|l| (self.start_day + i as i64, l)))
    }
}

/// Labels an anchor 1 iff some day in its future segment has `sigma >= alpha`.
pub fn label_extremes(sigma: &VolatilitySeries, alpha: f64, horizon: usize) -> Result<GroundTruthLabels> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be >= 1".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput("alpha must be > 0".into()));
    }
    if sigma.len() < horizon + 1 {
        return Err(Error::InsufficientHistory(format!(
            "series of {} days is shorter than horizon + 1 = {}",
            sigma.len(),
            horizon + 1
        )));
    }
    let labels = (0..sigma.len() - horizon)
        .map(|t| {
            let segment = &sigma.values[t + 1..=t + horizon];
            if segment.iter().any(Option::is_none) {
                None
            } else {
                Some(segment.iter().flatten().any(|&s| s >= alpha))
            }
        })
        .collect();
    Ok(GroundTruthLabels { alpha, horizon, start_day: sigma.start_day, labels })
}

/// Fraction of positive labels.
pub fn positive_rate(labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::DegenerateLabels("no labels".into()));
    }
    Ok(labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64)
}

/// Fraction of positive labels among the defined ones.
pub fn labels_positive_rate(labels: &GroundTruthLabels) -> Result<f64> {
    let defined: Vec<bool> = labels.iter_defined().map(|(_, l)| l).collect();
    positive_rate(&defined)
}

/// A plain day-indexed series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySeries {
    pub days: Vec<i64>,
    pub values: Vec<f64>,
}

/// Elementwise `market / blockchain`; days with zero blockchain volume are
/// `None`.
pub fn volume_ratio(market: &DaySeries, blockchain: &DaySeries) -> Result<Vec<Option<f64>>> {
    if market.days != blockchain.days || market.values.len() != blockchain.values.len() {
        return Err(Error::Dimension("market and blockchain series are not aligned".into()));
    }
    Ok(market
        .values
        .iter()
        .zip(&blockchain.values)
        .map(|(&m, &b)| (b != 0.0).then(|| m / b))
        .collect())
}
