use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quantile levels of a box-plot row.
pub const BOX_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Quantile `p` of `values` with linear interpolation between order
/// statistics (position `p (n - 1)`).
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DegenerateData("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidValue(format!("quantile level {p} outside [0, 1]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidValue("sample contains NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPlotRow {
    pub count: usize,
    /// Values at [`BOX_QUANTILES`].
    pub quantiles: [f64; 5],
}

pub fn box_plot_row(values: &[f64]) -> Result<BoxPlotRow> {
    let mut quantiles = [0.0; 5];
    for (out, p) in quantiles.iter_mut().zip(BOX_QUANTILES) {
        *out = quantile(values, p)?;
    }
    Ok(BoxPlotRow { count: values.len(), quantiles })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[lo, hi]`; the last bin is closed and values
/// outside the range are clamped into the end bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::InvalidValue(format!("invalid histogram range [{lo}, {hi}] with {bins} bins")));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|b| lo + width * b as f64).collect();
    let mut counts = vec![0; bins];
    for v in values.iter().filter(|v| !v.is_nan()) {
        let b = ((v - lo) / width).floor();
        counts[(b.max(0.0) as usize).min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}
