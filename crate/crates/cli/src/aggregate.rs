//! Pooling of metric reports into box-plot and histogram tables.

use std::collections::BTreeMap;

use cepra_core::metrics::{box_plot_row, histogram, BoxPlotRow, Histogram, MetricsReport};
use cepra_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Histogram range and bin count for a measure name.
pub fn histogram_range(measure: &str) -> (f64, f64, usize) {
    match measure.split("_d").next().unwrap_or(measure) {
        "angle_error" => (0.0, 180.0, 36),
        "amplitude_log_ratio" => (-3.0, 3.0, 30),
        "hard_threshold_fraction" => (0.0, 1.0, 20),
        // Distances in mm: position error and EMD.
        _ => (0.0, 60.0, 30),
    }
}

/// Measure name to sample, in report order. Per-dipole measures carry a
/// `_d<k>` suffix.
pub fn collect_measures(reports: &[MetricsReport]) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let Some(first) = reports.first() else {
        return Ok(out);
    };
    for r in reports {
        if r.dipoles.len() != first.dipoles.len() {
            return Err(Error::DegenerateData("reports disagree on the number of dipoles".into()));
        }
        for (k, d) in r.dipoles.iter().enumerate() {
            for (name, v) in [
                ("position_error", d.position_error),
                ("angle_error", d.angle_error),
                ("amplitude_log_ratio", d.amplitude_log_ratio),
                ("hard_threshold_fraction", d.hard_threshold_fraction),
            ] {
                out.entry(format!("{name}_d{k}")).or_default().push(v);
            }
        }
        out.entry("emd".into()).or_default().push(r.emd);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub level: f64,
    #[serde(flatten)]
    pub row: BoxPlotRow,
}

/// Quantiles of one measure for one method across noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub method: String,
    pub measure: String,
    pub rows: Vec<QuantileRow>,
}

impl QuantileTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["level", "count", "q05", "q25", "q50", "q75", "q95"]).map_err(fmt)?;
        for r in &self.rows {
            let mut rec = vec![r.level.to_string(), r.row.count.to_string()];
            rec.extend(r.row.quantiles.iter().map(f64::to_string));
            w.write_record(&rec).map_err(fmt)?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn median(&self, level_index: usize) -> Option<f64> {
        self.rows.get(level_index).map(|r| r.row.quantiles[2])
    }
}

/// Box-plot CSV over measures: `measure,count,q05,...,q95`.
pub fn box_plot_csv(samples: &BTreeMap<String, Vec<f64>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["measure", "count", "q05", "q25", "q50", "q75", "q95"]).map_err(fmt)?;
    for (name, values) in samples {
        let row = box_plot_row(values)?;
        let mut rec = vec![name.clone(), row.count.to_string()];
        rec.extend(row.quantiles.iter().map(f64::to_string));
        w.write_record(&rec).map_err(fmt)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn measure_histogram(measure: &str, values: &[f64]) -> Result<Histogram> {
    let (lo, hi, bins) = histogram_range(measure);
    histogram(values, lo, hi, bins)
}

/// Histogram CSV: `bin_lo,bin_hi,count`.
pub fn histogram_csv(h: &Histogram) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["bin_lo", "bin_hi", "count"]).map_err(fmt)?;
    for (b, c) in h.counts.iter().enumerate() {
        w.write_record([h.edges[b].to_string(), h.edges[b + 1].to_string(), c.to_string()]).map_err(fmt)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}
