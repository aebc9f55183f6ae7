//! Accuracy and focality of reconstructions against known dipoles.
//!
//! Estimates must be expressed in the same units as the truth amplitudes
//! (A·m); see [`crate::model::MeasurementVector::scale_to_unit`].

mod stats;
mod transport;

pub use stats::{box_plot_row, histogram, quantile, BoxPlotRow, Histogram, BOX_QUANTILES};
pub use transport::{solve_transport, TransportPlan};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point3};
use crate::model::{amplitude_field, CurrentEstimate, DipoleConfig, SourceSpace};

pub const ROI_RADIUS_MM: f64 = 30.0;
pub const EMD_LIMIT_MM: f64 = 45.0;
/// Relative level of the hard-threshold focality measure.
pub const HARD_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub center: Point3,
    pub radius: f64,
}

impl RoiSpec {
    pub fn new(center: Point3, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidValue(format!("ROI radius {radius} must be positive")));
        }
        Ok(Self { center, radius })
    }

    pub fn around(center: Point3) -> Self {
        Self { center, radius: ROI_RADIUS_MM }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassCenter {
    pub position: Point3,
    /// Sum of the moment vectors in the ROI.
    pub mean_vector: Point3,
    /// Norm of `mean_vector`.
    pub total_amplitude: f64,
}

fn roi_members(space: &SourceSpace, roi: &RoiSpec) -> Result<Vec<usize>> {
    let members = space.within(&roi.center, roi.radius);
    if members.is_empty() {
        return Err(Error::EmptyRoi);
    }
    Ok(members)
}

/// Amplitude-weighted centre and summed moment of `estimate` inside `roi`.
pub fn roi_mass_center(estimate: &CurrentEstimate, space: &SourceSpace, roi: &RoiSpec) -> Result<MassCenter> {
    let amp = amplitude_field(estimate, space)?;
    let members = roi_members(space, roi)?;
    let dirs = space.constraint_dirs();
    let mut weight = 0.0;
    let mut weighted_pos = [0.0; 3];
    let mut mean_vector = [0.0; 3];
    for &mu in &members {
        let a = amp[mu];
        weight += a;
        weighted_pos = geometry::add(&weighted_pos, &geometry::scale(space.position(mu), a));
        mean_vector = geometry::add(&mean_vector, &estimate.moment(mu, dirs));
    }
    let total_amplitude = geometry::norm(&mean_vector);
    if weight == 0.0 || total_amplitude == 0.0 {
        return Err(Error::ZeroMass("reconstruction vanishes inside the ROI".into()));
    }
    Ok(MassCenter { position: geometry::scale(&weighted_pos, 1.0 / weight), mean_vector, total_amplitude })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Distance between the ROI mass centre and the true position (mm).
    pub position_error: f64,
    /// Angle between the ROI mean vector and the true moment (degrees).
    pub angle_error: f64,
    /// `log10(A_r / A_s)`.
    pub amplitude_log_ratio: f64,
}

/// Position, orientation and amplitude accuracy for each true dipole, each in
/// its own ROI of radius [`ROI_RADIUS_MM`].
pub fn accuracy_measures(estimate: &CurrentEstimate, space: &SourceSpace, truth: &DipoleConfig) -> Result<Vec<Accuracy>> {
    truth
        .dipoles
        .iter()
        .map(|d| {
            let mc = roi_mass_center(estimate, space, &RoiSpec::around(d.position))?;
            let cos = geometry::dot(&mc.mean_vector, &d.moment) / (mc.total_amplitude * geometry::norm(&d.moment));
            Ok(Accuracy {
                position_error: geometry::distance(&mc.position, &d.position),
                angle_error: cos.clamp(-1.0, 1.0).acos().to_degrees(),
                amplitude_log_ratio: (mc.total_amplitude / d.amplitude).log10(),
            })
        })
        .collect()
}

/// Fraction of ROI positions whose amplitude reaches [`HARD_THRESHOLD`] of the
/// ROI maximum.
pub fn hard_threshold_focality(estimate: &CurrentEstimate, space: &SourceSpace, roi: &RoiSpec) -> Result<f64> {
    let amp = amplitude_field(estimate, space)?;
    let members = roi_members(space, roi)?;
    let max = members.iter().map(|&mu| amp[mu]).fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::ZeroMass("reconstruction vanishes inside the ROI".into()));
    }
    let level = HARD_THRESHOLD * max;
    let above = members.iter().filter(|&&mu| amp[mu] >= level).count();
    Ok(above as f64 / members.len() as f64)
}

/// Earth mover's distance (mm) between the normalized amplitude field within
/// `limit_mm` of any true dipole and the normalized true point masses.
pub fn limited_emd(estimate: &CurrentEstimate, space: &SourceSpace, truth: &DipoleConfig, limit_mm: f64) -> Result<f64> {
    if truth.dipoles.is_empty() {
        return Err(Error::DegenerateData("no true dipoles".into()));
    }
    if !(limit_mm > 0.0) {
        return Err(Error::InvalidValue(format!("EMD limit {limit_mm} must be positive")));
    }
    let amp = amplitude_field(estimate, space)?;
    let r2 = limit_mm * limit_mm;
    let support: Vec<usize> = (0..space.len())
        .filter(|&mu| {
            amp[mu] > 0.0 && truth.dipoles.iter().any(|d| geometry::distance_sq(space.position(mu), &d.position) <= r2)
        })
        .collect();
    let mass: f64 = support.iter().map(|&mu| amp[mu]).sum();
    if mass == 0.0 {
        return Err(Error::ZeroMass(format!("no reconstruction mass within {limit_mm} mm of the truth")));
    }
    let supply: Vec<f64> = support.iter().map(|&mu| amp[mu] / mass).collect();
    let total_true: f64 = truth.dipoles.iter().map(|d| d.amplitude).sum();
    let demand: Vec<f64> = truth.dipoles.iter().map(|d| d.amplitude / total_true).collect();
    let plan = solve_transport(&supply, &demand, |i, j| {
        geometry::distance(space.position(support[i]), &truth.dipoles[j].position)
    })?;
    Ok(plan.cost.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleMetrics {
    pub position_error: f64,
    pub angle_error: f64,
    pub amplitude_log_ratio: f64,
    pub hard_threshold_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub seed: u64,
    pub dipoles: Vec<DipoleMetrics>,
    pub emd: f64,
}

/// Every measure for `estimate` against `truth`.
pub fn evaluate(
    estimate: &CurrentEstimate,
    space: &SourceSpace,
    truth: &DipoleConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let accuracy = accuracy_measures(estimate, space, truth)?;
    let dipoles = accuracy
        .into_iter()
        .zip(&truth.dipoles)
        .map(|(a, d)| {
            Ok(DipoleMetrics {
                position_error: a.position_error,
                angle_error: a.angle_error,
                amplitude_log_ratio: a.amplitude_log_ratio,
                hard_threshold_fraction: hard_threshold_focality(estimate, space, &RoiSpec::around(d.position))?,
            })
        })
        .collect::<Result<_>>()?;
    let emd = limited_emd(estimate, space, truth, EMD_LIMIT_MM)?;
    Ok(MetricsReport { label: truth.label.clone(), seed, dipoles, emd })
}
