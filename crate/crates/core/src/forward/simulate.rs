use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::model::{scale_measurement, CurrentEstimate, DipoleConfig, LeadField, MeasurementVector, OrientationMode, SourceSpace};

/// Snap distances above this raise the warning flag.
pub const SNAP_WARNING_MM: f64 = 5.0;

/// Relative noise levels of the noise sweep.
pub const SWEEP_LEVELS: [f64; 7] = [0.03, 0.05, 0.07, 0.09, 0.11, 0.13, 0.15];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation relative to the largest noiseless channel.
    pub rel_std: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(rel_std: f64, seed: u64) -> Result<Self> {
        if !(rel_std > 0.0 && rel_std < 1.0) {
            return Err(Error::InvalidValue(format!("relative noise {rel_std} outside (0, 1)")));
        }
        Ok(Self { rel_std, seed })
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedMeasurement {
    pub measurement: MeasurementVector,
    /// Noiseless potentials (V).
    pub clean: DVector<f64>,
    /// Added noise (V).
    pub noise: DVector<f64>,
    /// Source index each dipole was snapped to.
    pub snapped: Vec<usize>,
    pub snap_distances: Vec<f64>,
    /// Set when any dipole moved further than [`SNAP_WARNING_MM`].
    pub snap_warning: bool,
}

/// Coefficient vector of `config` after snapping each dipole to its nearest
/// source position. Returns the estimate, snapped indices and distances.
pub fn render_truth(space: &SourceSpace, config: &DipoleConfig) -> Result<(CurrentEstimate, Vec<usize>, Vec<f64>)> {
    if config.dipoles.is_empty() {
        return Err(Error::DegenerateData("dipole configuration is empty".into()));
    }
    config.validate()?;
    let mode = space.orientation_mode();
    let mut x = CurrentEstimate::zeros(space.len(), mode);
    let mut snapped = Vec::with_capacity(config.dipoles.len());
    let mut distances = Vec::with_capacity(config.dipoles.len());
    for d in &config.dipoles {
        let (idx, dist) = space.nearest(&d.position);
        let moment = d.moment_vector();
        match mode {
            OrientationMode::FreeCartesian => {
                for k in 0..3 {
                    x.coeffs[3 * idx + k] += moment[k];
                }
            }
            OrientationMode::Constrained => {
                let dir = space.constraint_dirs().expect("constrained space has directions")[idx];
                x.coeffs[idx] += geometry::dot(&moment, &dir);
            }
        }
        snapped.push(idx);
        distances.push(dist);
    }
    Ok((x, snapped, distances))
}

/// Noisy, scaled measurement of `config` through `leadfield`.
pub fn simulate_measurement(
    leadfield: &LeadField,
    space: &SourceSpace,
    config: &DipoleConfig,
    noise: &NoiseSpec,
) -> Result<SimulatedMeasurement> {
    if leadfield.cols() != space.dof() {
        return Err(Error::Shape(format!(
            "leadfield has {} columns, source space {} unknowns",
            leadfield.cols(),
            space.dof()
        )));
    }
    let (x_true, snapped, snap_distances) = render_truth(space, config)?;
    let clean = leadfield.apply(&x_true.coeffs);
    let peak = clean.amax();
    if peak == 0.0 {
        return Err(Error::DegenerateData("configuration produces no measurable potential".into()));
    }
    let std = noise.rel_std * peak;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let noise_vec = DVector::from_iterator(
        clean.len(),
        (0..clean.len()).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        }),
    );
    let raw = &clean + &noise_vec;
    let measurement = scale_measurement(raw.as_slice())?.with_noise_rel_std(noise.rel_std)?;
    let snap_warning = snap_distances.iter().any(|d| *d > SNAP_WARNING_MM);
    Ok(SimulatedMeasurement { measurement, clean, noise: noise_vec, snapped, snap_distances, snap_warning })
}
