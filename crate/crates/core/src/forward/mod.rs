//! Analytic three-shell spherical head model.

mod electrodes;
mod shell;
mod simulate;
mod sources;

pub use electrodes::{ElectrodeLayout, MIN_ELECTRODES};
pub use shell::{dipole_potential, ShellKernel, ShellModel, DOMAIN_MARGIN_MM, SERIES_TAIL_TOL};
pub use simulate::{render_truth, simulate_measurement, NoiseSpec, SimulatedMeasurement, SNAP_WARNING_MM, SWEEP_LEVELS};
pub use sources::{
    ball_source_space, nominal_preset, preset_configuration, CORTICAL_RATIO, DEEP_RADIUS_MM, REFERENCE_AMPLITUDE_AM,
    SUPERFICIAL_RADIUS_MM,
};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::Result;
use crate::model::{apply_average_reference, project_to_constraint, LeadField, OrientationMode, Reference, SourceSpace};

/// Margin between the source-space ball and the innermost interface, mm.
pub const SOURCE_MARGIN_MM: f64 = 4.0;

/// Average-referenced leadfield of `space` for `electrodes`.
///
/// Column `3 mu + k` holds the potentials of a unit moment along axis `k` at
/// position `mu`; constrained spaces are projected onto their directions.
/// Columns are computed independently, so the result does not depend on the
/// number of worker threads.
pub fn build_leadfield(model: &ShellModel, space: &SourceSpace, electrodes: &ElectrodeLayout) -> Result<LeadField> {
    let kernel = model.kernel()?;
    let blocks: Vec<Vec<[f64; 3]>> = space
        .positions()
        .par_iter()
        .map(|p| kernel.unit_potentials(p, &electrodes.positions))
        .collect::<Result<_>>()?;
    let m = electrodes.len();
    let mut gain = DMatrix::zeros(m, 3 * space.len());
    for (mu, block) in blocks.iter().enumerate() {
        for (row, v) in block.iter().enumerate() {
            for k in 0..3 {
                gain[(row, 3 * mu + k)] = v[k];
            }
        }
    }
    apply_average_reference(&mut gain);
    match space.orientation_mode() {
        OrientationMode::FreeCartesian => LeadField::for_space(gain, Reference::AverageReference, space),
        OrientationMode::Constrained => {
            let free_space = SourceSpace::free(space.positions().to_vec())?;
            let free = LeadField::for_space(gain, Reference::AverageReference, &free_space)?;
            project_to_constraint(&free, space)
        }
    }
}
