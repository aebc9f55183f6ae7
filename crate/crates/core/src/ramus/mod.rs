//! Randomized multiresolution scanning: the inverse problem is solved on a
//! coarse-to-fine ladder of random source-space partitions and the
//! prolonged estimates are averaged over many such ladders.

mod decomposition;

pub use decomposition::{
    prolong_estimate, prolong_gamma, restrict_leadfield, sample_decomposition, Level, MultiresolutionDecomposition,
};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cep::{run_cep, SolverTrace};
use crate::error::{Error, Result};
use crate::model::{CurrentEstimate, HyperParams, LeadField, SourceSpace};

/// How the averaged estimate is rescaled at the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// Least-squares scalar fit of `L x` to `y`.
    #[default]
    DataFit,
    /// Division by `sum_{r=1}^R s^r`.
    LiteralGeometricSum,
}

fn default_sparsity() -> f64 {
    10.0
}

fn default_decompositions() -> usize {
    100
}

fn default_coarsest() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamusConfig {
    /// Level count; derived from `coarsest_count` when absent.
    #[serde(default)]
    pub levels: Option<usize>,
    /// Growth factor `s` of the source count between levels.
    #[serde(default = "default_sparsity")]
    pub sparsity: f64,
    /// Number of decompositions `D`.
    #[serde(default = "default_decompositions")]
    pub decompositions: usize,
    /// Sources on the coarsest level.
    #[serde(default = "default_coarsest")]
    pub coarsest_count: usize,
    #[serde(default)]
    pub scaling: ScalingMode,
}

impl Default for RamusConfig {
    fn default() -> Self {
        Self {
            levels: None,
            sparsity: default_sparsity(),
            decompositions: default_decompositions(),
            coarsest_count: default_coarsest(),
            scaling: ScalingMode::default(),
        }
    }
}

impl RamusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sparsity > 1.0 && self.sparsity.is_finite()) {
            return Err(Error::Config(format!("sparsity factor must exceed 1, got {}", self.sparsity)));
        }
        if self.decompositions == 0 {
            return Err(Error::Config("at least one decomposition is required".into()));
        }
        if self.coarsest_count == 0 {
            return Err(Error::Config("coarsest level needs at least one source".into()));
        }
        if self.levels == Some(0) {
            return Err(Error::Config("level count must be positive".into()));
        }
        Ok(())
    }

    /// Level count for `n` fine sources: the largest `R` with
    /// `floor(n / s^(R-1)) >= coarsest_count`, unless fixed explicitly.
    pub fn level_count(&self, n: usize) -> Result<usize> {
        self.validate()?;
        if self.coarsest_count > n {
            return Err(Error::LevelSize(format!("coarsest level of {} exceeds {n} sources", self.coarsest_count)));
        }
        if let Some(r) = self.levels {
            return Ok(r);
        }
        let mut r = 1;
        while ((n as f64) / self.sparsity.powi(r as i32)).floor() >= self.coarsest_count as f64 {
            r += 1;
        }
        Ok(r)
    }

    /// `n_r = floor(n s^(r-R))` for `r = 1..=R`, strictly increasing and
    /// ending at `n`.
    pub fn level_sizes(&self, n: usize) -> Result<Vec<usize>> {
        let big_r = self.level_count(n)?;
        let sizes: Vec<usize> =
            (0..big_r).map(|r| ((n as f64) / self.sparsity.powi((big_r - 1 - r) as i32)).floor() as usize).collect();
        if sizes[0] == 0 {
            return Err(Error::LevelSize(format!("{big_r} levels with factor {} leave the coarsest level empty", self.sparsity)));
        }
        if let Some(w) = sizes.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::LevelSize(format!("level sizes {} and {} are not increasing", w[0], w[1])));
        }
        Ok(sizes)
    }

    /// `sum_{r=1}^R s^r`.
    pub fn geometric_sum(&self, levels: usize) -> f64 {
        (1..=levels).map(|r| self.sparsity.powi(r as i32)).sum()
    }
}

/// `index`-th output of a SplitMix64 stream started at `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    /// Cells on this level.
    pub size: usize,
    pub trace: SolverTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTrace {
    pub index: usize,
    pub seed: u64,
    pub levels: Vec<LevelTrace>,
}

#[derive(Debug, Clone)]
pub struct RamusOutcome {
    pub estimate: CurrentEstimate,
    /// Factor applied to the raw average.
    pub scale: f64,
    pub traces: Vec<DecompositionTrace>,
}

/// Sum over levels of one decomposition's prolonged estimates, each divided
/// by `D`.
fn scan_one(
    leadfield: &LeadField,
    y: &DVector<f64>,
    hp: &HyperParams,
    space: &SourceSpace,
    cfg: &RamusConfig,
    index: usize,
    seed: u64,
) -> Result<(DVector<f64>, DecompositionTrace)> {
    let decomp = sample_decomposition(space, cfg, seed)?;
    let d = cfg.decompositions as f64;
    let mut acc = DVector::zeros(leadfield.cols());
    let mut gamma = None;
    let mut levels = Vec::with_capacity(decomp.levels.len());
    for r in 0..decomp.levels.len() {
        let a = restrict_leadfield(leadfield, &decomp, r)?;
        let init = match gamma {
            Some(ref g) => Some(prolong_gamma(g, &decomp, r - 1, r)?),
            None => None,
        };
        let out = run_cep(&a, y, hp, init.as_ref())?;
        let fine = prolong_estimate(&out.estimate, &decomp, r)?;
        acc.axpy(1.0 / d, &fine.coeffs, 1.0);
        levels.push(LevelTrace { size: decomp.levels[r].len(), trace: out.trace });
        gamma = Some(out.gamma);
    }
    Ok((acc, DecompositionTrace { index, seed, levels }))
}

/// Averaged multiresolution estimate over `cfg.decompositions` random
/// decompositions of `space`.
///
/// Decomposition `k` uses seed [`derive_seed`]`(master_seed, k)`.
/// Decompositions run in parallel and are summed in index order, so the
/// result does not depend on the number of worker threads.
pub fn run_ramus(
    leadfield: &LeadField,
    y: &DVector<f64>,
    hp: &HyperParams,
    space: &SourceSpace,
    cfg: &RamusConfig,
    master_seed: u64,
) -> Result<RamusOutcome> {
    cfg.validate()?;
    hp.validate()?;
    if leadfield.cols() != space.dof() || leadfield.orientation() != space.orientation_mode() {
        return Err(Error::Shape(format!(
            "leadfield with {} columns does not match source space with {} unknowns",
            leadfield.cols(),
            space.dof()
        )));
    }
    if y.len() != leadfield.channels() {
        return Err(Error::Shape(format!("{} measurements for {} channels", y.len(), leadfield.channels())));
    }
    let big_r = cfg.level_count(space.len())?;
    let results: Vec<(DVector<f64>, DecompositionTrace)> = (0..cfg.decompositions)
        .into_par_iter()
        .map(|k| scan_one(leadfield, y, hp, space, cfg, k, derive_seed(master_seed, k as u64)))
        .collect::<Result<_>>()?;
    let mut raw = DVector::zeros(leadfield.cols());
    let mut traces = Vec::with_capacity(results.len());
    for (part, trace) in results {
        raw += part;
        traces.push(trace);
    }
    let scale = match cfg.scaling {
        ScalingMode::DataFit => {
            let fitted = leadfield.apply(&raw);
            let denom = fitted.norm_squared();
            if denom > 0.0 {
                fitted.dot(y) / denom
            } else {
                1.0
            }
        }
        ScalingMode::LiteralGeometricSum => 1.0 / cfg.geometric_sum(big_r),
    };
    let estimate = CurrentEstimate::new(raw * scale, leadfield.orientation())?;
    Ok(RamusOutcome { estimate, scale, traces })
}
