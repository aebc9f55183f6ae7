//! Domain types shared by the forward model, the inverse solvers and the
//! evaluation metrics.
//!
//! Internal computation runs in a scaled unit system: measurements are
//! divided by their largest absolute entry (so `max |y| = 1`, read as 1 µV)
//! while leadfields stay in SI units, V/(A·m). Coefficients therefore come out
//! in scaled A·m; dividing by [`MeasurementVector::scale_to_unit`] recovers
//! physical dipole moments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{self, Point3};

const UNIT_NORM_TOL: f64 = 1e-12;
const AVERAGE_REFERENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationMode {
    /// Three Cartesian coefficients per source position.
    FreeCartesian,
    /// One coefficient per position along a fixed unit direction.
    Constrained,
}

impl OrientationMode {
    /// Leadfield columns (and coefficients) per source position.
    pub fn components(self) -> usize {
        match self {
            OrientationMode::FreeCartesian => 3,
            OrientationMode::Constrained => 1,
        }
    }
}

/// Candidate source positions in mm, optionally with fixed orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpace {
    positions: Vec<Point3>,
    constraint_dirs: Option<Vec<Point3>>,
}

impl SourceSpace {
    pub fn free(positions: Vec<Point3>) -> Result<Self> {
        Self::validate_positions(&positions)?;
        Ok(Self { positions, constraint_dirs: None })
    }

    pub fn constrained(positions: Vec<Point3>, dirs: Vec<Point3>) -> Result<Self> {
        Self::validate_positions(&positions)?;
        if dirs.len() != positions.len() {
            return Err(Error::Shape(format!(
                "{} constraint directions for {} positions",
                dirs.len(),
                positions.len()
            )));
        }
        for (i, d) in dirs.iter().enumerate() {
            let n = geometry::norm(d);
            if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidValue(format!(
                    "constraint direction {i} has norm {n}, expected 1"
                )));
            }
        }
        Ok(Self { positions, constraint_dirs: Some(dirs) })
    }

    fn validate_positions(positions: &[Point3]) -> Result<()> {
        if positions.is_empty() {
            return Err(Error::InvalidValue("source space must contain at least one position".into()));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidValue(format!("source position {i} is not finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn position(&self, index: usize) -> &Point3 {
        &self.positions[index]
    }

    pub fn constraint_dirs(&self) -> Option<&[Point3]> {
        self.constraint_dirs.as_deref()
    }

    pub fn orientation_mode(&self) -> OrientationMode {
        if self.constraint_dirs.is_some() {
            OrientationMode::Constrained
        } else {
            OrientationMode::FreeCartesian
        }
    }

    pub fn components(&self) -> usize {
        self.orientation_mode().components()
    }

    /// Expected coefficient count (and leadfield column count).
    pub fn dof(&self) -> usize {
        self.len() * self.components()
    }

    /// Nearest source position to `point`: `(index, distance_mm)`.
    pub fn nearest(&self, point: &Point3) -> (usize, f64) {
        geometry::nearest(&self.positions, point).expect("source space is never empty")
    }

    /// Indices of positions within `radius` (inclusive) of `center`.
    pub fn within(&self, center: &Point3, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        (0..self.len())
            .filter(|&i| geometry::distance_sq(&self.positions[i], center) <= r2)
            .collect()
    }

    /// Content hash identifying this source space; stable across runs.
    pub fn id(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"srcspace");
        for p in &self.positions {
            for c in p {
                hasher.update(c.to_le_bytes());
            }
        }
        if let Some(dirs) = &self.constraint_dirs {
            hasher.update(b"dirs");
            for d in dirs {
                for c in d {
                    hasher.update(c.to_le_bytes());
                }
            }
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "electrode")]
pub enum Reference {
    AverageReference,
    CommonElectrode(usize),
}

impl Default for Reference {
    fn default() -> Self {
        Reference::AverageReference
    }
}

/// Channel-by-coefficient gain matrix in V/(A·m).
#[derive(Debug, Clone, PartialEq)]
pub struct LeadField {
    gain: DMatrix<f64>,
    reference: Reference,
    orientation: OrientationMode,
    source_space_id: String,
}

impl LeadField {
    pub fn new(
        gain: DMatrix<f64>,
        reference: Reference,
        orientation: OrientationMode,
        source_space_id: impl Into<String>,
    ) -> Result<Self> {
        if gain.nrows() == 0 || gain.ncols() == 0 {
            return Err(Error::Shape("leadfield must have at least one row and one column".into()));
        }
        if gain.ncols() % orientation.components() != 0 {
            return Err(Error::Shape(format!(
                "{} columns is not a multiple of {} components",
                gain.ncols(),
                orientation.components()
            )));
        }
        if gain.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("leadfield contains non-finite entries".into()));
        }
        match reference {
            Reference::AverageReference => {
                for (j, col) in gain.column_iter().enumerate() {
                    let scale = col.amax();
                    let sum: f64 = col.sum();
                    if sum.abs() > AVERAGE_REFERENCE_TOL * scale.max(f64::MIN_POSITIVE) {
                        return Err(Error::InvalidValue(format!(
                            "column {j} sums to {sum:e} under average reference (max magnitude {scale:e})"
                        )));
                    }
                }
            }
            Reference::CommonElectrode(idx) => {
                if idx >= gain.nrows() {
                    return Err(Error::InvalidValue(format!(
                        "reference electrode {idx} out of range for {} channels",
                        gain.nrows()
                    )));
                }
            }
        }
        Ok(Self { gain, reference, orientation, source_space_id: source_space_id.into() })
    }

    /// Builds a leadfield for `space`, checking the column count.
    pub fn for_space(gain: DMatrix<f64>, reference: Reference, space: &SourceSpace) -> Result<Self> {
        if gain.ncols() != space.dof() {
            return Err(Error::Shape(format!(
                "{} leadfield columns for a source space with {} unknowns",
                gain.ncols(),
                space.dof()
            )));
        }
        Self::new(gain, reference, space.orientation_mode(), space.id())
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn reference(&self) -> Reference {
        self.reference
    }

    pub fn orientation(&self) -> OrientationMode {
        self.orientation
    }

    pub fn components(&self) -> usize {
        self.orientation.components()
    }

    pub fn source_space_id(&self) -> &str {
        &self.source_space_id
    }

    pub fn channels(&self) -> usize {
        self.gain.nrows()
    }

    pub fn cols(&self) -> usize {
        self.gain.ncols()
    }

    pub fn n_sources(&self) -> usize {
        self.gain.ncols() / self.components()
    }

    /// `L x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gain * x
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.gain * factor, self.reference, self.orientation, self.source_space_id.clone())
    }
}

/// Subtracts the channel mean from every column in place.
pub fn apply_average_reference(gain: &mut DMatrix<f64>) {
    let m = gain.nrows() as f64;
    for mut col in gain.column_iter_mut() {
        let mean = col.sum() / m;
        col.add_scalar_mut(-mean);
    }
}

/// Measurement data scaled so that the largest absolute entry is one.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: DVector<f64>,
    /// Factor applied to the raw data: `values = raw * scale_to_unit`.
    pub scale_to_unit: f64,
    /// Noise standard deviation relative to `max |y|`, if known.
    pub noise_rel_std: f64,
}

impl MeasurementVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_noise_rel_std(mut self, rel: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rel) {
            return Err(Error::InvalidValue(format!("relative noise {rel} outside [0, 1)")));
        }
        self.noise_rel_std = rel;
        Ok(self)
    }
}

/// Divides `raw` by its largest absolute value.
pub fn scale_measurement(raw: &[f64]) -> Result<MeasurementVector> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("measurement contains non-finite values".into()));
    }
    let max_abs = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::DegenerateData("measurement vector is identically zero".into()));
    }
    let scale = 1.0 / max_abs;
    let values = DVector::from_iterator(raw.len(), raw.iter().map(|v| v / max_abs));
    Ok(MeasurementVector { values, scale_to_unit: scale, noise_rel_std: 0.0 })
}

/// Reconstructed coefficient vector matching a leadfield's columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentEstimate {
    pub coeffs: DVector<f64>,
    pub orientation: OrientationMode,
}

impl CurrentEstimate {
    pub fn new(coeffs: DVector<f64>, orientation: OrientationMode) -> Result<Self> {
        if coeffs.len() % orientation.components() != 0 {
            return Err(Error::Shape(format!(
                "{} coefficients is not a multiple of {}",
                coeffs.len(),
                orientation.components()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("estimate contains non-finite coefficients".into()));
        }
        Ok(Self { coeffs, orientation })
    }

    pub fn zeros(n_sources: usize, orientation: OrientationMode) -> Self {
        Self { coeffs: DVector::zeros(n_sources * orientation.components()), orientation }
    }

    pub fn n_sources(&self) -> usize {
        self.coeffs.len() / self.orientation.components()
    }

    pub fn components(&self) -> usize {
        self.orientation.components()
    }

    /// Coefficient block for source position `mu`.
    pub fn block(&self, mu: usize) -> &[f64] {
        let k = self.components();
        &self.coeffs.as_slice()[mu * k..(mu + 1) * k]
    }

    /// Euclidean norm of the coefficient block at `mu`.
    pub fn amplitude(&self, mu: usize) -> f64 {
        self.block(mu).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Dipole moment vector at `mu`, using `dirs` for constrained estimates.
    pub fn moment(&self, mu: usize, dirs: Option<&[Point3]>) -> Point3 {
        let b = self.block(mu);
        match self.orientation {
            OrientationMode::FreeCartesian => [b[0], b[1], b[2]],
            OrientationMode::Constrained => {
                let d = dirs.map(|d| d[mu]).unwrap_or([0.0, 0.0, 1.0]);
                geometry::scale(&d, b[0])
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { coeffs: &self.coeffs * factor, orientation: self.orientation }
    }
}

/// Per-position amplitude of `x` over `space`.
pub fn amplitude_field(x: &CurrentEstimate, space: &SourceSpace) -> Result<Vec<f64>> {
    if x.orientation != space.orientation_mode() || x.coeffs.len() != space.dof() {
        return Err(Error::Shape(format!(
            "estimate with {} coefficients ({:?}) does not match source space with {} unknowns ({:?})",
            x.coeffs.len(),
            x.orientation,
            space.dof(),
            space.orientation_mode()
        )));
    }
    Ok((0..space.len()).map(|mu| x.amplitude(mu)).collect())
}

/// Collapses a free-orientation leadfield onto the fixed directions of
/// `space`: column `mu` becomes `sum_k dir_k(mu) * L[:, 3 mu + k]`.
pub fn project_to_constraint(leadfield: &LeadField, space: &SourceSpace) -> Result<LeadField> {
    if leadfield.orientation() != OrientationMode::FreeCartesian {
        return Err(Error::Constraint("leadfield is already orientation-constrained".into()));
    }
    let dirs = space
        .constraint_dirs()
        .ok_or_else(|| Error::Constraint("source space carries no constraint directions".into()))?;
    if leadfield.n_sources() != space.len() {
        return Err(Error::Shape(format!(
            "leadfield has {} source positions, source space has {}",
            leadfield.n_sources(),
            space.len()
        )));
    }
    let gain = leadfield.gain();
    let mut out = DMatrix::zeros(gain.nrows(), space.len());
    for (mu, d) in dirs.iter().enumerate() {
        let mut col = out.column_mut(mu);
        for (k, dk) in d.iter().enumerate() {
            col.axpy(*dk, &gain.column(3 * mu + k), 1.0);
        }
    }
    LeadField::new(out, leadfield.reference(), OrientationMode::Constrained, space.id())
}

/// Prior degree of the exponential power prior: 1 (Laplace) or 2 (Gaussian).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PriorDegree {
    One,
    Two,
}

impl PriorDegree {
    pub fn as_f64(self) -> f64 {
        match self {
            PriorDegree::One => 1.0,
            PriorDegree::Two => 2.0,
        }
    }

    /// `|x|^q`.
    #[inline]
    pub fn pow_abs(self, x: f64) -> f64 {
        match self {
            PriorDegree::One => x.abs(),
            PriorDegree::Two => x * x,
        }
    }
}

impl TryFrom<u8> for PriorDegree {
    type Error = String;

    fn try_from(q: u8) -> std::result::Result<Self, String> {
        match q {
            1 => Ok(PriorDegree::One),
            2 => Ok(PriorDegree::Two),
            other => Err(format!("prior degree must be 1 or 2, got {other}")),
        }
    }
}

impl From<PriorDegree> for u8 {
    fn from(q: PriorDegree) -> u8 {
        match q {
            PriorDegree::One => 1,
            PriorDegree::Two => 2,
        }
    }
}

impl std::fmt::Display for PriorDegree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// Hyperparameter refresh rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Updater {
    /// Conditional expectation of the rate.
    Em,
    /// Conditional mode of the rate.
    Ias,
}

impl std::fmt::Display for Updater {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Updater::Em => "em",
            Updater::Ias => "ias",
        })
    }
}

fn default_outer_iters() -> usize {
    10
}

fn default_inner_iters() -> usize {
    15
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub q: PriorDegree,
    /// Gamma hyperprior shape.
    pub kappa: f64,
    /// Gamma hyperprior scale.
    pub theta: f64,
    /// Likelihood standard deviation in scaled units.
    pub sigma: f64,
    #[serde(default = "default_outer_iters")]
    pub outer_iters: usize,
    #[serde(default = "default_inner_iters")]
    pub inner_lasso_iters: usize,
    pub updater: Updater,
    /// Divide the Laplace rates by `sigma` inside the Lasso step.
    #[serde(default = "default_true")]
    pub park_sigma_scaling: bool,
    /// Stop the outer loop once `||x_{j+1} - x_j||_2` drops below this.
    #[serde(default)]
    pub early_stop_tol: Option<f64>,
}

impl HyperParams {
    pub fn new(q: PriorDegree, kappa: f64, theta: f64, sigma: f64, updater: Updater) -> Result<Self> {
        let hp = Self {
            q,
            kappa,
            theta,
            sigma,
            outer_iters: default_outer_iters(),
            inner_lasso_iters: default_inner_iters(),
            updater,
            park_sigma_scaling: true,
            early_stop_tol: None,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 1.0) || !self.kappa.is_finite() {
            return Err(Error::Hyperparameter(format!("kappa must exceed 1, got {}", self.kappa)));
        }
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(Error::Hyperparameter(format!("theta must be positive, got {}", self.theta)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Hyperparameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.outer_iters == 0 {
            return Err(Error::Hyperparameter("outer_iters must be at least 1".into()));
        }
        if self.q == PriorDegree::One && self.inner_lasso_iters == 0 {
            return Err(Error::Hyperparameter("inner_lasso_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    /// Position in mm.
    pub position: Point3,
    /// Unit orientation.
    pub moment: Point3,
    /// Amplitude in A·m.
    pub amplitude: f64,
}

impl Dipole {
    /// Moment vector scaled by amplitude (A·m).
    pub fn moment_vector(&self) -> Point3 {
        geometry::scale(&self.moment, self.amplitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleConfig {
    pub dipoles: Vec<Dipole>,
    pub label: String,
}

impl DipoleConfig {
    pub fn new(dipoles: Vec<Dipole>, label: impl Into<String>) -> Result<Self> {
        let cfg = Self { dipoles, label: label.into() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.dipoles.iter().enumerate() {
            let n = geometry::norm(&d.moment);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidValue(format!("dipole {i} moment has norm {n}, expected 1")));
            }
            if !(d.amplitude > 0.0) || !d.amplitude.is_finite() {
                return Err(Error::InvalidValue(format!("dipole {i} amplitude must be positive")));
            }
            if d.position.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidValue(format!("dipole {i} position is not finite")));
            }
        }
        Ok(())
    }
}
