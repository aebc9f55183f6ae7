use nalgebra::{DMatrix, DVector};

use super::gamma::GammaVector;
use super::ridge::{check_system, ridge_solve, RidgeForm};
use crate::error::{Error, Result};
use crate::model::{CurrentEstimate, LeadField};

/// Relative floor applied to `|x_i|` before it enters a reweighting.
pub const IRLS_FLOOR: f64 = 1e-8;

/// Quadratic penalty weights `gamma_i / (2 max(|x_i|, eps))` of one IRLS
/// sweep, with `eps = floor * max(1, max_i |x_i|)`.
///
/// `gamma_i / |x_i|` is the conditional mean of the mixing variance of the
/// Laplace prior written as a Gaussian scale mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct IrlsWeights {
    values: DVector<f64>,
}

impl IrlsWeights {
    pub fn new(gamma: &[f64], x: &DVector<f64>, floor: f64) -> Result<Self> {
        if gamma.len() != x.len() {
            return Err(Error::Shape(format!("{} rates for {} coefficients", gamma.len(), x.len())));
        }
        if !(floor > 0.0) {
            return Err(Error::InvalidValue(format!("IRLS floor must be positive, got {floor}")));
        }
        let eps = floor * x.amax().max(1.0);
        let values = DVector::from_iterator(x.len(), gamma.iter().zip(x.iter()).map(|(g, xi)| g / (2.0 * xi.abs().max(eps))));
        Ok(Self { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }
}

/// `(1/2 sigma^2) ||L x - y||^2 + sum_i gamma_i |x_i|`.
pub fn lasso_objective(l: &DMatrix<f64>, y: &DVector<f64>, gamma: &[f64], sigma: f64, x: &DVector<f64>) -> f64 {
    let misfit = (l * x - y).norm_squared();
    let penalty: f64 = gamma.iter().zip(x.iter()).map(|(g, xi)| g * xi.abs()).sum();
    misfit / (2.0 * sigma * sigma) + penalty
}

#[derive(Debug, Clone)]
pub struct IrlsOutcome {
    pub x: DVector<f64>,
    /// Lasso objective at the starting point.
    pub initial_objective: f64,
    /// Lasso objective after each sweep.
    pub objective: Vec<f64>,
}

/// Reweighted ridge iterations for the Lasso with rates `gamma`.
///
/// Starts from `start` (zero when absent). From zero every weight hits the
/// floor, so the first sweep is a heavily regularized ridge solve.
pub fn irls_lasso(
    l: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &[f64],
    sigma: f64,
    iters: usize,
    floor: f64,
    start: Option<&DVector<f64>>,
) -> Result<IrlsOutcome> {
    let mut initial_objective = f64::NAN;
    let mut objective = Vec::with_capacity(iters);
    let x = reweight(l, y, gamma, sigma, iters, floor, start, |x, first| {
        let f = lasso_objective(l, y, gamma, sigma, x);
        if first {
            initial_objective = f;
        } else {
            objective.push(f);
        }
    })?;
    Ok(IrlsOutcome { x, initial_objective, objective })
}

/// Final iterate of [`irls_lasso`] without the per-sweep objective.
pub(crate) fn irls_minimizer(
    l: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &[f64],
    sigma: f64,
    iters: usize,
    floor: f64,
    start: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    reweight(l, y, gamma, sigma, iters, floor, start, |_, _| {})
}

/// Runs the sweeps; `visit` sees the start (flagged) and every iterate.
#[allow(clippy::too_many_arguments)]
fn reweight(
    l: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &[f64],
    sigma: f64,
    iters: usize,
    floor: f64,
    start: Option<&DVector<f64>>,
    mut visit: impl FnMut(&DVector<f64>, bool),
) -> Result<DVector<f64>> {
    check_system(l, y, gamma, sigma)?;
    if iters == 0 {
        return Err(Error::InvalidValue("IRLS needs at least one sweep".into()));
    }
    let mut x = match start {
        Some(s) if s.len() != l.ncols() => {
            return Err(Error::Shape(format!("start has {} entries for {} columns", s.len(), l.ncols())))
        }
        Some(s) => s.clone(),
        None => DVector::zeros(l.ncols()),
    };
    visit(&x, true);
    for _ in 0..iters {
        let weights = IrlsWeights::new(gamma, &x, floor)?;
        x = ridge_solve(l, y, weights.as_slice(), sigma, RidgeForm::Auto)?;
        visit(&x, false);
    }
    Ok(x)
}

/// Approximate Lasso minimizer after `iters` reweighting sweeps from zero.
///
/// `gamma` holds the effective rates; any noise scaling is applied by the
/// caller.
pub fn solve_lasso_irls(
    leadfield: &LeadField,
    y: &DVector<f64>,
    gamma: &GammaVector,
    sigma: f64,
    iters: usize,
    floor_eps: f64,
) -> Result<CurrentEstimate> {
    let x = irls_minimizer(leadfield.gain(), y, gamma.as_slice(), sigma, iters, floor_eps, None)?;
    CurrentEstimate::new(x, leadfield.orientation())
}
