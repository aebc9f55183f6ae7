use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{CurrentEstimate, HyperParams, PriorDegree};

/// Per-coefficient rate parameters of the exponential power prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaVector {
    values: DVector<f64>,
}

impl GammaVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidValue(format!("gamma[{i}] = {} is not positive and finite", values[i])));
        }
        Ok(Self { values })
    }

    pub fn uniform(len: usize, value: f64) -> Result<Self> {
        Self::new(DVector::from_element(len, value))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.values
    }
}

/// Shape of the rate posterior `Gamma(kappa + 1/q, theta + |x|^q)`.
pub fn em_numerator(q: PriorDegree, kappa: f64) -> f64 {
    kappa + 1.0 / q.as_f64()
}

/// Shape minus one, the numerator of the posterior mode.
///
/// Computed from [`em_numerator`] so the two differ by exactly one.
pub fn ias_numerator(q: PriorDegree, kappa: f64) -> f64 {
    em_numerator(q, kappa) - 1.0
}

fn rates(coeffs: &DVector<f64>, q: PriorDegree, theta: f64, numerator: f64) -> Result<GammaVector> {
    GammaVector::new(coeffs.map(|x| numerator / (theta + q.pow_abs(x))))
}

/// Posterior mean of the rates given `x`.
pub fn gamma_update_em(x: &CurrentEstimate, hp: &HyperParams) -> Result<GammaVector> {
    gamma_em(&x.coeffs, hp)
}

/// Posterior mode of the rates given `x`.
pub fn gamma_update_ias(x: &CurrentEstimate, hp: &HyperParams) -> Result<GammaVector> {
    gamma_ias(&x.coeffs, hp)
}

pub(crate) fn gamma_em(coeffs: &DVector<f64>, hp: &HyperParams) -> Result<GammaVector> {
    rates(coeffs, hp.q, hp.theta, em_numerator(hp.q, hp.kappa))
}

pub(crate) fn gamma_ias(coeffs: &DVector<f64>, hp: &HyperParams) -> Result<GammaVector> {
    let numerator = ias_numerator(hp.q, hp.kappa);
    if !(numerator > 0.0) {
        return Err(Error::Hyperparameter(format!(
            "kappa + 1/q - 1 = {numerator} must be positive for the mode update"
        )));
    }
    rates(coeffs, hp.q, hp.theta, numerator)
}
