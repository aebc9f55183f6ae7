use faer::linalg::matmul::triangular::{matmul, BlockStructure};
use faer::linalg::solvers::Solve;
use faer::{Accum, MatMut, MatRef, Par, Side};
use nalgebra::{DMatrix, DVector};

use super::gamma::GammaVector;
use crate::error::{Error, Result};
use crate::model::{CurrentEstimate, LeadField};

/// Which linear system the ridge solve factorizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RidgeForm {
    /// Dual when there are fewer channels than unknowns, primal otherwise.
    Auto,
    /// `(L^T L + 2 sigma^2 W) x = L^T y`, size `cols`.
    Primal,
    /// `x = D^-1 L^T (L D^-1 L^T + I)^-1 y` with `D = 2 sigma^2 W`, size `m`.
    Dual,
}

pub(crate) fn check_system(l: &DMatrix<f64>, y: &DVector<f64>, weights: &[f64], sigma: f64) -> Result<()> {
    if y.len() != l.nrows() {
        return Err(Error::Shape(format!("{} measurements for {} leadfield rows", y.len(), l.nrows())));
    }
    if weights.len() != l.ncols() {
        return Err(Error::Shape(format!("{} weights for {} leadfield columns", weights.len(), l.ncols())));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidValue(format!("sigma must be positive, got {sigma}")));
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidValue(format!("weight {i} = {} is not positive and finite", weights[i])));
    }
    Ok(())
}

/// Minimizer of `(1/2 sigma^2) ||L x - y||^2 + sum_i w_i x_i^2`.
pub fn ridge_solve(
    l: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &[f64],
    sigma: f64,
    form: RidgeForm,
) -> Result<DVector<f64>> {
    check_system(l, y, weights, sigma)?;
    let dual = match form {
        RidgeForm::Auto => l.nrows() < l.ncols(),
        RidgeForm::Primal => false,
        RidgeForm::Dual => true,
    };
    let two_s2 = 2.0 * sigma * sigma;
    if dual {
        solve_dual(l, y, weights, two_s2)
    } else {
        solve_primal(l, y, weights, two_s2)
    }
}

fn solve_primal(l: &DMatrix<f64>, y: &DVector<f64>, weights: &[f64], two_s2: f64) -> Result<DVector<f64>> {
    let mut a = l.tr_mul(l);
    for (i, w) in weights.iter().enumerate() {
        a[(i, i)] += two_s2 * w;
    }
    let rhs = l.tr_mul(y);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::DegenerateData("primal ridge system is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

fn solve_dual(l: &DMatrix<f64>, y: &DVector<f64>, weights: &[f64], two_s2: f64) -> Result<DVector<f64>> {
    // B = L D^{-1/2}, so L D^-1 L^T = B B^T and x = D^{-1/2} B^T z.
    let scale: Vec<f64> = weights.iter().map(|w| 1.0 / (two_s2 * w).sqrt()).collect();
    let mut b = l.clone();
    for (j, mut col) in b.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    let k = gram_plus_identity(&b);
    let m = k.nrows();
    let chol = MatRef::from_column_major_slice(k.as_slice(), m, m)
        .llt(Side::Lower)
        .map_err(|_| Error::DegenerateData("dual ridge system is not positive definite".into()))?;
    let z = chol.solve(MatRef::from_column_major_slice(y.as_slice(), m, 1));
    let z = DVector::from_iterator(m, z.col(0).iter().copied());
    let mut x = b.tr_mul(&z);
    for (xj, s) in x.iter_mut().zip(&scale) {
        *xj *= s;
    }
    Ok(x)
}

/// Lower triangle of `B B^T + I`; the strict upper triangle is left at zero.
fn gram_plus_identity(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = b.shape();
    let mut k: DMatrix<f64> = DMatrix::identity(m, m);
    let bf = MatRef::from_column_major_slice(b.as_slice(), m, n);
    matmul(
        MatMut::from_column_major_slice_mut(k.as_mut_slice(), m, m),
        BlockStructure::TriangularLower,
        Accum::Add,
        bf,
        BlockStructure::Rectangular,
        bf.transpose(),
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    k
}

/// Exact minimizer of `(1/2 sigma^2) ||L x - y||^2 + sum_i gamma_i x_i^2`.
pub fn solve_weighted_ridge(
    leadfield: &LeadField,
    y: &DVector<f64>,
    gamma: &GammaVector,
    sigma: f64,
) -> Result<CurrentEstimate> {
    let x = ridge_solve(leadfield.gain(), y, gamma.as_slice(), sigma, RidgeForm::Auto)?;
    CurrentEstimate::new(x, leadfield.orientation())
}
