//! Inverse solvers for the conditionally exponential prior.

mod gamma;
mod lasso;
mod outer;
mod ridge;

pub use gamma::{em_numerator, gamma_update_em, gamma_update_ias, ias_numerator, GammaVector};
pub use lasso::{irls_lasso, lasso_objective, solve_lasso_irls, IrlsOutcome, IrlsWeights, IRLS_FLOOR};
pub use outer::{log_marginal_posterior, run_cep, CepOutcome, SolverTrace};
pub use ridge::{ridge_solve, solve_weighted_ridge, RidgeForm};
