use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gamma::{gamma_em, gamma_ias, GammaVector};
use super::lasso::{irls_minimizer, IRLS_FLOOR};
use super::ridge::{ridge_solve, RidgeForm};
use crate::error::{Error, Result};
use crate::model::{CurrentEstimate, HyperParams, LeadField, PriorDegree, Updater};

/// Per outer iteration diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    /// `||x_{j+1} - x_j||_2`.
    pub step_norm: Vec<f64>,
    /// `||L x_{j+1} - y||_2`.
    pub misfit: Vec<f64>,
    /// `sum_i gamma_i |x_i|^q` with the rates used in the step.
    pub penalty: Vec<f64>,
    /// Log marginal posterior of `x_{j+1}` up to a constant; EM runs only.
    pub log_posterior: Vec<Option<f64>>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.step_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.step_norm.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CepOutcome {
    pub estimate: CurrentEstimate,
    /// Rates refreshed from the final estimate.
    pub gamma: GammaVector,
    pub trace: SolverTrace,
}

/// `-(1/2 sigma^2) ||L x - y||^2 - (kappa + 1/q) sum_i log(1 + |x_i|^q / theta)`.
///
/// The second term is the log of the rate-marginalized prior density.
pub fn log_marginal_posterior(l: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>, hp: &HyperParams) -> f64 {
    let misfit = (l * x - y).norm_squared();
    let shape = hp.kappa + 1.0 / hp.q.as_f64();
    let prior: f64 = x.iter().map(|xi| (hp.q.pow_abs(*xi) / hp.theta).ln_1p()).sum();
    -misfit / (2.0 * hp.sigma * hp.sigma) - shape * prior
}

fn refresh(x: &DVector<f64>, hp: &HyperParams) -> Result<GammaVector> {
    match hp.updater {
        Updater::Em => gamma_em(x, hp),
        Updater::Ias => gamma_ias(x, hp),
    }
}

/// Alternates the rate refresh with the coefficient solve for
/// `hp.outer_iters` rounds.
///
/// Without `gamma_init` the rates start from `x = 0`; otherwise the first
/// coefficient solve uses `gamma_init`. Laplace steps warm start their
/// reweighting from the current iterate.
pub fn run_cep(
    leadfield: &LeadField,
    y: &DVector<f64>,
    hp: &HyperParams,
    gamma_init: Option<&GammaVector>,
) -> Result<CepOutcome> {
    hp.validate()?;
    let l = leadfield.gain();
    if y.len() != l.nrows() {
        return Err(Error::Shape(format!("{} measurements for {} leadfield rows", y.len(), l.nrows())));
    }
    let mut x = DVector::zeros(l.ncols());
    let mut gamma = match gamma_init {
        Some(g) if g.len() != l.ncols() => {
            return Err(Error::Shape(format!("{} initial rates for {} columns", g.len(), l.ncols())))
        }
        Some(g) => g.clone(),
        None => refresh(&x, hp)?,
    };
    let mut trace = SolverTrace::default();
    for _ in 0..hp.outer_iters {
        let next = match hp.q {
            PriorDegree::Two => ridge_solve(l, y, gamma.as_slice(), hp.sigma, RidgeForm::Auto)?,
            PriorDegree::One => {
                let rates: Vec<f64> = if hp.park_sigma_scaling {
                    gamma.as_slice().iter().map(|g| g / hp.sigma).collect()
                } else {
                    gamma.as_slice().to_vec()
                };
                irls_minimizer(l, y, &rates, hp.sigma, hp.inner_lasso_iters, IRLS_FLOOR, Some(&x))?
            }
        };
        let step = (&next - &x).norm();
        trace.step_norm.push(step);
        trace.misfit.push((l * &next - y).norm());
        trace.penalty.push(gamma.as_slice().iter().zip(next.iter()).map(|(g, v)| g * hp.q.pow_abs(*v)).sum());
        trace.log_posterior.push(match hp.updater {
            Updater::Em => Some(log_marginal_posterior(l, y, &next, hp)),
            Updater::Ias => None,
        });
        x = next;
        gamma = refresh(&x, hp)?;
        if hp.early_stop_tol.is_some_and(|tol| step < tol) {
            break;
        }
    }
    Ok(CepOutcome { estimate: CurrentEstimate::new(x, leadfield.orientation())?, gamma, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{build_leadfield, ball_source_space, ElectrodeLayout, ShellModel};
    use crate::model::{amplitude_field, OrientationMode, Reference};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (LeadField, DVector<f64>) {
        let gain = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let lf = LeadField::new(gain, Reference::CommonElectrode(0), OrientationMode::Constrained, "r").unwrap();
        let mut x = DVector::zeros(n);
        x[rng.random_range(0..n)] = 1.0;
        let mut y = lf.apply(&x);
        y.iter_mut().for_each(|v| *v += 0.05 * rng.random_range(-1.0..1.0));
        let peak = y.amax();
        (lf, y / peak)
    }

    #[test]
    fn zero_data_keeps_zero_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (lf, _) = random_problem(&mut rng, 8, 20);
        let y = DVector::zeros(8);
        for q in [PriorDegree::One, PriorDegree::Two] {
            for updater in [Updater::Em, Updater::Ias] {
                let hp = HyperParams::new(q, 4.4, 1e-3, 0.05, updater).unwrap();
                let out = run_cep(&lf, &y, &hp, None).unwrap();
                assert!(out.estimate.coeffs.iter().all(|v| *v == 0.0));
                let at_zero = refresh(&DVector::zeros(20), &hp).unwrap();
                assert_eq!(out.gamma, at_zero);
                assert_eq!(out.trace.len(), 10);
            }
        }
    }

    #[test]
    fn trace_lengths_match_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (lf, y) = random_problem(&mut rng, 12, 30);
        let mut hp = HyperParams::new(PriorDegree::Two, 4.4, 1e-3, 0.05, Updater::Ias).unwrap();
        hp.outer_iters = 7;
        let out = run_cep(&lf, &y, &hp, None).unwrap();
        let t = &out.trace;
        assert_eq!((t.step_norm.len(), t.misfit.len(), t.penalty.len(), t.log_posterior.len()), (7, 7, 7, 7));
        assert!(t.log_posterior.iter().all(Option::is_none));
    }

    #[test]
    fn em_log_posterior_ascends() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for q in [PriorDegree::One, PriorDegree::Two] {
            for _ in 0..3 {
                let (lf, y) = random_problem(&mut rng, 12, 40);
                let mut hp = HyperParams::new(q, 4.4, 1e-2, 0.05, Updater::Em).unwrap();
                hp.park_sigma_scaling = false;
                let out = run_cep(&lf, &y, &hp, None).unwrap();
                let lp = log_marginal_posterior(lf.gain(), &y, &DVector::zeros(40), &hp);
                let mut prev = lp;
                for v in out.trace.log_posterior.iter().map(|v| v.unwrap()) {
                    assert!(v >= prev - 1e-10 * prev.abs().max(1.0), "q={q}: {v} < {prev}");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn gamma_init_is_used_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (lf, y) = random_problem(&mut rng, 10, 25);
        let mut hp = HyperParams::new(PriorDegree::Two, 4.4, 1e-3, 0.05, Updater::Em).unwrap();
        hp.outer_iters = 1;
        let g = GammaVector::uniform(25, 0.1).unwrap();
        let out = run_cep(&lf, &y, &hp, Some(&g)).unwrap();
        let expected = ridge_solve(lf.gain(), &y, g.as_slice(), 0.05, RidgeForm::Auto).unwrap();
        assert_eq!(out.estimate.coeffs, expected);
    }

    #[test]
    fn early_stop_shortens_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (lf, y) = random_problem(&mut rng, 10, 25);
        let mut hp = HyperParams::new(PriorDegree::Two, 4.4, 1e-3, 0.05, Updater::Em).unwrap();
        hp.outer_iters = 50;
        hp.early_stop_tol = Some(1e3);
        let out = run_cep(&lf, &y, &hp, None).unwrap();
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn deterministic_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (lf, y) = random_problem(&mut rng, 10, 25);
        let hp = HyperParams::new(PriorDegree::One, 4.4, 1e-3, 0.05, Updater::Em).unwrap();
        let a = run_cep(&lf, &y, &hp, None).unwrap();
        let b = run_cep(&lf, &y, &hp, None).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn noiseless_single_dipole_is_found_or_truth_scores_higher() {
        // Plain CEP keeps part of the minimum-norm depth bias, so some deep
        // sources settle on a shallower local maximum. Those misses must
        // score below the generating configuration.
        let model = ShellModel::ary();
        let electrodes = ElectrodeLayout::default_cap(92.0);
        let space = ball_source_space(50, 78.0, 9).unwrap();
        let lf = build_leadfield(&model, &space, &electrodes).unwrap();
        let hp = HyperParams::new(PriorDegree::Two, 4.4, 1e-6, 0.03, Updater::Em).unwrap();
        let mut exact = 0;
        for mu in 0..space.len() {
            let mut x = DVector::zeros(lf.cols());
            x[3 * mu + 2] = 1e-8;
            let raw = lf.apply(&x);
            let y = &raw / raw.amax();
            let out = run_cep(&lf, &y, &hp, None).unwrap();
            let amp = amplitude_field(&out.estimate, &space).unwrap();
            let argmax = (0..amp.len()).max_by(|a, b| amp[*a].total_cmp(&amp[*b])).unwrap();
            if argmax == mu {
                exact += 1;
            } else {
                let truth = log_marginal_posterior(lf.gain(), &y, &(&x / raw.amax()), &hp);
                let found = log_marginal_posterior(lf.gain(), &y, &out.estimate.coeffs, &hp);
                assert!(found < truth, "source {mu}: estimate {found} truth {truth}");
            }
        }
        assert!(exact >= 30, "{exact} of 50 sources recovered exactly");
    }
}
