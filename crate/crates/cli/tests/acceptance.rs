//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 7`.

use std::time::{Duration, Instant};

use cepra_cli::{default_methods, run_experiment, ExperimentConfig};
use cepra_core::cep::{
    em_numerator, gamma_update_em, gamma_update_ias, ias_numerator, irls_lasso, lasso_objective, log_marginal_posterior,
    ridge_solve, run_cep, RidgeForm, IRLS_FLOOR,
};
use cepra_core::forward::{ball_source_space, build_leadfield, ElectrodeLayout, ShellModel};
use cepra_core::geometry::{self, Point3};
use cepra_core::hyperprior::{solve_kappa_match, theta_from_noise, PRESET_KAPPA};
use cepra_core::metrics::limited_emd;
use cepra_core::model::{
    CurrentEstimate, Dipole, DipoleConfig, HyperParams, LeadField, OrientationMode, PriorDegree, Reference, SourceSpace,
    Updater,
};
use cepra_core::ramus::{
    derive_seed, prolong_estimate, prolong_gamma, restrict_leadfield, run_ramus, sample_decomposition, RamusConfig,
};
use cepra_core::cep::GammaVector;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within_budget(v: Verdict, elapsed: Duration, budget: Duration) -> Verdict {
    let ok = elapsed < budget;
    let detail = format!("{}; runtime {:.2?} (limit {:?})", v.detail, elapsed, budget);
    verdict(v.pass && ok, detail)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = geometry::norm(&v);
        if n > 0.1 && n <= 1.0 {
            return geometry::scale(&v, 1.0 / n);
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------------------
// 1. Hyperprior match
// ---------------------------------------------------------------------------

fn criterion_1() -> Verdict {
    let m = match solve_kappa_match() {
        Ok(m) => m,
        Err(e) => return verdict(false, format!("kappa match failed: {e}")),
    };
    let kappa_ok = (4.35..=4.45).contains(&m.kappa);
    let ratio_ok = (0.28..=0.31).contains(&m.ratio);
    let mut detail = format!("kappa* = {:.5}, ratio = {:.5}", m.kappa, m.ratio);
    let mut theta_ok = true;
    for kappa in [PRESET_KAPPA, m.kappa] {
        for (q, target) in [(PriorDegree::One, 1e-3), (PriorDegree::Two, 1e-6)] {
            let theta = theta_from_noise(0.03, 1e-8, kappa, q).unwrap_or(f64::NAN);
            let rel = (theta / target - 1.0).abs();
            theta_ok &= rel <= 0.1;
            detail.push_str(&format!("; theta(q={q}, kappa={kappa:.3}) = {theta:.4e}"));
        }
    }
    verdict(kappa_ok && ratio_ok && theta_ok, detail)
}

// ---------------------------------------------------------------------------
// 2. Update-rule identities
// ---------------------------------------------------------------------------

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_em = 0.0_f64;
    let mut worst_ias = 0.0_f64;
    let mut numerators_exact = true;
    for _ in 0..10_000 {
        let q = if rng.random_bool(0.5) { PriorDegree::One } else { PriorDegree::Two };
        let kappa = rng.random_range(1.0001..20.0);
        let theta = 10f64.powf(rng.random_range(-9.0..1.0));
        let x = rng.random_range(-1.0..1.0) * 10f64.powf(rng.random_range(-8.0..2.0));
        numerators_exact &= em_numerator(q, kappa) - ias_numerator(q, kappa) == 1.0;

        let hp = HyperParams::new(q, kappa, theta, 0.05, Updater::Em).expect("valid parameters");
        let est = CurrentEstimate::new(DVector::from_element(1, x), OrientationMode::Constrained).unwrap();
        let qf = q.as_f64();
        let denom = theta + x.abs().powf(qf);
        let em_closed = (kappa + 1.0 / qf) / denom;
        let ias_closed = (kappa + 1.0 / qf - 1.0) / denom;
        let em = gamma_update_em(&est, &hp).unwrap().as_slice()[0];
        let ias = gamma_update_ias(&est, &hp).unwrap().as_slice()[0];
        worst_em = worst_em.max((em - em_closed).abs() / em_closed);
        worst_ias = worst_ias.max((ias - ias_closed).abs() / ias_closed);
    }
    // A few ulps: the closed form uses powf while the library squares.
    let tol = 8.0 * f64::EPSILON;
    verdict(
        numerators_exact && worst_em <= tol && worst_ias <= tol,
        format!(
            "numerators differ by exactly 1: {numerators_exact}; max rel. deviation EM {worst_em:.2e}, IAS {worst_ias:.2e} (tol {tol:.1e})"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Inner-solver oracles
// ---------------------------------------------------------------------------

/// Normal equations `(L^T L + 2 sigma^2 W) x = L^T y` by LU with one step of
/// iterative refinement.
fn normal_equations(l: &DMatrix<f64>, y: &DVector<f64>, w: &[f64], sigma: f64) -> DVector<f64> {
    let mut a = l.transpose() * l;
    for (i, wi) in w.iter().enumerate() {
        a[(i, i)] += 2.0 * sigma * sigma * wi;
    }
    let b = l.transpose() * y;
    let lu = a.clone().lu();
    let x = lu.solve(&b).expect("nonsingular");
    let r = &b - &a * &x;
    x + lu.solve(&r).expect("nonsingular")
}

/// Cyclic coordinate descent on `(1/2 sigma^2)||Lx - y||^2 + sum gamma_i |x_i|`.
fn coordinate_descent(l: &DMatrix<f64>, y: &DVector<f64>, gamma: &[f64], sigma: f64) -> DVector<f64> {
    let n = l.ncols();
    let mut x = DVector::<f64>::zeros(n);
    let mut resid = y.clone();
    let col_sq: Vec<f64> = (0..n).map(|j| l.column(j).norm_squared()).collect();
    let s2 = sigma * sigma;
    for _ in 0..200_000 {
        let mut biggest = 0.0_f64;
        for j in 0..n {
            if col_sq[j] == 0.0 {
                continue;
            }
            let rho = l.column(j).dot(&resid) + col_sq[j] * x[j];
            let shrink = s2 * gamma[j];
            let new = if rho > shrink {
                (rho - shrink) / col_sq[j]
            } else if rho < -shrink {
                (rho + shrink) / col_sq[j]
            } else {
                0.0
            };
            let delta = new - x[j];
            if delta != 0.0 {
                resid.axpy(-delta, &l.column(j), 1.0);
                x[j] = new;
                biggest = biggest.max(delta.abs());
            }
        }
        if biggest < 1e-15 {
            break;
        }
    }
    x
}

/// IRLS sweeps used against the coordinate-descent optimum. Coefficients
/// that vanish at the optimum decay only linearly, so the objective gap
/// reaches its floor-limited plateau (about 4e-7) after roughly 1300 sweeps.
const ORACLE_IRLS_SWEEPS: usize = 2000;

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_ridge = 0.0_f64;
    for _ in 0..50 {
        let m = rng.random_range(2..=32);
        let n = rng.random_range(1..=96);
        let l = random_matrix(&mut rng, m, n);
        let y = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
        let sigma = rng.random_range(0.3..1.0);
        let x = ridge_solve(&l, &y, &w, sigma, RidgeForm::Auto).unwrap();
        let oracle = normal_equations(&l, &y, &w, sigma);
        worst_ridge = worst_ridge.max((&x - &oracle).norm() / oracle.norm().max(f64::MIN_POSITIVE));
    }

    let mut worst_obj = 0.0_f64;
    let mut monotone = true;
    for _ in 0..20 {
        let m = rng.random_range(2..=16);
        let n = rng.random_range(1..=48);
        let l = random_matrix(&mut rng, m, n);
        let y = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let sigma = rng.random_range(0.05..0.5);
        let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..20.0)).collect();
        // From zero every weight starts on the floor; start from ones instead.
        let start = DVector::from_element(n, 1.0);
        let out = irls_lasso(&l, &y, &gamma, sigma, ORACLE_IRLS_SWEEPS, IRLS_FLOOR, Some(&start)).unwrap();
        let mut prev = out.initial_objective;
        for &f in &out.objective {
            monotone &= f <= prev + 1e-12 * prev.abs();
            prev = f;
        }
        let cd = coordinate_descent(&l, &y, &gamma, sigma);
        let f_cd = lasso_objective(&l, &y, &gamma, sigma, &cd);
        let f_irls = lasso_objective(&l, &y, &gamma, sigma, &out.x);
        worst_obj = worst_obj.max((f_irls - f_cd).abs() / f_cd.abs().max(f64::MIN_POSITIVE));
    }
    verdict(
        worst_ridge <= 1e-10 && worst_obj <= 1e-6 && monotone,
        format!(
            "ridge max rel. error {worst_ridge:.2e} (tol 1e-10); IRLS ({ORACLE_IRLS_SWEEPS} sweeps) max rel. objective gap {worst_obj:.2e} (tol 1e-6); monotone: {monotone}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. EM ascent
// ---------------------------------------------------------------------------

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_drop = 0.0_f64;
    let mut steps = 0;
    for q in [PriorDegree::One, PriorDegree::Two] {
        for _ in 0..10 {
            let m = rng.random_range(8..=32);
            let n = rng.random_range(m..=96);
            let gain = random_matrix(&mut rng, m, n);
            let lf = LeadField::new(gain, Reference::CommonElectrode(0), OrientationMode::Constrained, "random").unwrap();
            let mut x = DVector::zeros(n);
            for _ in 0..2 {
                x[rng.random_range(0..n)] = rng.random_range(-1.0..1.0);
            }
            let mut y = lf.apply(&x);
            y.iter_mut().for_each(|v| *v += 0.05 * rng.random_range(-1.0..1.0));
            let y = &y / y.amax();
            let theta = if q == PriorDegree::One { 1e-2 } else { 1e-4 };
            let mut hp = HyperParams::new(q, 4.4, theta, 0.05, Updater::Em).unwrap();
            // The ascent property belongs to the exact EM objective, without
            // the sigma-scaled Laplace rates.
            hp.park_sigma_scaling = false;
            hp.outer_iters = 10;
            let out = run_cep(&lf, &y, &hp, None).unwrap();
            let mut prev = log_marginal_posterior(lf.gain(), &y, &DVector::zeros(n), &hp);
            for lp in out.trace.log_posterior.iter().map(|v| v.expect("EM records the posterior")) {
                worst_drop = worst_drop.max(prev - lp);
                prev = lp;
                steps += 1;
            }
        }
    }
    verdict(
        worst_drop <= 1e-10 && steps == 200,
        format!("{steps} EM steps; largest decrease of the log posterior {worst_drop:.2e} (slack 1e-10)"),
    )
}

// ---------------------------------------------------------------------------
// 5 and 6. End-to-end localization and focality ordering
// ---------------------------------------------------------------------------

const ERROR_BOUND_MM: f64 = 11.3;
const REPORTED_BOUND_MM: f64 = 8.0;

fn protocol_config(preset: &str, out: &std::path::Path) -> ExperimentConfig {
    let text = format!(
        r#"
output_dir = "{}"
[truth]
preset = "{preset}"
[noise]
levels = [0.05]
realizations = 25
seed = 2024
[ramus]
decompositions = 25
master_seed = 7
"#,
        out.display()
    );
    let stub = format!(
        "{text}\n[[methods]]\nq = 2\nkappa = 4.4\ntheta = 1e-6\nsigma = 0.03\nupdater = \"em\"\n"
    );
    let mut cfg = ExperimentConfig::from_toml(&stub).expect("protocol config");
    // Likelihood deviation of 3 % with the preset hyperprior, all four cells.
    cfg.methods = default_methods(0.03);
    cfg
}

fn criteria_5_and_6() -> (Verdict, Verdict) {
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let mut pass5 = true;
    let mut lines5 = Vec::new();
    let mut under_8 = true;
    let mut focality = Vec::new();
    for preset in ["I", "II"] {
        let cfg = protocol_config(preset, &dir.path().join(preset));
        let outcome = match run_experiment(&cfg) {
            Ok(o) => o,
            Err(e) => {
                let v = verdict(false, format!("configuration {preset} failed: {e}"));
                return (v, verdict(false, "no run"));
            }
        };
        if outcome.manifest.failed_cells > 0 {
            pass5 = false;
            lines5.push(format!("{preset}: {} failed cells", outcome.manifest.failed_cells));
        }
        let dipoles = outcome.manifest.truth.dipoles.len();
        for method in &cfg.methods {
            let name = method.label();
            for k in 0..dipoles {
                let median = outcome
                    .table(&name, &format!("position_error_d{k}"))
                    .and_then(|t| t.median(0))
                    .unwrap_or(f64::INFINITY);
                pass5 &= median <= ERROR_BOUND_MM;
                under_8 &= median < REPORTED_BOUND_MM;
                lines5.push(format!("{preset}/{name}/d{k} {median:.2} mm"));
            }
            if preset == "I" {
                // Dipole 0 of configuration I is the superficial one.
                let ht = outcome
                    .table(&name, "hard_threshold_fraction_d0")
                    .and_then(|t| t.median(0))
                    .unwrap_or(f64::NAN);
                focality.push((method.params.updater, method.params.q, ht));
            }
        }
    }
    let elapsed = start.elapsed();
    let v5 = within_budget(
        verdict(
            pass5,
            format!(
                "median ROI position error <= {ERROR_BOUND_MM} mm in every cell: [{}]; all below {REPORTED_BOUND_MM} mm (reported, not gated): {under_8}",
                lines5.join(", ")
            ),
        ),
        elapsed,
        Duration::from_secs(20 * 60),
    );

    let lookup = |u: Updater, q: PriorDegree| focality.iter().find(|f| f.0 == u && f.1 == q).map_or(f64::NAN, |f| f.2);
    let mut pass6 = true;
    let mut lines6 = Vec::new();
    for u in [Updater::Em, Updater::Ias] {
        let (h1, h2) = (lookup(u, PriorDegree::One), lookup(u, PriorDegree::Two));
        pass6 &= h1 < h2;
        lines6.push(format!("{u}: q=1 {h1:.3} vs q=2 {h2:.3}"));
    }
    let v6 = verdict(pass6, format!("median hard-threshold fraction, superficial dipole of I: {}", lines6.join("; ")));
    (v5, v6)
}

// ---------------------------------------------------------------------------
// 7. EMD correctness
// ---------------------------------------------------------------------------

/// Minimum transport cost over all vertices of the transportation polytope.
/// Every basic solution is supported on a spanning tree of the bipartite
/// supply/demand graph; the flows on a tree follow by peeling leaves.
fn transport_by_enumeration(supply: &[f64], demand: &[f64], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    let (s, d) = (supply.len(), demand.len());
    let cells: Vec<(usize, usize)> = (0..s).flat_map(|i| (0..d).map(move |j| (i, j))).collect();
    let k = s + d - 1;
    let mut best = f64::INFINITY;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let chosen: Vec<(usize, usize)> = subset.iter().map(|&c| cells[c]).collect();
        if let Some(flows) = peel_tree(&chosen, supply, demand) {
            if flows.iter().all(|f| *f >= -1e-12) {
                let c: f64 = chosen.iter().zip(&flows).map(|(&(i, j), f)| cost(i, j) * f.max(0.0)).sum();
                best = best.min(c);
            }
        }
        // Advance to the next k-subset.
        let mut t = k;
        while t > 0 && subset[t - 1] == cells.len() - k + t - 1 {
            t -= 1;
        }
        if t == 0 {
            return best;
        }
        subset[t - 1] += 1;
        for u in t..k {
            subset[u] = subset[u - 1] + 1;
        }
    }
}

fn peel_tree(edges: &[(usize, usize)], supply: &[f64], demand: &[f64]) -> Option<Vec<f64>> {
    let s = supply.len();
    let mut left: Vec<f64> = supply.iter().chain(demand.iter()).copied().collect();
    let mut flow = vec![0.0; edges.len()];
    let mut open: Vec<bool> = vec![true; edges.len()];
    for _ in 0..edges.len() {
        let mut deg = vec![0; left.len()];
        for (e, &(i, j)) in edges.iter().enumerate() {
            if open[e] {
                deg[i] += 1;
                deg[s + j] += 1;
            }
        }
        let (e, node) = edges.iter().enumerate().find_map(|(e, &(i, j))| match open[e] {
            true if deg[i] == 1 => Some((e, i)),
            true if deg[s + j] == 1 => Some((e, s + j)),
            _ => None,
        })?;
        let (i, j) = edges[e];
        flow[e] = left[node];
        left[i] -= flow[e];
        left[s + j] -= flow[e];
        open[e] = false;
    }
    left.iter().all(|r| r.abs() < 1e-9).then_some(flow)
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let s = rng.random_range(1..=6);
        let d = rng.random_range(1..=3);
        let positions: Vec<Point3> =
            (0..s).map(|_| geometry::scale(&random_unit(&mut rng), rng.random_range(0.0..25.0))).collect();
        let space = SourceSpace::free(positions.clone()).unwrap();
        let dipoles: Vec<Dipole> = (0..d)
            .map(|_| Dipole {
                position: geometry::scale(&random_unit(&mut rng), rng.random_range(0.0..15.0)),
                moment: random_unit(&mut rng),
                amplitude: rng.random_range(0.1..2.0),
            })
            .collect();
        let truth = DipoleConfig::new(dipoles.clone(), "random").unwrap();
        let coeffs = DVector::from_fn(3 * s, |_, _| rng.random_range(-1.0..1.0));
        let x = CurrentEstimate::new(coeffs, OrientationMode::FreeCartesian).unwrap();
        // Every supply point is within 40 mm of every dipole, so the 45 mm
        // limit keeps all mass.
        let emd = limited_emd(&x, &space, &truth, 45.0).unwrap();

        let amp: Vec<f64> = (0..s).map(|mu| x.amplitude(mu)).collect();
        let total: f64 = amp.iter().sum();
        let supply: Vec<f64> = amp.iter().map(|a| a / total).collect();
        let dtotal: f64 = dipoles.iter().map(|p| p.amplitude).sum();
        let demand: Vec<f64> = dipoles.iter().map(|p| p.amplitude / dtotal).collect();
        let oracle = transport_by_enumeration(&supply, &demand, &|i, j| geometry::distance(&positions[i], &dipoles[j].position));
        worst = worst.max((emd - oracle).abs());
    }
    verdict(worst <= 1e-9, format!("200 instances, max |EMD - enumeration| = {worst:.2e} mm (tol 1e-9)"))
}

// ---------------------------------------------------------------------------
// 8. RAMUS structure
// ---------------------------------------------------------------------------

fn criterion_8() -> Verdict {
    let space = ball_source_space(1000, 78.0, 8).unwrap();
    let layout = ElectrodeLayout::default_cap(92.0);
    let lf = build_leadfield(&ShellModel::ary(), &space, &layout).unwrap();
    let cfg = RamusConfig::default();
    let n = space.len();
    let mut failures: Vec<String> = Vec::new();
    let mut note = |ok: bool, what: String| {
        if !ok && failures.len() < 5 {
            failures.push(what);
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 0..100u64 {
        let seed = derive_seed(88, k);
        let d = sample_decomposition(&space, &cfg, seed).unwrap();
        let sizes: Vec<usize> = d.levels.iter().map(|l| l.len()).collect();
        note(sizes.windows(2).all(|w| w[0] < w[1]) && sizes.last() == Some(&n), format!("seed {seed}: sizes {sizes:?}"));
        for (r, level) in d.levels.iter().enumerate() {
            let cells = level.len();
            let in_range = level.assignment.len() == n && level.assignment.iter().all(|&c| c < cells);
            let counts = level.cell_sizes();
            let nonempty = counts.iter().all(|&c| c > 0) && counts.iter().sum::<usize>() == n;
            let own = level.representatives.iter().enumerate().all(|(c, &rep)| level.assignment[rep] == c);
            let mut reps = level.representatives.clone();
            reps.sort_unstable();
            reps.dedup();
            let distinct = reps.len() == cells;
            let nearest = (0..n).all(|mu| {
                let p = space.position(mu);
                let assigned = geometry::distance(p, space.position(level.representatives[level.assignment[mu]]));
                level.representatives.iter().all(|&rep| assigned <= geometry::distance(p, space.position(rep)) + 1e-12)
            });
            note(in_range && nonempty && own && distinct && nearest, format!("seed {seed} level {r}: partition"));

            // Constant coarse fields stay constant.
            let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let coarse = CurrentEstimate::new(DVector::from_fn(3 * cells, |i, _| c[i % 3]), OrientationMode::FreeCartesian).unwrap();
            let fine = prolong_estimate(&coarse, &d, r).unwrap();
            note(fine.coeffs.iter().enumerate().all(|(i, v)| *v == c[i % 3]), format!("seed {seed} level {r}: constant"));

            // An elevated rate in one cell reaches exactly the finer
            // representatives inside that cell.
            let hot = rng.random_range(0..cells);
            let g = GammaVector::new(DVector::from_fn(3 * cells, |i, _| if i / 3 == hot { 5.0 } else { 1.0 })).unwrap();
            for r_next in r..d.levels.len() {
                let next = &d.levels[r_next];
                let pg = prolong_gamma(&g, &d, r, r_next).unwrap();
                let ok = next.representatives.iter().enumerate().all(|(cell, &rep)| {
                    let expect = if level.assignment[rep] == hot { 5.0 } else { 1.0 };
                    pg.as_slice()[3 * cell..3 * cell + 3].iter().all(|v| *v == expect)
                });
                note(ok, format!("seed {seed}: gamma support {r} -> {r_next}"));
            }
        }
        // Finest level: restriction is the identity and prolongation inverts it.
        let finest = d.levels.len() - 1;
        let restricted = restrict_leadfield(&lf, &d, finest).unwrap();
        note(restricted.gain() == lf.gain(), format!("seed {seed}: finest restriction"));
        let x = CurrentEstimate::new(DVector::from_fn(3 * n, |_, _| rng.random_range(-1.0..1.0)), OrientationMode::FreeCartesian)
            .unwrap();
        note(prolong_estimate(&x, &d, finest).unwrap() == x, format!("seed {seed}: finest prolongation"));
    }

    // Worker-count independence over 100 decompositions.
    let small = ball_source_space(200, 78.0, 9).unwrap();
    let small_lf = build_leadfield(&ShellModel::ary(), &small, &ElectrodeLayout::fibonacci_cap(32, 92.0, 2.0).unwrap()).unwrap();
    let mut x_true = DVector::zeros(small_lf.cols());
    x_true[3 * 17 + 2] = 1e-8;
    let y = small_lf.apply(&x_true);
    let y = &y / y.amax();
    let hp = HyperParams::new(PriorDegree::Two, 4.4, 1e-6, 0.05, Updater::Em).unwrap();
    let rc = RamusConfig { decompositions: 100, ..RamusConfig::default() };
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_ramus(&small_lf, &y, &hp, &small, &rc, 42).unwrap())
    };
    let a = run_with(1);
    let b = run_with(3);
    let bits_equal = a.estimate.coeffs.iter().zip(b.estimate.coeffs.iter()).all(|(u, v)| u.to_bits() == v.to_bits());
    note(bits_equal && a.traces == b.traces, "1 vs 3 workers differ".into());

    let pass = failures.is_empty();
    let detail = if pass {
        "100 decompositions: partitions, nearest-representative cells, constant fields, gamma support, finest identity; 1 vs 3 workers bit-identical".to_string()
    } else {
        format!("failures: {}", failures.join("; "))
    };
    verdict(pass, detail)
}

// ---------------------------------------------------------------------------
// 9. Forward-model oracle
// ---------------------------------------------------------------------------

/// Surface potential (V) of a dipole (A·m) in a homogeneous sphere, closed
/// form in SI units.
fn homogeneous_sphere(sigma: f64, pos_mm: &Point3, moment: &Point3, electrode_mm: &Point3) -> f64 {
    let r = geometry::scale(electrode_mm, 1e-3);
    let r0 = geometry::scale(pos_mm, 1e-3);
    let diff = geometry::sub(&r, &r0);
    let d = geometry::norm(&diff);
    let big_r = geometry::norm(&r);
    let r_hat = geometry::scale(&r, 1.0 / big_r);
    let denom = big_r * (big_r - geometry::dot(&r0, &r_hat) + d);
    let mut grad = [0.0; 3];
    for k in 0..3 {
        grad[k] = 2.0 * diff[k] / d.powi(3) + (r_hat[k] + diff[k] / d) / denom;
    }
    geometry::dot(moment, &grad) / (4.0 * std::f64::consts::PI * sigma)
}

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = ShellModel::new([82.0, 86.0, 92.0], [0.33; 3], ShellModel::DEFAULT_SERIES_TERMS).unwrap();
    let kernel = model.kernel().unwrap();
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let pos = geometry::scale(&random_unit(&mut rng), rng.random_range(0.0..78.0));
        let moment = random_unit(&mut rng);
        let electrode = geometry::scale(&random_unit(&mut rng), 92.0);
        let unit = kernel.unit_potentials(&pos, &[electrode]).unwrap();
        let series = geometry::dot(&unit[0], &moment);
        let exact = homogeneous_sphere(0.33, &pos, &moment, &electrode);
        worst = worst.max((series - exact).abs() / exact.abs());
    }

    let space = ball_source_space(300, 78.0, 19).unwrap();
    let lf = build_leadfield(&ShellModel::ary(), &space, &ElectrodeLayout::default_cap(92.0)).unwrap();
    let worst_sum = lf
        .gain()
        .column_iter()
        .map(|c| c.sum().abs() / c.amax())
        .fold(0.0_f64, f64::max);
    verdict(
        worst <= 1e-8 && worst_sum <= 1e-10,
        format!("100 pairs, max rel. deviation from the homogeneous sphere {worst:.2e} (tol 1e-8); max |column sum|/max|column| {worst_sum:.2e} (tol 1e-10)"),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let mut results: Vec<(u32, Verdict)> = Vec::new();
    let timed = |f: fn() -> Verdict, budget: Duration| {
        let start = Instant::now();
        let v = f();
        within_budget(v, start.elapsed(), budget)
    };
    if run(1) {
        results.push((1, timed(criterion_1, Duration::from_secs(1))));
    }
    if run(2) {
        results.push((2, timed(criterion_2, Duration::from_secs(1))));
    }
    if run(3) {
        results.push((3, timed(criterion_3, Duration::from_secs(30))));
    }
    if run(4) {
        results.push((4, timed(criterion_4, Duration::from_secs(30))));
    }
    if run(7) {
        results.push((7, timed(criterion_7, Duration::from_secs(10))));
    }
    if run(8) {
        results.push((8, timed(criterion_8, Duration::from_secs(60))));
    }
    if run(9) {
        results.push((9, timed(criterion_9, Duration::from_secs(60))));
    }
    if run(5) || run(6) {
        let (v5, v6) = criteria_5_and_6();
        results.push((5, v5));
        results.push((6, v6));
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (k, v) in &results {
        if run(*k) {
            println!("criterion {k}: {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            failed += usize::from(!v.pass);
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
