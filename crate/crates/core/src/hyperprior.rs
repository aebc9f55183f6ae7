//! Shape and scale selection for the gamma hyperprior from the expected
//! magnitude of the rate-marginalized prior
//! `pi(x) ∝ (|x|^q / theta + 1)^-(kappa + 1/q)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PriorDegree;

/// Shape used by the default pipeline.
pub const PRESET_KAPPA: f64 = 4.4;
/// Scale used by the default pipeline for `q = 1`.
pub const PRESET_THETA_Q1: f64 = 1e-3;
/// Scale used by the default pipeline for `q = 2`.
pub const PRESET_THETA_Q2: f64 = 1e-6;

/// Bracket searched by [`solve_kappa_match`].
pub const KAPPA_BRACKET: (f64, f64) = (1.5, 6.0);

/// Conversion from A·m to the micro-unit scale of the reconstruction.
const MICRO: f64 = 1e6;

const TAIL_TOL: f64 = 1e-14;
const QUAD_TOL: f64 = 1e-13;
const MAX_DEPTH: u32 = 48;

pub fn preset_theta(q: PriorDegree) -> f64 {
    match q {
        PriorDegree::One => PRESET_THETA_Q1,
        PriorDegree::Two => PRESET_THETA_Q2,
    }
}

/// Rate-marginalized prior of one coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalPriorSpec {
    pub q: PriorDegree,
    pub kappa: f64,
    pub theta: f64,
}

impl MarginalPriorSpec {
    pub fn new(q: PriorDegree, kappa: f64, theta: f64) -> Result<Self> {
        check_integrable(q, kappa)?;
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Hyperparameter(format!("theta must be positive, got {theta}")));
        }
        Ok(Self { q, kappa, theta })
    }

    /// Density up to its normalizing constant.
    pub fn unnormalized_density(&self, x: f64) -> f64 {
        (self.q.pow_abs(x) / self.theta + 1.0).powf(-(self.kappa + 1.0 / self.q.as_f64()))
    }

    /// `E[|x|]`, by quadrature in the original variable.
    pub fn expected_magnitude(&self) -> Result<f64> {
        let scale = self.theta.powf(1.0 / self.q.as_f64());
        let a = self.kappa + 1.0 / self.q.as_f64();
        let q = self.q.as_f64();
        // x = scale * u turns both moments into the theta-free integrals.
        let num = power_moment(1.0, q, a)? * scale * scale;
        let den = power_moment(0.0, q, a)? * scale;
        Ok(num / den)
    }
}

fn check_integrable(q: PriorDegree, kappa: f64) -> Result<()> {
    // The first absolute moment needs q (kappa + 1/q) > 2.
    let limit = 1.0 / q.as_f64();
    if !(kappa > limit && kappa.is_finite()) {
        return Err(Error::Hyperparameter(format!(
            "kappa = {kappa} leaves E|x| undefined for q = {q} (need kappa > {limit})"
        )));
    }
    Ok(())
}

/// `∫_0^∞ u^p (1 + u^q)^-a du` for `q a > p + 1`.
///
/// Integrated in `v = ln u`, where the integrand decays exponentially in both
/// directions; the truncation points come from the analytic tail bounds
/// `e^{(p+1)v}/(p+1)` on the left and `e^{(p+1-qa)v}/(qa-p-1)` on the right.
fn power_moment(p: f64, q: f64, a: f64) -> Result<f64> {
    let left_rate = p + 1.0;
    let right_rate = q * a - p - 1.0;
    if !(right_rate > 0.0) {
        return Err(Error::Hyperparameter(format!("moment {p} of the marginal prior diverges")));
    }
    let v_lo = (TAIL_TOL * left_rate).ln() / left_rate;
    let v_hi = -(TAIL_TOL * right_rate).ln() / right_rate;
    let f = |v: f64| {
        let u = v.exp();
        u.powf(p + 1.0) * (1.0 + u.powf(q)).powf(-a)
    };
    Ok(adaptive_gauss_kronrod(&f, v_lo, v_hi, QUAD_TOL))
}

// 15-point Kronrod nodes and weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Kronrod estimate and its difference from the Gauss estimate on `[a, b]`.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

fn adaptive_gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let (whole, _) = gk15(f, a, b);
    let abs_tol = rel_tol * whole.abs().max(f64::MIN_POSITIVE);
    refine(f, a, b, abs_tol, MAX_DEPTH)
}

fn refine<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64, depth: u32) -> f64 {
    let (value, err) = gk15(f, a, b);
    if err <= abs_tol || depth == 0 {
        return value;
    }
    let m = 0.5 * (a + b);
    refine(f, a, m, 0.5 * abs_tol, depth - 1) + refine(f, m, b, 0.5 * abs_tol, depth - 1)
}

/// `E[|x|] / theta^{1/q}` of the normalized marginal prior; independent of
/// `theta`.
pub fn expectation_ratio(q: PriorDegree, kappa: f64) -> Result<f64> {
    check_integrable(q, kappa)?;
    let qf = q.as_f64();
    let a = kappa + 1.0 / qf;
    Ok(power_moment(1.0, qf, a)? / power_moment(0.0, qf, a)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaMatch {
    pub kappa: f64,
    /// Common expectation ratio at `kappa` (mean of the two degrees).
    pub ratio: f64,
    /// `ratio(q=1) - ratio(q=2)` at `kappa`.
    pub residual: f64,
}

fn ratio_gap(kappa: f64) -> Result<f64> {
    Ok(expectation_ratio(PriorDegree::One, kappa)? - expectation_ratio(PriorDegree::Two, kappa)?)
}

/// Shape at which both prior degrees give the same expectation ratio, by
/// bisection on [`KAPPA_BRACKET`].
pub fn solve_kappa_match() -> Result<KappaMatch> {
    let (mut lo, mut hi) = KAPPA_BRACKET;
    let mut f_lo = ratio_gap(lo)?;
    let f_hi = ratio_gap(hi)?;
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::RootBracket { lo, hi });
    }
    let mut mid = 0.5 * (lo + hi);
    let mut f_mid = ratio_gap(mid)?;
    for _ in 0..200 {
        if f_mid.abs() < 1e-13 || hi - lo < 1e-14 {
            break;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        f_mid = ratio_gap(mid)?;
    }
    let r1 = expectation_ratio(PriorDegree::One, mid)?;
    let r2 = expectation_ratio(PriorDegree::Two, mid)?;
    Ok(KappaMatch { kappa: mid, ratio: 0.5 * (r1 + r2), residual: r1 - r2 })
}

/// Expected reconstruction fluctuation `rel_noise * amplitude` in micro
/// units.
pub fn expected_deviation(rel_noise: f64, dipole_amp_am: f64) -> f64 {
    rel_noise * dipole_amp_am * MICRO
}

/// Scale `theta` whose marginal prior has `E|x|` equal to the expected
/// noise-induced fluctuation.
pub fn theta_from_noise(rel_noise: f64, dipole_amp_am: f64, kappa: f64, q: PriorDegree) -> Result<f64> {
    if !(rel_noise > 0.0 && rel_noise < 1.0) {
        return Err(Error::InvalidValue(format!("relative noise {rel_noise} outside (0, 1)")));
    }
    if !(dipole_amp_am > 0.0 && dipole_amp_am.is_finite()) {
        return Err(Error::InvalidValue(format!("dipole amplitude {dipole_amp_am} must be positive")));
    }
    let e = expected_deviation(rel_noise, dipole_amp_am);
    Ok((e / expectation_ratio(q, kappa)?).powf(q.as_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::ln_gamma;

    /// `B(2/q, a - 2/q) / B(1/q, a - 1/q)` via log-gamma.
    fn beta_ratio(q: f64, kappa: f64) -> f64 {
        let a = kappa + 1.0 / q;
        let ln_b = |x: f64, y: f64| ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y);
        (ln_b(2.0 / q, a - 2.0 / q) - ln_b(1.0 / q, a - 1.0 / q)).exp()
    }

    #[test]
    fn laplace_ratio_matches_closed_form() {
        for kappa in [1.2, 1.5, 2.0, 3.3, 4.4, 6.0, 12.0] {
            let r = expectation_ratio(PriorDegree::One, kappa).unwrap();
            assert!((r - 1.0 / (kappa - 1.0)).abs() <= 1e-8 * r, "kappa {kappa}: {r}");
        }
    }

    #[test]
    fn gaussian_ratio_matches_beta_oracle() {
        for kappa in [0.8, 1.5, 2.0, 4.4, 6.0] {
            let r = expectation_ratio(PriorDegree::Two, kappa).unwrap();
            assert!((r - beta_ratio(2.0, kappa)).abs() <= 1e-8 * r);
        }
    }

    #[test]
    fn preset_shape_gives_about_three_tenths() {
        let r1 = expectation_ratio(PriorDegree::One, 4.4).unwrap();
        let r2 = expectation_ratio(PriorDegree::Two, 4.4).unwrap();
        assert!((r1 - 0.294).abs() < 1e-3);
        assert!((r1 - r2).abs() < 1e-3);
    }

    #[test]
    fn kappa_match_is_near_preset() {
        let m = solve_kappa_match().unwrap();
        assert!((4.35..=4.45).contains(&m.kappa), "{}", m.kappa);
        assert!((0.28..=0.31).contains(&m.ratio));
        assert!(m.residual.abs() < 1e-10);
    }

    #[test]
    fn theta_from_three_percent_noise() {
        let t1 = theta_from_noise(0.03, 1e-8, 4.4, PriorDegree::One).unwrap();
        let t2 = theta_from_noise(0.03, 1e-8, 4.4, PriorDegree::Two).unwrap();
        assert!((t1 / 1e-3 - 1.0).abs() < 0.1, "{t1}");
        assert!((t2 / 1e-6 - 1.0).abs() < 0.1, "{t2}");
        for (q, t) in [(PriorDegree::One, t1), (PriorDegree::Two, t2)] {
            let e = expectation_ratio(q, 4.4).unwrap() * t.powf(1.0 / q.as_f64());
            assert!((e - 3e-4).abs() <= 1e-10 * 3e-4);
        }
    }

    #[test]
    fn ratio_is_theta_free() {
        for q in [PriorDegree::One, PriorDegree::Two] {
            let a = MarginalPriorSpec::new(q, 4.4, 1e-6).unwrap();
            let b = MarginalPriorSpec::new(q, 4.4, 1e-3).unwrap();
            let ra = a.expected_magnitude().unwrap() / a.theta.powf(1.0 / q.as_f64());
            let rb = b.expected_magnitude().unwrap() / b.theta.powf(1.0 / q.as_f64());
            assert!((ra - rb).abs() <= 1e-9 * ra);
        }
    }

    #[test]
    fn ratio_decreases_in_kappa() {
        for q in [PriorDegree::One, PriorDegree::Two] {
            let mut prev = f64::INFINITY;
            for i in 0..=45 {
                let kappa = 1.5 + 0.1 * i as f64;
                let r = expectation_ratio(q, kappa).unwrap();
                assert!(r < prev);
                prev = r;
            }
        }
    }

    #[test]
    fn non_integrable_shapes_are_rejected() {
        assert!(matches!(expectation_ratio(PriorDegree::One, 1.0), Err(Error::Hyperparameter(_))));
        assert!(matches!(expectation_ratio(PriorDegree::Two, 0.5), Err(Error::Hyperparameter(_))));
        assert!(expectation_ratio(PriorDegree::Two, 0.6).is_ok());
    }

    #[test]
    fn quadrature_integrates_smooth_function() {
        let v = adaptive_gauss_kronrod(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-13);
        assert!((v - 2.0).abs() < 1e-13);
    }

    #[test]
    fn density_is_symmetric_and_peaks_at_zero() {
        let p = MarginalPriorSpec::new(PriorDegree::One, 4.4, 1e-3).unwrap();
        assert_eq!(p.unnormalized_density(0.0), 1.0);
        assert_eq!(p.unnormalized_density(2e-3), p.unnormalized_density(-2e-3));
        assert!(p.unnormalized_density(1e-3) < 1.0);
    }
}
