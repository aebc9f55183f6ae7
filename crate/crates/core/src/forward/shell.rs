//! Potentials of a current dipole inside concentric spherical shells.
//!
//! The surface potential is expanded in Legendre polynomials,
//!
//! ```text
//! V(r̂) = 1/(4π σ₁ R²) Σₙ Fₙ tⁿ⁻¹ [ n Pₙ(c) (p·r̂₀) + Pₙ'(c) (p·r̂ − c p·r̂₀) ]
//! ```
//!
//! with `t = |r₀|/R`, `c = r̂₀·r̂` and `R` the outer radius. The radial gain
//! `Fₙ` encodes the shells; for a homogeneous sphere `Fₙ = (2n+1)/n`. It is
//! evaluated with an inward sweep of reflection ratios, which keeps every
//! intermediate quantity bounded for large `n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point3};

/// Tail tolerance of the Legendre series, relative to the largest potential.
pub const SERIES_TAIL_TOL: f64 = 1e-8;

/// Smallest admissible distance between a source and the innermost interface.
pub const DOMAIN_MARGIN_MM: f64 = 1.0;

const MM: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellModel {
    /// Interface radii in mm, innermost first.
    pub radii: [f64; 3],
    /// Conductivities in S/m, innermost first.
    pub conductivities: [f64; 3],
    /// Legendre truncation order.
    pub series_terms: usize,
}

impl Default for ShellModel {
    fn default() -> Self {
        Self::ary()
    }
}

impl ShellModel {
    pub const DEFAULT_SERIES_TERMS: usize = 200;

    /// Brain, skull and scalp at 82/86/92 mm with 0.33/0.0042/0.33 S/m.
    pub fn ary() -> Self {
        Self {
            radii: [82.0, 86.0, 92.0],
            conductivities: [0.33, 0.0042, 0.33],
            series_terms: Self::DEFAULT_SERIES_TERMS,
        }
    }

    pub fn new(radii: [f64; 3], conductivities: [f64; 3], series_terms: usize) -> Result<Self> {
        let model = Self { radii, conductivities, series_terms };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radii[0] > 0.0 && self.radii[0] < self.radii[1] && self.radii[1] < self.radii[2]) {
            return Err(Error::InvalidValue(format!("shell radii {:?} must be positive and strictly ascending", self.radii)));
        }
        if self.conductivities.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidValue(format!("conductivities {:?} must be positive", self.conductivities)));
        }
        if self.series_terms < 20 {
            return Err(Error::InvalidValue(format!("series_terms must be at least 20, got {}", self.series_terms)));
        }
        Ok(())
    }

    pub fn outer_radius(&self) -> f64 {
        self.radii[2]
    }

    /// Largest admissible source radius (exclusive), mm.
    pub fn source_limit(&self) -> f64 {
        self.radii[0] - DOMAIN_MARGIN_MM
    }

    pub fn check_source(&self, position: &Point3) -> Result<()> {
        let r = geometry::norm(position);
        let limit = self.source_limit();
        if !(r < limit) {
            return Err(Error::SourceOutOfDomain { radius_mm: r, limit_mm: limit });
        }
        Ok(())
    }

    /// Radial gain `Fₙ` at the outer surface for a unit primary term.
    pub fn radial_gain(&self, n: usize) -> f64 {
        radial_gain(&self.radii, &self.conductivities, n)
    }

    pub fn radial_gains(&self, n_max: usize) -> Vec<f64> {
        let mut gains = vec![0.0; n_max + 1];
        for (n, g) in gains.iter_mut().enumerate().skip(1) {
            *g = self.radial_gain(n);
        }
        gains
    }

    /// Precomputes what a batch of potential evaluations needs.
    pub fn kernel(&self) -> Result<ShellKernel> {
        self.validate()?;
        // Gains past the truncation order feed the tail bound only.
        let gains = self.radial_gains(4 * self.series_terms);
        Ok(ShellKernel { model: self.clone(), gains })
    }
}

/// `Fₙ` for an arbitrary number of concentric shells.
///
/// Adjacent layers of identical conductivity are merged first; an interface
/// without a conductivity jump would otherwise drive the reflection ratio to
/// infinity for large `n`.
pub(crate) fn radial_gain(radii: &[f64], sigma: &[f64], n: usize) -> f64 {
    debug_assert!(n >= 1);
    let mut layers: Vec<(f64, f64)> = Vec::with_capacity(radii.len());
    for (&r, &s) in radii.iter().zip(sigma) {
        match layers.last_mut() {
            Some(last) if last.1 == s => last.0 = r,
            _ => layers.push((r, s)),
        }
    }
    let nf = n as f64;
    // Outer layer: zero normal current at the surface.
    let mut t = nf / (nf + 1.0);
    let mut gain = 1.0;
    for j in (1..layers.len()).rev() {
        // Layer j spans layers[j-1].0..layers[j].0; s < 1 is its inner/outer ratio.
        let s = layers[j - 1].0 / layers[j].0;
        let s_pow = s.powi(2 * n as i32 + 1);
        // Potential ratio outer/inner boundary, with the s^(n+1) factors
        // folded into the primary normalization below.
        gain *= (1.0 + t) / (s_pow + t);
        // Reflection ratio at the inner boundary, then flux continuity
        // (σ u'/u continuous) gives the ratio for the next layer inward.
        let p = s_pow / t;
        let r = layers[j].1 / layers[j - 1].1;
        let num = nf + r * (nf + 1.0) + nf * p * (1.0 - r);
        let den = (nf + 1.0) * (1.0 - r) + p * (nf + 1.0 + r * nf);
        t = num / den;
    }
    gain * (1.0 + t) / t
}

/// Shell model with cached radial gains.
#[derive(Debug, Clone)]
pub struct ShellKernel {
    model: ShellModel,
    gains: Vec<f64>,
}

impl ShellKernel {
    pub fn model(&self) -> &ShellModel {
        &self.model
    }

    /// Unreferenced potentials (V) at `electrodes` (mm) for each of the three
    /// unit moments (1 A·m along x, y, z) of a source at `position` (mm).
    ///
    /// Returns one `[vx, vy, vz]` triple per electrode.
    pub fn unit_potentials(&self, position: &Point3, electrodes: &[Point3]) -> Result<Vec<[f64; 3]>> {
        self.model.check_source(position)?;
        let big_r = self.model.outer_radius();
        let r0 = geometry::norm(position);
        let t = r0 / big_r;
        let r0_hat = geometry::normalized(position).unwrap_or([0.0, 0.0, 1.0]);
        let order = self.model.series_terms;
        let prefactor = 1.0 / (4.0 * std::f64::consts::PI * self.model.conductivities[0] * (big_r * MM).powi(2));

        // Fₙ tⁿ⁻¹, shared by every electrode.
        let mut weights = Vec::with_capacity(order + 1);
        weights.push(0.0);
        let mut tp = 1.0;
        for n in 1..=order {
            weights.push(self.gains[n] * tp);
            tp *= t;
        }

        let mut out = Vec::with_capacity(electrodes.len());
        for e in electrodes {
            let e_hat = geometry::normalized(e)
                .ok_or_else(|| Error::InvalidValue("electrode at the origin".into()))?;
            let c = geometry::dot(&r0_hat, &e_hat).clamp(-1.0, 1.0);
            let (mut p_prev, mut p_cur) = (1.0, c);
            let (mut dp_prev, mut dp_cur) = (0.0, 1.0);
            let mut radial = 0.0;
            let mut tangential = 0.0;
            for (n, w) in weights.iter().enumerate().skip(1) {
                let nf = n as f64;
                radial += w * nf * p_cur;
                tangential += w * dp_cur;
                let p_next = ((2.0 * nf + 1.0) * c * p_cur - nf * p_prev) / (nf + 1.0);
                let dp_next = dp_prev + (2.0 * nf + 1.0) * p_cur;
                p_prev = p_cur;
                p_cur = p_next;
                dp_prev = dp_cur;
                dp_cur = dp_next;
            }
            let mut v = [0.0; 3];
            for k in 0..3 {
                v[k] = prefactor * (radial * r0_hat[k] + tangential * (e_hat[k] - c * r0_hat[k]));
            }
            out.push(v);
        }

        let scale = out.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tail = prefactor * self.tail_bound(t);
        if tail > 0.0 {
            let rel = if scale > 0.0 { tail / scale } else { f64::INFINITY };
            if rel > SERIES_TAIL_TOL {
                return Err(Error::SeriesTruncation { order, tail: rel });
            }
        }
        Ok(out)
    }

    /// Upper bound on the omitted terms, using |Pₙ| ≤ 1 and |Pₙ'| ≤ n(n+1)/2.
    fn tail_bound(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let order = self.model.series_terms;
        let mut tail = 0.0;
        let mut tp = t.powi(order as i32);
        let mut n = order + 1;
        loop {
            let nf = n as f64;
            let gain = self.gains.get(n).copied().unwrap_or_else(|| self.model.radial_gain(n));
            let term = gain.abs() * tp * (nf + nf * (nf + 1.0));
            tail += term;
            if term <= 1e-6 * tail || n >= 64 * order {
                // Remaining geometric tail with ratio bounded by t (n large).
                let ratio = t * ((nf + 1.0) / nf).powi(2);
                if ratio < 1.0 {
                    tail += term * ratio / (1.0 - ratio);
                } else {
                    return f64::INFINITY;
                }
                break;
            }
            tp *= t;
            n += 1;
        }
        tail
    }
}

/// Average-referenced potential (V) of a dipole with moment `moment` (A·m) at
/// `position` (mm).
pub fn dipole_potential(
    model: &ShellModel,
    position: &Point3,
    moment: &Point3,
    electrodes: &[Point3],
) -> Result<Vec<f64>> {
    let kernel = model.kernel()?;
    let unit = kernel.unit_potentials(position, electrodes)?;
    let mut v: Vec<f64> = unit.iter().map(|u| u[0] * moment[0] + u[1] * moment[1] + u[2] * moment[2]).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    Ok(v)
}
