//! Source-space generation and the synthetic dipole presets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{self, Point3};
use crate::model::{Dipole, DipoleConfig, SourceSpace};

/// Reference dipole amplitude, 10 nAm.
pub const REFERENCE_AMPLITUDE_AM: f64 = 1e-8;

/// Cortical-to-thalamic amplitude ratio of configuration I.
pub const CORTICAL_RATIO: f64 = 0.7;

pub const SUPERFICIAL_RADIUS_MM: f64 = 70.0;
pub const DEEP_RADIUS_MM: f64 = 30.0;

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    out
}

/// `n` quasi-uniform positions inside a ball of `radius_mm`.
///
/// A randomly shifted Halton sequence (bases 2, 3, 5) fills the bounding cube
/// and points outside the ball are rejected; the shift comes from `seed`.
pub fn ball_source_space(n: usize, radius_mm: f64, seed: u64) -> Result<SourceSpace> {
    if n == 0 {
        return Err(Error::InvalidValue("source count must be positive".into()));
    }
    if !(radius_mm > 0.0) {
        return Err(Error::InvalidValue(format!("radius {radius_mm} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let bases = [2u64, 3, 5];
    let r2 = radius_mm * radius_mm;
    let mut positions = Vec::with_capacity(n);
    let mut index = 1u64;
    while positions.len() < n {
        let mut p = [0.0; 3];
        for k in 0..3 {
            let u = (radical_inverse(index, bases[k]) + shift[k]).fract();
            p[k] = (2.0 * u - 1.0) * radius_mm;
        }
        index += 1;
        if geometry::dot(&p, &p) < r2 {
            positions.push(p);
        }
    }
    SourceSpace::free(positions)
}

/// Named synthetic configuration snapped onto `space`.
///
/// * `I`: a superficial dipole (70 mm, tangential) at 70 % of the amplitude of
///   a deep vertical dipole (30 mm).
/// * `II`: a single deep vertical dipole (30 mm).
///
/// Positions are moved to the nearest source position so the truth is
/// representable on the grid.
pub fn preset_configuration(name: &str, space: &SourceSpace) -> Result<DipoleConfig> {
    let nominal = nominal_preset(name)?;
    let dipoles = nominal
        .dipoles
        .into_iter()
        .map(|d| {
            let (idx, _) = space.nearest(&d.position);
            Dipole { position: *space.position(idx), ..d }
        })
        .collect();
    DipoleConfig::new(dipoles, nominal.label)
}

/// Off-grid preset definitions.
pub fn nominal_preset(name: &str) -> Result<DipoleConfig> {
    let deg = std::f64::consts::PI / 180.0;
    let on_ray = |radius: f64, polar: f64, azimuth: f64| -> Point3 {
        [
            radius * polar.sin() * azimuth.cos(),
            radius * polar.sin() * azimuth.sin(),
            radius * polar.cos(),
        ]
    };
    match name {
        "I" => {
            let polar = 35.0 * deg;
            let cortical = Dipole {
                position: on_ray(SUPERFICIAL_RADIUS_MM, polar, 180.0 * deg),
                // Tangential to the sphere, in the xz-plane.
                moment: [polar.cos(), 0.0, polar.sin()],
                amplitude: CORTICAL_RATIO * REFERENCE_AMPLITUDE_AM,
            };
            let thalamic = Dipole {
                position: on_ray(DEEP_RADIUS_MM, 30.0 * deg, 180.0 * deg),
                moment: [0.0, 0.0, 1.0],
                amplitude: REFERENCE_AMPLITUDE_AM,
            };
            DipoleConfig::new(vec![cortical, thalamic], "I")
        }
        "II" => {
            let deep = Dipole {
                position: on_ray(DEEP_RADIUS_MM, 30.0 * deg, 270.0 * deg),
                moment: [0.0, 0.0, 1.0],
                amplitude: REFERENCE_AMPLITUDE_AM,
            };
            DipoleConfig::new(vec![deep], "II")
        }
        other => Err(Error::Config(format!("unknown preset configuration {other:?} (expected I or II)"))),
    }
}
