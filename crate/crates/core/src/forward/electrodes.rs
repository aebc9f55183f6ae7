use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point3};

const ON_SHELL_TOL_MM: f64 = 1e-9;
pub const MIN_ELECTRODES: usize = 16;

/// Electrodes on the outer shell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    /// Positions in mm.
    pub positions: Vec<Point3>,
    /// Largest polar angle (rad) of the covered cap.
    pub cap_extent: f64,
}

impl ElectrodeLayout {
    pub fn new(positions: Vec<Point3>, cap_extent: f64, outer_radius: f64) -> Result<Self> {
        if positions.len() < MIN_ELECTRODES {
            return Err(Error::InvalidValue(format!(
                "at least {MIN_ELECTRODES} electrodes required, got {}",
                positions.len()
            )));
        }
        for (i, p) in positions.iter().enumerate() {
            let r = geometry::norm(p);
            if !((r - outer_radius).abs() <= ON_SHELL_TOL_MM) {
                return Err(Error::InvalidValue(format!(
                    "electrode {i} at radius {r} mm is off the {outer_radius} mm shell"
                )));
            }
        }
        Ok(Self { positions, cap_extent })
    }

    /// `m` electrodes on a Fibonacci spiral over the cap `polar <= cap_extent`.
    ///
    /// Points are equal-area spaced in `cos(polar)` and advance by the golden
    /// angle in azimuth.
    pub fn fibonacci_cap(m: usize, outer_radius: f64, cap_extent: f64) -> Result<Self> {
        if !(cap_extent > 0.0 && cap_extent <= std::f64::consts::PI) {
            return Err(Error::InvalidValue(format!("cap extent {cap_extent} rad outside (0, π]")));
        }
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let z_min = cap_extent.cos();
        let positions = (0..m)
            .map(|i| {
                let z = 1.0 - (i as f64 + 0.5) / m as f64 * (1.0 - z_min);
                let rho = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * i as f64;
                let dir = [rho * phi.cos(), rho * phi.sin(), z];
                // Renormalize so every electrode sits on the shell to rounding.
                let dir = geometry::normalized(&dir).expect("unit direction");
                geometry::scale(&dir, outer_radius)
            })
            .collect();
        Self::new(positions, cap_extent, outer_radius)
    }

    /// 128 electrodes on the upper cap down to 120° polar angle.
    pub fn default_cap(outer_radius: f64) -> Self {
        Self::fibonacci_cap(128, outer_radius, 120f64.to_radians()).expect("valid default montage")
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}
