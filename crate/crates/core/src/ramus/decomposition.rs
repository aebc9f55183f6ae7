use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RamusConfig;
use crate::cep::GammaVector;
use crate::error::{Error, Result};
use crate::geometry::{self, Point3};
use crate::model::{CurrentEstimate, LeadField, SourceSpace};

/// One resolution level: a partition of the fine sources into cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Level {
    /// Fine index of each cell's representative, in cell order.
    pub representatives: Vec<usize>,
    /// Cell of every fine source.
    pub assignment: Vec<usize>,
}

impl Level {
    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    /// Number of fine sources in each cell.
    pub fn cell_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.len()];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    fn identity(n: usize) -> Self {
        Self { representatives: (0..n).collect(), assignment: (0..n).collect() }
    }
}

/// Coarse-to-fine ladder of source-space partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiresolutionDecomposition {
    /// Coarsest first; the last level is the identity partition.
    pub levels: Vec<Level>,
    pub seed: u64,
}

impl MultiresolutionDecomposition {
    pub fn level(&self, r: usize) -> Result<&Level> {
        self.levels
            .get(r)
            .ok_or_else(|| Error::LevelSize(format!("level {r} requested from a {}-level decomposition", self.levels.len())))
    }

    pub fn n_fine(&self) -> usize {
        self.levels.last().map_or(0, |l| l.assignment.len())
    }
}

fn bounding_box(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Cells from uniformly drawn centers.
///
/// Each center is drawn uniformly in the bounding box of the source space and
/// moved to the nearest source not already holding a cell, which becomes the
/// representative. Every fine source then joins the cell of its nearest
/// representative, so no cell is empty.
fn sample_level(positions: &[Point3], count: usize, rng: &mut ChaCha8Rng) -> Level {
    let (lo, hi) = bounding_box(positions);
    let mut taken = vec![false; positions.len()];
    let mut representatives = Vec::with_capacity(count);
    while representatives.len() < count {
        let mut center = [0.0; 3];
        for k in 0..3 {
            center[k] = if hi[k] > lo[k] { rng.random_range(lo[k]..hi[k]) } else { lo[k] };
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in positions.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d2 = geometry::distance_sq(p, &center);
            if best.is_none_or(|(_, b)| d2 < b) {
                best = Some((i, d2));
            }
        }
        let (idx, _) = best.expect("fewer centers than sources");
        taken[idx] = true;
        representatives.push(idx);
    }
    let rep_positions: Vec<Point3> = representatives.iter().map(|&i| positions[i]).collect();
    let mut assignment: Vec<usize> =
        positions.iter().map(|p| geometry::nearest(&rep_positions, p).expect("non-empty").0).collect();
    // Coincident positions could otherwise pull a representative elsewhere.
    for (cell, &rep) in representatives.iter().enumerate() {
        assignment[rep] = cell;
    }
    Level { representatives, assignment }
}

/// Random multiresolution decomposition of `space`, deterministic in `seed`.
pub fn sample_decomposition(space: &SourceSpace, cfg: &RamusConfig, seed: u64) -> Result<MultiresolutionDecomposition> {
    let sizes = cfg.level_sizes(space.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = sizes.len() - 1;
    let levels = sizes
        .iter()
        .enumerate()
        .map(|(r, &n_r)| if r == last { Level::identity(n_r) } else { sample_level(space.positions(), n_r, &mut rng) })
        .collect();
    Ok(MultiresolutionDecomposition { levels, seed })
}

/// Leadfield of the level-`r` representatives, one column block per cell.
pub fn restrict_leadfield(leadfield: &LeadField, decomp: &MultiresolutionDecomposition, r: usize) -> Result<LeadField> {
    let level = decomp.level(r)?;
    let k = leadfield.components();
    if leadfield.n_sources() != level.assignment.len() {
        return Err(Error::Shape(format!(
            "leadfield has {} sources, decomposition {}",
            leadfield.n_sources(),
            level.assignment.len()
        )));
    }
    let gain = leadfield.gain();
    let mut out = DMatrix::zeros(gain.nrows(), level.len() * k);
    for (cell, &rep) in level.representatives.iter().enumerate() {
        out.columns_mut(cell * k, k).copy_from(&gain.columns(rep * k, k));
    }
    LeadField::new(out, leadfield.reference(), leadfield.orientation(), format!("{}/r{r}", leadfield.source_space_id()))
}

/// Piecewise-constant extension of a level-`r` estimate to the fine sources.
pub fn prolong_estimate(x_coarse: &CurrentEstimate, decomp: &MultiresolutionDecomposition, r: usize) -> Result<CurrentEstimate> {
    let level = decomp.level(r)?;
    let k = x_coarse.components();
    if x_coarse.n_sources() != level.len() {
        return Err(Error::Shape(format!("estimate has {} sources, level {r} has {} cells", x_coarse.n_sources(), level.len())));
    }
    let coarse = x_coarse.coeffs.as_slice();
    let fine = DVector::from_iterator(
        level.assignment.len() * k,
        level.assignment.iter().flat_map(|&c| coarse[c * k..(c + 1) * k].iter().copied()),
    );
    CurrentEstimate::new(fine, x_coarse.orientation)
}

/// Rates for the level-`r_next` cells, each taken from the level-`r` cell
/// containing its representative.
pub fn prolong_gamma(
    gamma_coarse: &GammaVector,
    decomp: &MultiresolutionDecomposition,
    r: usize,
    r_next: usize,
) -> Result<GammaVector> {
    if r_next < r {
        return Err(Error::LevelSize(format!("cannot prolong from level {r} to coarser level {r_next}")));
    }
    let from = decomp.level(r)?;
    let to = decomp.level(r_next)?;
    if gamma_coarse.len() % from.len() != 0 || gamma_coarse.is_empty() {
        return Err(Error::Shape(format!("{} rates for {} cells", gamma_coarse.len(), from.len())));
    }
    let k = gamma_coarse.len() / from.len();
    let g = gamma_coarse.as_slice();
    let values = DVector::from_iterator(
        to.len() * k,
        to.representatives.iter().flat_map(|&rep| {
            let c = from.assignment[rep];
            g[c * k..(c + 1) * k].iter().copied()
        }),
    );
    GammaVector::new(values)
}
