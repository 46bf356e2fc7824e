//! Simulation proxy: outlier pruning, the convex hull around the object's
//! Gaussian centers, and interior particle sampling.

mod hull;

pub use hull::{bounds, build_hull, ConvexHull};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::spatial::KdTree;

/// Fewest particles `sample_particles` will accept.
pub const MIN_PARTICLES: usize = 64;
/// Particle count the default spacing aims for.
pub const DEFAULT_PARTICLE_TARGET: usize = 4000;
/// Maximum jitter as a fraction of the grid spacing.
const JITTER: f64 = 0.25;

/// Object Gaussians having at least `min_neighbors` other object centers
/// within `radius`. Returned indices point into `set.gaussians`, ascending.
pub fn prune_outliers(set: &GaussianSet, radius: f64, min_neighbors: usize) -> Result<Vec<usize>> {
    if !(radius > 0.0) || min_neighbors == 0 {
        return Err(Error::InvalidInput(format!(
            "pruning needs radius > 0 and min_neighbors >= 1 (got {radius}, {min_neighbors})"
        )));
    }
    let centers = set.object_centers();
    let tree = KdTree::new(&centers);
    let kept: Vec<usize> = set
        .object_mask
        .iter()
        .zip(&centers)
        .filter(|(_, c)| tree.within(c, radius).len() > min_neighbors)
        .map(|(&i, _)| i)
        .collect();
    if kept.is_empty() {
        return Err(Error::DegenerateObject(format!(
            "pruning with radius {radius} and min_neighbors {min_neighbors} removed every gaussian"
        )));
    }
    Ok(kept)
}

/// Default pruning radius: three times the mean nearest-neighbour distance,
/// estimated on an evenly strided subsample of at most 1000 centers.
pub fn default_prune_radius(centers: &[Vector3<f64>]) -> f64 {
    if centers.len() < 2 {
        return f64::INFINITY;
    }
    let tree = KdTree::new(centers);
    let stride = centers.len().div_ceil(1000);
    let (sum, n) = centers
        .iter()
        .step_by(stride)
        .map(|c| tree.nearest(c, 2)[1].1.sqrt())
        .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    let mean = sum / n as f64;
    if mean > 0.0 {
        3.0 * mean
    } else {
        f64::INFINITY
    }
}

pub const DEFAULT_MIN_NEIGHBORS: usize = 4;

/// Interior particles of the proxy at rest.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSeed {
    pub positions: Vec<Vector3<f64>>,
    pub rest_volume: Vec<f64>,
    /// Index into the region list the particle belongs to.
    pub material_region: Vec<usize>,
    pub spacing: f64,
}

impl ParticleSeed {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// A seed from explicit positions, all in region 0, each with volume `spacing³`.
    pub fn from_positions(positions: Vec<Vector3<f64>>, spacing: f64) -> Self {
        let n = positions.len();
        ParticleSeed {
            positions,
            rest_volume: vec![spacing.powi(3); n],
            material_region: vec![0; n],
            spacing,
        }
    }
}

/// Grid spacing that yields roughly `target` particles inside `hull`.
pub fn spacing_for_count(hull: &ConvexHull, target: usize) -> f64 {
    (hull.volume() / target.max(1) as f64).cbrt()
}

/// Jittered regular-grid samples strictly inside `hull`.
pub fn sample_particles(hull: &ConvexHull, target_spacing: f64, seed: u64) -> Result<ParticleSeed> {
    if !(target_spacing > 0.0 && target_spacing.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "particle spacing must be positive, got {target_spacing}"
        )));
    }
    let (lo, hi) = hull.bounds();
    let extent = hi - lo;
    let counts = extent.map(|e| ((e / target_spacing).round() as usize).max(1));
    let total = counts.iter().product::<usize>();
    if total > 50_000_000 {
        return Err(Error::InvalidInput(format!(
            "spacing {target_spacing} would need a {total}-point sampling grid"
        )));
    }
    let start = Vector3::from_fn(|k, _| {
        lo[k] + 0.5 * (extent[k] - (counts[k] as f64 - 1.0) * target_spacing)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = JITTER * target_spacing;
    let mut positions = Vec::new();
    for i in 0..counts.x {
        for j in 0..counts.y {
            for k in 0..counts.z {
                // Draw jitter for every grid point so the stream is layout-independent.
                let jitter = Vector3::new(
                    rng.gen_range(-amp..=amp),
                    rng.gen_range(-amp..=amp),
                    rng.gen_range(-amp..=amp),
                );
                let p =
                    start + Vector3::new(i as f64, j as f64, k as f64) * target_spacing + jitter;
                if hull.signed_distance_bound(&p) < 0.0 {
                    positions.push(p);
                }
            }
        }
    }
    if positions.len() < MIN_PARTICLES {
        return Err(Error::TooFewParticles {
            spacing: target_spacing,
            count: positions.len(),
            min: MIN_PARTICLES,
        });
    }
    Ok(ParticleSeed::from_positions(positions, target_spacing))
}

/// Geometric test selecting a material region, in scene units.
#[derive(Clone, Debug, PartialEq)]
pub enum RegionPredicate {
    All,
    HalfSpace {
        axis: usize,
        threshold: f64,
        above: bool,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
}

impl RegionPredicate {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            RegionPredicate::All => true,
            RegionPredicate::HalfSpace {
                axis,
                threshold,
                above,
            } => {
                if *above {
                    p[*axis] > *threshold
                } else {
                    p[*axis] <= *threshold
                }
            }
            RegionPredicate::Sphere { center, radius } => (p - center).norm() <= *radius,
        }
    }
}

/// Label every particle with the first matching region. The last region
/// catches everything the others did not claim, whatever its predicate.
pub fn assign_regions(mut seed: ParticleSeed, regions: &[RegionPredicate]) -> ParticleSeed {
    let last = regions.len().saturating_sub(1);
    for (label, p) in seed.material_region.iter_mut().zip(&seed.positions) {
        *label = regions[..last]
            .iter()
            .position(|r| r.contains(p))
            .unwrap_or(last);
    }
    seed
}
