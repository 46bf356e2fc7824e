//! Particle-to-Gaussian skinning and fluid hole filling.
//!
//! Each object Gaussian is bound at rest to its K nearest particles with
//! normalized inverse-square-distance weights. A frame moves its center by
//! the blended particle motion and its covariance by the blended
//! deformation gradient.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{logit, transform_covariance, GaussianSet, SymCov};
use crate::io::{AnimFrame, SpawnedGaussian};
use crate::spatial::{HashGrid, KdTree};

pub const DEFAULT_K: usize = 8;
/// Rest Gaussian neighbours used to measure local spacing.
pub const SPACING_NEIGHBORS: usize = 6;

/// ε as a fraction of the squared scene diagonal.
pub fn default_epsilon(diagonal: f64) -> f64 {
    1e-8 * diagonal * diagonal
}

/// Rest-pose binding of object Gaussians to simulation particles.
#[derive(Clone, Debug, PartialEq)]
pub struct Binding {
    /// Bound Gaussians, as indices into the base set.
    pub gaussian_indices: Vec<usize>,
    pub k: usize,
    /// `k` particle ids per bound Gaussian, nearest first.
    pub neighbors: Vec<usize>,
    /// `k` weights per bound Gaussian, summing to one.
    pub weights: Vec<f64>,
    /// Mean rest distance to the nearest other bound Gaussians.
    pub rest_spacing: Vec<f64>,
    /// Those neighbours, as indices into the base set.
    pub spacing_neighbors: Vec<Vec<usize>>,
    pub epsilon: f64,
    pub particle_count: usize,
    /// Particle rest positions the binding was built against.
    pub rest_particles: Vec<Vector3<f64>>,
}

impl Binding {
    pub fn len(&self) -> usize {
        self.gaussian_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussian_indices.is_empty()
    }

    pub fn neighbors_of(&self, local: usize) -> &[usize] {
        &self.neighbors[local * self.k..(local + 1) * self.k]
    }

    pub fn weights_of(&self, local: usize) -> &[f64] {
        &self.weights[local * self.k..(local + 1) * self.k]
    }
}

/// Normalized weights ∝ (d² + ε)⁻¹. A zero denominator takes all the weight.
pub fn idw_weights(dist2: &[f64], epsilon: f64) -> Vec<f64> {
    if let Some(hit) = dist2.iter().position(|&d| d + epsilon == 0.0) {
        let mut w = vec![0.0; dist2.len()];
        w[hit] = 1.0;
        return w;
    }
    let raw: Vec<f64> = dist2.iter().map(|&d| 1.0 / (d + epsilon)).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|w| w / sum).collect()
}

/// Bind the object Gaussians of `base` to `rest_particles`.
pub fn bind(
    base: &GaussianSet,
    rest_particles: &[Vector3<f64>],
    k: usize,
    epsilon: f64,
) -> Result<Binding> {
    bind_indices(base, &base.object_mask, rest_particles, k, epsilon)
}

/// Bind the Gaussians `indices` of `base`.
pub fn bind_indices(
    base: &GaussianSet,
    indices: &[usize],
    rest_particles: &[Vector3<f64>],
    k: usize,
    epsilon: f64,
) -> Result<Binding> {
    if k == 0 || k > rest_particles.len() {
        return Err(Error::Config(format!(
            "K = {k} neighbours requested from {} particles",
            rest_particles.len()
        )));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon {epsilon} must be >= 0")));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= base.len()) {
        return Err(Error::InvalidInput(format!(
            "gaussian index {bad} out of range"
        )));
    }
    let tree = KdTree::new(rest_particles);
    let per: Vec<(Vec<usize>, Vec<f64>)> = indices
        .par_iter()
        .map(|&g| {
            let nn = tree.nearest(&base.gaussians[g].center, k);
            let d2: Vec<f64> = nn.iter().map(|n| n.1).collect();
            (nn.iter().map(|n| n.0).collect(), idw_weights(&d2, epsilon))
        })
        .collect();
    let mut neighbors = Vec::with_capacity(indices.len() * k);
    let mut weights = Vec::with_capacity(indices.len() * k);
    for (n, w) in per {
        neighbors.extend(n);
        weights.extend(w);
    }

    let centers: Vec<Vector3<f64>> = indices.iter().map(|&g| base.gaussians[g].center).collect();
    let (rest_spacing, spacing_neighbors) = gaussian_spacing(&centers, indices);
    Ok(Binding {
        gaussian_indices: indices.to_vec(),
        k,
        neighbors,
        weights,
        rest_spacing,
        spacing_neighbors,
        epsilon,
        particle_count: rest_particles.len(),
        rest_particles: rest_particles.to_vec(),
    })
}

fn gaussian_spacing(centers: &[Vector3<f64>], indices: &[usize]) -> (Vec<f64>, Vec<Vec<usize>>) {
    if centers.len() < 2 {
        return (vec![0.0; centers.len()], vec![Vec::new(); centers.len()]);
    }
    let tree = KdTree::new(centers);
    let m = SPACING_NEIGHBORS.min(centers.len() - 1);
    centers
        .par_iter()
        .enumerate()
        .map(|(a, c)| {
            let nn: Vec<(usize, f64)> = tree
                .nearest(c, m + 1)
                .into_iter()
                .filter(|&(b, _)| b != a)
                .take(m)
                .collect();
            let mean = nn.iter().map(|n| n.1.sqrt()).sum::<f64>() / nn.len() as f64;
            (mean, nn.iter().map(|n| indices[n.0]).collect())
        })
        .unzip()
}

/// How blended particle motion moves a Gaussian center.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CenterMode {
    /// ĉ = c + Σ w (d + (F − I)(c − p⁰)): each particle carries the center
    /// with its local affine motion. Exact for any global rigid motion.
    #[default]
    Affine,
    /// ĉ = c + Σ w d. Exact for translations only.
    Displacement,
}

fn check_lengths(binding: &Binding, rest: &AnimFrame, counts: &[usize]) -> Result<()> {
    for &n in counts {
        if n != binding.particle_count {
            return Err(Error::InvalidInput(format!(
                "{n} particle values for a binding over {} particles",
                binding.particle_count
            )));
        }
    }
    if let Some(&g) = binding.gaussian_indices.iter().find(|&&g| g >= rest.len()) {
        return Err(Error::InvalidInput(format!(
            "bound gaussian {g} outside the frame"
        )));
    }
    Ok(())
}

/// Pose the bound Gaussians of `rest` with Σ̂ = F̂ Σ F̂ᵀ, F̂ = Σ w F, and
/// centers per [`CenterMode::Affine`]. Unbound Gaussians keep their rest values.
pub fn skin_frame(
    binding: &Binding,
    rest: &AnimFrame,
    displacements: &[Vector3<f64>],
    gradients: &[Matrix3<f64>],
) -> Result<AnimFrame> {
    skin_frame_with(binding, rest, displacements, gradients, CenterMode::Affine)
}

pub fn skin_frame_with(
    binding: &Binding,
    rest: &AnimFrame,
    displacements: &[Vector3<f64>],
    gradients: &[Matrix3<f64>],
    mode: CenterMode,
) -> Result<AnimFrame> {
    check_lengths(binding, rest, &[displacements.len(), gradients.len()])?;
    let posed: Vec<(Vector3<f64>, SymCov)> = (0..binding.len())
        .into_par_iter()
        .map(|j| {
            let g = binding.gaussian_indices[j];
            let c = rest.centers[g];
            let mut d = Vector3::zeros();
            let mut f = Matrix3::zeros();
            for (&p, &w) in binding.neighbors_of(j).iter().zip(binding.weights_of(j)) {
                d += w * displacements[p];
                f += w * gradients[p];
                if mode == CenterMode::Affine {
                    d += w
                        * ((gradients[p] - Matrix3::identity()) * (c - binding.rest_particles[p]));
                }
            }
            (c + d, transform_covariance(&rest.covariances[g], &f))
        })
        .collect();
    let mut frame = rest.clone();
    for (&g, (c, cov)) in binding.gaussian_indices.iter().zip(posed) {
        frame.centers[g] = c;
        frame.covariances[g] = cov;
    }
    Ok(frame)
}

/// Fluid variant: centers move as in `skin_frame`, covariances stay at rest.
pub fn skin_fluid_frame(
    binding: &Binding,
    rest: &AnimFrame,
    displacements: &[Vector3<f64>],
) -> Result<AnimFrame> {
    check_lengths(binding, rest, &[displacements.len()])?;
    let centers: Vec<Vector3<f64>> = (0..binding.len())
        .into_par_iter()
        .map(|j| {
            let g = binding.gaussian_indices[j];
            let d = binding
                .neighbors_of(j)
                .iter()
                .zip(binding.weights_of(j))
                .fold(Vector3::zeros(), |acc, (&p, &w)| acc + w * displacements[p]);
            rest.centers[g] + d
        })
        .collect();
    let mut frame = rest.clone();
    for (&g, c) in binding.gaussian_indices.iter().zip(centers) {
        frame.centers[g] = c;
    }
    Ok(frame)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HoleFillConfig {
    /// A Gaussian is stretched when its mean neighbour distance exceeds
    /// this multiple of its rest spacing.
    pub threshold: f64,
    /// Shell radii in units of the local rest spacing.
    pub shell_radii: Vec<f64>,
    /// Minimum distance between a spawn and any other center. Defaults to
    /// 0.9 × the median rest spacing.
    pub poisson_radius: Option<f64>,
    /// Defaults to 5% of the bound Gaussians.
    pub max_spawn_per_frame: Option<usize>,
}

impl Default for HoleFillConfig {
    fn default() -> Self {
        HoleFillConfig {
            threshold: 1.6,
            shell_radii: vec![1.0, 2.0],
            poisson_radius: None,
            max_spawn_per_frame: None,
        }
    }
}

impl HoleFillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 1.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "hole threshold {} must be > 1",
                self.threshold
            )));
        }
        if self
            .shell_radii
            .iter()
            .any(|r| !(*r > 0.0 && r.is_finite()))
        {
            return Err(Error::Config("shell radii must be > 0".into()));
        }
        if let Some(r) = self.poisson_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("poisson radius {r} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn resolved_poisson_radius(&self, binding: &Binding) -> f64 {
        self.poisson_radius
            .unwrap_or_else(|| 0.9 * median(&binding.rest_spacing))
    }

    pub fn resolved_cap(&self, binding: &Binding) -> usize {
        self.max_spawn_per_frame
            .unwrap_or((binding.len() as f64 * 0.05).floor() as usize)
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// Fixed shell directions: the 6 axes and the 8 cube diagonals.
fn shell_directions() -> Vec<Vector3<f64>> {
    let mut dirs = Vec::with_capacity(14);
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let mut v = Vector3::zeros();
            v[axis] = sign;
            dirs.push(v);
        }
    }
    let d = 1.0 / 3f64.sqrt();
    for i in 0..8 {
        let s = |bit: usize| if i & bit == 0 { d } else { -d };
        dirs.push(Vector3::new(s(1), s(2), s(4)));
    }
    dirs
}

struct Candidate {
    priority: f64,
    center: Vector3<f64>,
    a: usize,
    b: usize,
    spacing: f64,
}

/// Spawn Gaussians into the gaps of a stretched fluid frame. Existing live
/// and spawned centers count as occupied for the Poisson-disk test.
pub fn fill_holes(
    frame: &AnimFrame,
    binding: &Binding,
    base: &GaussianSet,
    cfg: &HoleFillConfig,
) -> Result<AnimFrame> {
    cfg.validate()?;
    if frame.len() != base.len() {
        return Err(Error::InvalidInput(format!(
            "frame has {} gaussians, base has {}",
            frame.len(),
            base.len()
        )));
    }
    let r_pd = cfg.resolved_poisson_radius(binding);
    let cap = cfg.resolved_cap(binding);
    let mut out = frame.clone();
    if cap == 0 || !(r_pd > 0.0) {
        return Ok(out);
    }

    let dirs = shell_directions();
    let mut candidates = Vec::new();
    for (j, &g) in binding.gaussian_indices.iter().enumerate() {
        let rest = binding.rest_spacing[j];
        let nbrs = &binding.spacing_neighbors[j];
        if rest <= 0.0 || nbrs.is_empty() || !frame.alive[g] {
            continue;
        }
        let c = frame.centers[g];
        let dists: Vec<f64> = nbrs
            .iter()
            .map(|&m| (frame.centers[m] - c).norm())
            .collect();
        let mean = dists.iter().sum::<f64>() / dists.len() as f64;
        if mean <= cfg.threshold * rest {
            continue;
        }
        for (&m, &d) in nbrs.iter().zip(&dists) {
            if d <= cfg.threshold * rest || !frame.alive[m] {
                continue;
            }
            let mid = 0.5 * (c + frame.centers[m]);
            candidates.push(Candidate {
                priority: 0.0,
                center: mid,
                a: g,
                b: m,
                spacing: rest,
            });
            for &radius in &cfg.shell_radii {
                for dir in &dirs {
                    candidates.push(Candidate {
                        priority: radius * rest,
                        center: mid + dir * (radius * rest),
                        a: g,
                        b: m,
                        spacing: rest,
                    });
                }
            }
        }
    }
    // Stable: equal priorities keep generation order.
    candidates.sort_by(|x, y| x.priority.total_cmp(&y.priority));

    let mut occupied = HashGrid::new(r_pd);
    let mut points: Vec<Vector3<f64>> = Vec::new();
    let occupy = |grid: &mut HashGrid, points: &mut Vec<Vector3<f64>>, p: Vector3<f64>| {
        grid.insert(points.len(), &p);
        points.push(p);
    };
    for (c, &alive) in frame.centers.iter().zip(&frame.alive) {
        if alive {
            occupy(&mut occupied, &mut points, *c);
        }
    }
    for s in &frame.spawned {
        occupy(&mut occupied, &mut points, s.center);
    }
    let r2 = r_pd * r_pd;
    let mut accepted = 0;
    for cand in candidates {
        if accepted == cap {
            break;
        }
        let mut free = true;
        occupied.for_each_near(&cand.center, |i| {
            free &= (points[i] - cand.center).norm_squared() >= r2;
        });
        if !free {
            continue;
        }
        occupy(&mut occupied, &mut points, cand.center);
        out.spawned.push(spawn_between(base, frame, &cand));
        accepted += 1;
    }
    Ok(out)
}

fn spawn_between(base: &GaussianSet, frame: &AnimFrame, cand: &Candidate) -> SpawnedGaussian {
    let da = (frame.centers[cand.a] - cand.center).norm();
    let db = (frame.centers[cand.b] - cand.center).norm();
    // Inverse-distance interpolation between the endpoints.
    let wa = if da + db > 0.0 { db / (da + db) } else { 0.5 };
    let ga = &base.gaussians[cand.a];
    let gb = &base.gaussians[cand.b];
    let (ca, cb) = (ga.dc_rgb(), gb.dc_rgb());
    let rgb = [0, 1, 2].map(|k| {
        let v = wa * ca[k] + (1.0 - wa) * cb[k];
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    });
    let opacity = wa * ga.opacity() + (1.0 - wa) * gb.opacity();
    let sigma = 0.5 * cand.spacing;
    SpawnedGaussian {
        center: cand.center,
        covariance: SymCov::from_matrix(&(Matrix3::identity() * (sigma * sigma))),
        rgb,
        opacity: opacity as f32,
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Persistent {
    particle: usize,
    offset: Vector3<f64>,
    gaussian: SpawnedGaussian,
}

/// Hole filling across a run: spawned Gaussians persist and ride along
/// with the particle nearest to where they were spawned.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HoleFiller {
    pub config: HoleFillConfig,
    spawned: Vec<Persistent>,
}

impl HoleFiller {
    pub fn new(config: HoleFillConfig) -> Result<Self> {
        config.validate()?;
        Ok(HoleFiller {
            config,
            spawned: Vec::new(),
        })
    }

    pub fn spawned_count(&self) -> usize {
        self.spawned.len()
    }

    pub fn reset(&mut self) {
        self.spawned.clear();
    }

    /// Carry earlier spawns along, then fill new holes in `frame`.
    pub fn apply(
        &mut self,
        frame: &AnimFrame,
        binding: &Binding,
        base: &GaussianSet,
        particles: &[Vector3<f64>],
    ) -> Result<AnimFrame> {
        let mut carried = frame.clone();
        for s in &self.spawned {
            let mut g = s.gaussian.clone();
            g.center = particles[s.particle] + s.offset;
            carried.spawned.push(g);
        }
        let before = carried.spawned.len();
        let filled = fill_holes(&carried, binding, base, &self.config)?;
        if filled.spawned.len() > before {
            let tree = KdTree::new(particles);
            for g in &filled.spawned[before..] {
                let (p, _) = tree.nearest(&g.center, 1)[0];
                self.spawned.push(Persistent {
                    particle: p,
                    offset: g.center - particles[p],
                    gaussian: g.clone(),
                });
            }
        }
        Ok(filled)
    }
}

/// Opacity logit of a spawned Gaussian, for baking it into a set.
pub fn spawned_opacity_logit(s: &SpawnedGaussian) -> f64 {
    logit(s.opacity as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set_at(points: &[Vector3<f64>]) -> GaussianSet {
        GaussianSet::all_object(
            points
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let mut g =
                        Gaussian::isotropic(c, 0.02 + 0.001 * i as f64, [0.2, 0.4, 0.9], 0.8);
                    g.log_scale.x += 0.3;
                    g
                })
                .collect(),
        )
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect()
    }

    #[test]
    fn symmetric_pair_gets_equal_weights() {
        let base = set_at(&[Vector3::zeros()]);
        let particles = [Vector3::x(), -Vector3::x()];
        let b = bind(&base, &particles, 2, 0.0).unwrap();
        assert_eq!(b.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn hand_evaluated_weights() {
        let base = set_at(&[Vector3::zeros()]);
        let particles = [Vector3::x(), Vector3::y() * 2.0];
        let b = bind(&base, &particles, 2, 0.0).unwrap();
        // 1/1 and 1/4 normalized.
        assert!((b.weights[0] - 0.8).abs() < 1e-15);
        assert!((b.weights[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn coincident_particle_dominates() {
        let base = set_at(&[Vector3::new(0.5, 0.5, 0.5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut particles = random_points(&mut rng, 50);
        particles[17] = Vector3::new(0.5, 0.5, 0.5);
        let b = bind(&base, &particles, 8, 1e-8).unwrap();
        assert_eq!(b.neighbors[0], 17);
        assert!(b.weights[0] >= 0.999);
        let exact = bind(&base, &particles, 8, 0.0).unwrap();
        assert_eq!(exact.weights[0], 1.0);
    }

    #[test]
    fn k_larger_than_particles_rejected() {
        let base = set_at(&[Vector3::zeros()]);
        assert!(matches!(
            bind(&base, &[Vector3::x()], 2, 0.0),
            Err(Error::Config(_))
        ));
        assert!(bind(&base, &[Vector3::x()], 0, 0.0).is_err());
    }

    #[test]
    fn neighbors_are_exact_knn_with_low_index_ties() {
        let particles: Vec<_> = (0..4)
            .map(|i| Vector3::new(if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0, 0.0))
            .collect();
        let base = set_at(&[Vector3::zeros()]);
        let b = bind(&base, &particles, 3, 0.0).unwrap();
        assert_eq!(b.neighbors, vec![0, 1, 2]);
    }

    #[test]
    fn rest_pose_reproduces_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = set_at(&random_points(&mut rng, 40));
        let particles = random_points(&mut rng, 30);
        let b = bind(&base, &particles, DEFAULT_K, 1e-8).unwrap();
        let rest = AnimFrame::rest(&base).unwrap();
        let frame = skin_frame(
            &b,
            &rest,
            &vec![Vector3::zeros(); 30],
            &vec![Matrix3::identity(); 30],
        )
        .unwrap();
        for (a, r) in frame.covariances.iter().zip(&rest.covariances) {
            for k in 0..6 {
                assert!((a.0[k] - r.0[k]).abs() < 1e-15);
            }
        }
        assert_eq!(frame.centers, rest.centers);
    }

    #[test]
    fn global_rigid_motion_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = set_at(&random_points(&mut rng, 200));
        let particles = random_points(&mut rng, 100);
        let b = bind(&base, &particles, DEFAULT_K, default_epsilon(3f64.sqrt())).unwrap();
        let rest = AnimFrame::rest(&base).unwrap();
        let axis = Unit::new_normalize(Vector3::new(0.3, -0.5, 0.8));
        let r = *Rotation3::from_axis_angle(&axis, 0.7).matrix();
        let t = Vector3::new(0.2, 1.0, -0.4);
        let centroid = Vector3::repeat(0.5);
        let d: Vec<_> = particles
            .iter()
            .map(|p| r * (p - centroid) + centroid + t - p)
            .collect();
        let frame = skin_frame(&b, &rest, &d, &vec![r; 100]).unwrap();
        for (j, g) in base.gaussians.iter().enumerate() {
            let want = r * (g.center - centroid) + centroid + t;
            assert!((frame.centers[j] - want).norm() < 1e-9);
            let sigma = g.covariance().unwrap().to_matrix();
            let want_cov = r * sigma * r.transpose();
            assert!((frame.covariances[j].to_matrix() - want_cov).norm() < 1e-12);
        }
    }

    #[test]
    fn displacement_mode_is_off_under_rotation() {
        let base = set_at(&[Vector3::new(1.0, 0.0, 0.0)]);
        let particles = [Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)];
        let b = bind(&base, &particles, 2, 0.0).unwrap();
        let rest = AnimFrame::rest(&base).unwrap();
        let r = *Rotation3::from_axis_angle(&Vector3::z_axis(), 0.5).matrix();
        let d: Vec<_> = particles.iter().map(|p| r * p - p).collect();
        let plain = skin_frame_with(&b, &rest, &d, &[r; 2], CenterMode::Displacement).unwrap();
        let affine = skin_frame(&b, &rest, &d, &[r; 2]).unwrap();
        let want = r * Vector3::new(1.0, 0.0, 0.0);
        assert!((affine.centers[0] - want).norm() < 1e-12);
        // Weights are (2/3, 1/3), so the weighted rest particle mean is (0, 1/3, 0).
        let lag = (r - Matrix3::identity()) * (Vector3::new(0.0, 1.0 / 3.0, 0.0) - Vector3::x());
        assert!((plain.centers[0] - (want + lag)).norm() < 1e-12);
    }

    #[test]
    fn unbound_gaussians_keep_rest_values() {
        let mut base = set_at(&[Vector3::zeros(), Vector3::x(), Vector3::y()]);
        base.set_object_mask(vec![1]).unwrap();
        let particles = [Vector3::zeros(), Vector3::z()];
        let b = bind(&base, &particles, 2, 0.0).unwrap();
        let rest = AnimFrame::rest(&base).unwrap();
        let d = vec![Vector3::z(); 2];
        let frame = skin_frame(&b, &rest, &d, &[Matrix3::identity(); 2]).unwrap();
        assert_eq!(frame.centers[0], rest.centers[0]);
        assert_eq!(frame.centers[1], Vector3::new(1.0, 0.0, 1.0));
        assert_eq!(frame.centers[2], rest.centers[2]);
    }

    #[test]
    fn wrong_particle_count_rejected() {
        let base = set_at(&[Vector3::zeros()]);
        let b = bind(&base, &[Vector3::x(), Vector3::y()], 1, 0.0).unwrap();
        let rest = AnimFrame::rest(&base).unwrap();
        assert!(skin_fluid_frame(&b, &rest, &[Vector3::zeros()]).is_err());
    }

    #[test]
    fn fluid_frame_keeps_covariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = set_at(&random_points(&mut rng, 50));
        let particles = random_points(&mut rng, 20);
        let b = bind(&base, &particles, 4, 1e-8).unwrap();
        let rest = AnimFrame::rest(&base).unwrap();
        let d: Vec<_> = (0..20)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let frame = skin_fluid_frame(&b, &rest, &d).unwrap();
        assert_eq!(frame.covariances, rest.covariances);
        let t = Vector3::new(0.1, 0.2, 0.3);
        let shifted = skin_fluid_frame(&b, &rest, &vec![t; 20]).unwrap();
        for (c, r) in shifted.centers.iter().zip(&rest.centers) {
            assert!((c - (r + t)).norm() < 1e-12);
        }
    }

    #[test]
    fn no_stretch_no_spawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = set_at(&random_points(&mut rng, 60));
        let b = bind(&base, &random_points(&mut rng, 20), 4, 1e-8).unwrap();
        let rest = AnimFrame::rest(&base).unwrap();
        let out = fill_holes(&rest, &b, &base, &HoleFillConfig::default()).unwrap();
        assert_eq!(out, rest);
    }

    #[test]
    fn pulled_pair_spawns_between() {
        let base = set_at(&[Vector3::zeros(), Vector3::x() * 0.1]);
        let b = bind(&base, &[Vector3::zeros(), Vector3::x() * 0.1], 1, 0.0).unwrap();
        assert!((b.rest_spacing[0] - 0.1).abs() < 1e-12);
        let mut frame = AnimFrame::rest(&base).unwrap();
        frame.centers[1] = Vector3::x() * 0.3;
        let cfg = HoleFillConfig {
            max_spawn_per_frame: Some(10),
            ..HoleFillConfig::default()
        };
        let out = fill_holes(&frame, &b, &base, &cfg).unwrap();
        assert!(!out.spawned.is_empty());
        let first = &out.spawned[0];
        assert!((first.center - Vector3::x() * 0.15).norm() < 1e-12);
        assert!(first.center.x > 0.0 && first.center.x < 0.3);
        let r_pd = cfg.resolved_poisson_radius(&b);
        let all: Vec<Vector3<f64>> = frame
            .centers
            .iter()
            .copied()
            .chain(out.spawned.iter().map(|s| s.center))
            .collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if i >= 2 || j >= 2 {
                    assert!((all[i] - all[j]).norm() >= r_pd);
                }
            }
        }
        assert!(out.spawned.len() <= 10);
        assert_eq!(
            first.rgb,
            base.gaussians[0]
                .dc_rgb()
                .map(|c| (c * 255.0).round() as u8)
        );
    }

    #[test]
    fn spawn_cap_is_respected() {
        let pts: Vec<_> = (0..20).map(|i| Vector3::x() * (0.1 * i as f64)).collect();
        let base = set_at(&pts);
        let b = bind(&base, &pts, 1, 0.0).unwrap();
        let mut frame = AnimFrame::rest(&base).unwrap();
        for c in &mut frame.centers {
            *c *= 4.0;
        }
        for cap in [0, 1, 3] {
            let cfg = HoleFillConfig {
                max_spawn_per_frame: Some(cap),
                ..HoleFillConfig::default()
            };
            assert_eq!(
                fill_holes(&frame, &b, &base, &cfg).unwrap().spawned.len(),
                cap
            );
        }
    }

    #[test]
    fn filler_carries_spawns_with_particles() {
        let pts = [Vector3::zeros(), Vector3::x() * 0.1];
        let base = set_at(&pts);
        let b = bind(&base, &pts, 1, 0.0).unwrap();
        let mut filler = HoleFiller::new(HoleFillConfig {
            max_spawn_per_frame: Some(1),
            ..HoleFillConfig::default()
        })
        .unwrap();
        let mut frame = AnimFrame::rest(&base).unwrap();
        frame.centers[1] = Vector3::x() * 0.3;
        let particles = vec![Vector3::zeros(), Vector3::x() * 0.3];
        let first = filler.apply(&frame, &b, &base, &particles).unwrap();
        assert_eq!(first.spawned.len(), 1);
        assert_eq!(filler.spawned_count(), 1);
        let moved: Vec<_> = particles.iter().map(|p| p + Vector3::z()).collect();
        let mut next = frame.clone();
        for c in &mut next.centers {
            *c += Vector3::z();
        }
        let second = filler.apply(&next, &b, &base, &moved).unwrap();
        assert!(
            (second.spawned[0].center - (first.spawned[0].center + Vector3::z())).norm() < 1e-12
        );
        // The midpoint is taken, so any new spawn lands on a shell.
        assert!(second.spawned.len() <= 2);
        for s in &second.spawned[1..] {
            assert!((s.center - second.spawned[0].center).norm() >= 0.09 - 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn weights_partition_unity(seed in 0u64..1000, k in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = set_at(&random_points(&mut rng, 30));
            let particles = random_points(&mut rng, 16);
            let b = bind(&base, &particles, k, 1e-8).unwrap();
            for j in 0..b.len() {
                let w = b.weights_of(j);
                prop_assert_eq!(w.len(), k);
                prop_assert!(w.iter().all(|&x| x >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn translation_equivariance(seed in 0u64..1000, tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = set_at(&random_points(&mut rng, 25));
            let particles = random_points(&mut rng, 12);
            let b = bind(&base, &particles, 8, 1e-8).unwrap();
            let rest = AnimFrame::rest(&base).unwrap();
            let t = Vector3::new(tx, ty, tz);
            let frame = skin_frame(&b, &rest, &vec![t; 12], &vec![Matrix3::identity(); 12]).unwrap();
            for (c, r) in frame.centers.iter().zip(&rest.centers) {
                prop_assert!((c - (r + t)).norm() < 1e-12);
            }
            for (a, r) in frame.covariances.iter().zip(&rest.covariances) {
                for k in 0..6 {
                    prop_assert!((a.0[k] - r.0[k]).abs() <= 1e-12 * r.0[0].abs().max(r.0[3].abs()));
                }
            }
        }

        #[test]
        fn fill_output_is_poisson_disk(seed in 0u64..1000, stretch in 1.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, 40);
            let base = set_at(&pts);
            let b = bind(&base, &pts, 4, 1e-8).unwrap();
            let mut frame = AnimFrame::rest(&base).unwrap();
            for c in &mut frame.centers {
                c.x *= stretch;
            }
            let cfg = HoleFillConfig { max_spawn_per_frame: Some(40), ..HoleFillConfig::default() };
            let out = fill_holes(&frame, &b, &base, &cfg).unwrap();
            let r_pd = cfg.resolved_poisson_radius(&b);
            prop_assert!(out.spawned.len() <= 40);
            for (i, s) in out.spawned.iter().enumerate() {
                for c in &frame.centers {
                    prop_assert!((s.center - c).norm() >= r_pd);
                }
                for t in &out.spawned[i + 1..] {
                    prop_assert!((s.center - t.center).norm() >= r_pd);
                }
            }
        }
    }
}
