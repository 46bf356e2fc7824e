//! Particle physics for one object: rigid bodies, elastic MLS-MPM and SPH
//! fluid, advanced frame by frame under gravity, ground contact and pushes.

mod material;
mod mpm;
mod rigid;
mod sph;

pub use material::{corotated_energy, corotated_stress, lame, Material, MaterialKind};
pub use rigid::RigidBody;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::proxy::ParticleSeed;

use sph::FluidRegion;

/// Time-step bound factor for elastic waves across one grid cell.
pub const ELASTIC_CFL: f64 = 0.3;
/// Time-step bound factor for sound across one kernel support.
pub const FLUID_CFL: f64 = 0.25;
/// Substep size used when only rigid bodies are present.
pub const RIGID_DT: f64 = 1e-3;
/// Grid cell size in particle spacings.
pub const CELL_SPACINGS: f64 = 2.0;
/// SPH kernel support in particle spacings.
const SUPPORT_SPACINGS: f64 = 2.0;
/// Push radius in particle spacings when a point is given without a radius.
const PUSH_RADIUS_SPACINGS: f64 = 2.0;

/// Infinite plane; the half-space above `normal` is free.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundPlane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl GroundPlane {
    pub fn new(point: Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let len = normal.norm();
        if !(len > 0.0 && len.is_finite()) || !point.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(
                "ground plane needs a finite point and nonzero normal".into(),
            ));
        }
        Ok(GroundPlane {
            point,
            normal: normal / len,
        })
    }

    /// z-up plane at `height`.
    pub fn horizontal(height: f64) -> Self {
        GroundPlane {
            point: Vector3::new(0.0, 0.0, height),
            normal: Vector3::z(),
        }
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.point).dot(&self.normal)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    /// m/s²
    pub gravity: Vector3<f64>,
    pub ground: Option<GroundPlane>,
    pub fps: f64,
    /// Substep size; derived from the stability bound when `None`.
    pub dt: Option<f64>,
    pub substeps: Option<u32>,
    /// Maximum grid cells across the object's largest extent.
    pub grid_resolution: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            gravity: Vector3::new(0.0, 0.0, -9.81),
            ground: None,
            fps: 30.0,
            dt: None,
            substeps: None,
            grid_resolution: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForceKind {
    /// `magnitude` in N·s, delivered once at `t0`.
    Impulse,
    /// `magnitude` in N, applied over `[t0, t1)`.
    Continuous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExternalForce {
    pub kind: ForceKind,
    /// Unit vector.
    pub direction: Vector3<f64>,
    pub magnitude: f64,
    /// Whole body when `None`.
    pub point: Option<Vector3<f64>>,
    pub radius: Option<f64>,
    pub t0: f64,
    pub t1: f64,
}

impl ExternalForce {
    pub fn impulse(direction: Vector3<f64>, magnitude: f64, t0: f64) -> Self {
        ExternalForce {
            kind: ForceKind::Impulse,
            direction,
            magnitude,
            point: None,
            radius: None,
            t0,
            t1: t0,
        }
    }

    pub fn continuous(direction: Vector3<f64>, magnitude: f64, t0: f64, t1: f64) -> Self {
        ExternalForce {
            kind: ForceKind::Continuous,
            t1,
            ..ExternalForce::impulse(direction, magnitude, t0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(Error::Config(format!(
                "force magnitude {} must be >= 0",
                self.magnitude
            )));
        }
        if (self.direction.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "force direction {:?} is not a unit vector",
                self.direction.as_slice()
            )));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("force radius {r} must be > 0")));
            }
        }
        if !(self.t0 >= 0.0 && self.t1 >= self.t0 && self.t1.is_finite()) {
            return Err(Error::Config(format!(
                "force window [{}, {}] is invalid",
                self.t0, self.t1
            )));
        }
        Ok(())
    }

    fn momentum(&self, scale: f64) -> Vector3<f64> {
        self.direction * (self.magnitude * scale)
    }
}

/// Per-particle arrays plus rigid body poses.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    pub rest_positions: Vec<Vector3<f64>>,
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub gradients: Vec<Matrix3<f64>>,
    /// APIC velocity gradient.
    pub affine: Vec<Matrix3<f64>>,
    pub masses: Vec<f64>,
    pub rest_volumes: Vec<f64>,
    pub material_ids: Vec<usize>,
    pub bodies: Vec<RigidBody>,
    pub body_of: Vec<Option<usize>>,
}

impl ParticleState {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Total linear momentum. Rigid bodies count through their pose state.
    pub fn momentum(&self) -> Vector3<f64> {
        let free = (0..self.len())
            .filter(|&i| self.body_of[i].is_none())
            .fold(Vector3::zeros(), |acc, i| {
                acc + self.masses[i] * self.velocities[i]
            });
        self.bodies
            .iter()
            .fold(free, |acc, b| acc + b.mass * b.velocity)
    }

    /// Σ ½ m |v − v̄|² over the particles of `region`, v̄ being their mass-weighted mean.
    pub fn internal_kinetic_energy(&self, region: usize) -> f64 {
        let ids: Vec<usize> = (0..self.len())
            .filter(|&i| self.material_ids[i] == region)
            .collect();
        let mass: f64 = ids.iter().map(|&i| self.masses[i]).sum();
        if mass == 0.0 {
            return 0.0;
        }
        let mean = ids.iter().fold(Vector3::zeros(), |acc, &i| {
            acc + self.masses[i] * self.velocities[i]
        }) / mass;
        ids.iter()
            .map(|&i| 0.5 * self.masses[i] * (self.velocities[i] - mean).norm_squared())
            .sum()
    }

    pub fn kinetic_energy(&self) -> f64 {
        (0..self.len())
            .map(|i| 0.5 * self.masses[i] * self.velocities[i].norm_squared())
            .sum()
    }

    fn sync_rigid_particles(&mut self) {
        for body in &self.bodies {
            let r = body.rotation_matrix();
            let omega = body.angular_velocity();
            for (&i, off) in body.particles.iter().zip(&body.offsets) {
                let world = r * off;
                self.positions[i] = body.center + world;
                self.velocities[i] = body.velocity + omega.cross(&world);
                self.gradients[i] = r;
            }
        }
    }
}

/// Displacements from rest and deformation gradients at the current time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub displacements: Vec<Vector3<f64>>,
    pub gradients: Vec<Matrix3<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Solver {
    Rigid,
    Mpm,
    Sph,
}

/// A running simulation. One writer at a time.
#[derive(Clone, Debug)]
pub struct Simulation {
    state: ParticleState,
    materials: Vec<Material>,
    world: WorldConfig,
    solver: Solver,
    spacing: f64,
    dx: f64,
    dt: f64,
    substeps: u32,
    frame: u64,
    pending: Vec<ExternalForce>,
    fluid: Vec<Option<FluidRegion>>,
    mpm_ids: Vec<usize>,
    fluid_ids: Vec<usize>,
}

/// Build a simulation at rest from sampled particles.
pub fn init_sim(
    seed: &ParticleSeed,
    materials: &[Material],
    world: &WorldConfig,
) -> Result<Simulation> {
    Simulation::new(seed, materials, world)
}

/// Largest stable substep for these materials.
pub fn stable_dt(materials: &[Material], used: &[bool], spacing: f64, dx: f64) -> f64 {
    let mut dt = f64::INFINITY;
    let mut any_rigid = false;
    for (m, _) in materials.iter().zip(used).filter(|(_, &u)| u) {
        match m.kind {
            MaterialKind::Elastic => dt = dt.min(ELASTIC_CFL * dx / m.elastic_wave_speed()),
            MaterialKind::Fluid => {
                dt = dt.min(FLUID_CFL * SUPPORT_SPACINGS * spacing / m.sound_speed())
            }
            MaterialKind::Rigid => any_rigid = true,
        }
    }
    if dt.is_infinite() && any_rigid {
        dt = RIGID_DT;
    }
    dt
}

/// Grid cell size for a particle spacing and object extent.
pub fn grid_dx(spacing: f64, extent: f64, grid_resolution: usize) -> f64 {
    (CELL_SPACINGS * spacing).max(extent / grid_resolution.max(1) as f64)
}

impl Simulation {
    pub fn new(seed: &ParticleSeed, materials: &[Material], world: &WorldConfig) -> Result<Self> {
        let n = seed.len();
        if n == 0 {
            return Err(Error::Config("no particles to simulate".into()));
        }
        if seed.rest_volume.len() != n || seed.material_region.len() != n {
            return Err(Error::Config(
                "particle seed arrays differ in length".into(),
            ));
        }
        let regions = seed.material_region.iter().max().map_or(0, |m| m + 1);
        if materials.len() < regions {
            return Err(Error::Config(format!(
                "{} materials given for {regions} regions",
                materials.len()
            )));
        }
        for m in materials {
            m.validate()?;
        }
        if !(seed.spacing > 0.0 && seed.spacing.is_finite()) {
            return Err(Error::Config(format!(
                "particle spacing {} must be > 0",
                seed.spacing
            )));
        }
        if !(world.fps > 0.0 && world.fps.is_finite()) {
            return Err(Error::Config(format!("fps {} must be > 0", world.fps)));
        }
        if !world.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::Config("gravity must be finite".into()));
        }
        let mut used = vec![false; materials.len()];
        for &r in &seed.material_region {
            used[r] = true;
        }
        let kinds: Vec<MaterialKind> = materials
            .iter()
            .zip(&used)
            .filter(|(_, &u)| u)
            .map(|(m, _)| m.kind)
            .collect();
        let has = |k| kinds.contains(&k);
        let solver = if has(MaterialKind::Fluid) {
            if kinds.iter().any(|&k| k != MaterialKind::Fluid) {
                return Err(Error::Config(
                    "fluid regions cannot be combined with rigid or elastic regions".into(),
                ));
            }
            Solver::Sph
        } else if has(MaterialKind::Elastic) {
            Solver::Mpm
        } else {
            Solver::Rigid
        };

        let (lo, hi) = crate::proxy::bounds(&seed.positions);
        let extent = (hi - lo).max();
        let dx = grid_dx(seed.spacing, extent, world.grid_resolution);
        let bound = stable_dt(materials, &used, seed.spacing, dx);
        let frame_dt = 1.0 / world.fps;
        let (dt, substeps) = resolve_dt(world, frame_dt, bound)?;

        let masses: Vec<f64> = seed
            .rest_volume
            .iter()
            .zip(&seed.material_region)
            .map(|(v, &r)| materials[r].density * v)
            .collect();
        let mut state = ParticleState {
            rest_positions: seed.positions.clone(),
            positions: seed.positions.clone(),
            velocities: vec![Vector3::zeros(); n],
            gradients: vec![Matrix3::identity(); n],
            affine: vec![Matrix3::zeros(); n],
            masses,
            rest_volumes: seed.rest_volume.clone(),
            material_ids: seed.material_region.clone(),
            bodies: Vec::new(),
            body_of: vec![None; n],
        };
        for (r, m) in materials.iter().enumerate() {
            if m.kind != MaterialKind::Rigid || !used[r] {
                continue;
            }
            let ids: Vec<usize> = (0..n).filter(|&i| seed.material_region[i] == r).collect();
            let b = state.bodies.len();
            for &i in &ids {
                state.body_of[i] = Some(b);
            }
            state.bodies.push(RigidBody::new(
                r,
                ids,
                &state.positions,
                &state.masses,
                seed.spacing,
                m.restitution,
                m.friction,
            ));
        }

        let mpm_ids = if solver == Solver::Mpm {
            (0..n).collect()
        } else {
            Vec::new()
        };
        let fluid_ids = if solver == Solver::Sph {
            (0..n).collect()
        } else {
            Vec::new()
        };
        let mut sim = Simulation {
            state,
            materials: materials.to_vec(),
            world: world.clone(),
            solver,
            spacing: seed.spacing,
            dx,
            dt,
            substeps,
            frame: 0,
            pending: Vec::new(),
            fluid: Vec::new(),
            mpm_ids,
            fluid_ids,
        };
        sim.fluid = sim.fluid_regions();
        Ok(sim)
    }

    /// Fluid constants; rest density is the largest initial density in each region.
    fn fluid_regions(&self) -> Vec<Option<FluidRegion>> {
        let support = SUPPORT_SPACINGS * self.spacing;
        let mut rest = vec![0.0f64; self.materials.len()];
        if self.solver == Solver::Sph {
            let nbrs = sph::neighbours(&self.state.rest_positions, &self.fluid_ids, support);
            let mut rest_state = self.state.clone();
            rest_state.positions = self.state.rest_positions.clone();
            let rho = sph::densities(&rest_state, &self.fluid_ids, &nbrs, support);
            for (&i, d) in self.fluid_ids.iter().zip(rho) {
                let r = self.state.material_ids[i];
                rest[r] = rest[r].max(d);
            }
        }
        self.materials
            .iter()
            .zip(rest)
            .map(|(m, rho0)| {
                (m.kind == MaterialKind::Fluid).then(|| FluidRegion {
                    rest_density: if rho0 > 0.0 { rho0 } else { m.density },
                    stiffness: m.stiffness,
                    exponent: m.eos_exponent,
                    cohesion: m.surface_tension,
                    viscosity: m.viscosity,
                    sound_speed: m.sound_speed(),
                })
            })
            .collect()
    }

    pub fn state(&self) -> &ParticleState {
        &self.state
    }

    /// Direct state access for setting up initial conditions. Rigid particle
    /// entries are overwritten from their body pose on the next step.
    pub fn state_mut(&mut self) -> &mut ParticleState {
        &mut self.state
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    pub fn world(&self) -> &WorldConfig {
        &self.world
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn substeps(&self) -> u32 {
        self.substeps
    }

    pub fn grid_dx(&self) -> f64 {
        self.dx
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Frames advanced so far.
    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn time(&self) -> f64 {
        self.frame as f64 / self.world.fps
    }

    /// Rigidly move everything by `offset` (used to lift the object before a run).
    pub fn translate(&mut self, offset: &Vector3<f64>) {
        for p in &mut self.state.positions {
            *p += offset;
        }
        for b in &mut self.state.bodies {
            b.center += offset;
        }
    }

    /// Queue a push for the start of the next step.
    pub fn apply_user_push(&mut self, push: ExternalForce) -> Result<()> {
        push.validate()?;
        self.pending.push(push);
        Ok(())
    }

    pub fn set_gravity(&mut self, gravity: Vector3<f64>) -> Result<()> {
        if !gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::Config("gravity must be finite".into()));
        }
        self.world.gravity = gravity;
        Ok(())
    }

    /// Replace a region's material. Kind and density are fixed for the
    /// lifetime of a run. An automatic substep is re-derived; a fixed one
    /// must stay stable.
    pub fn set_material(&mut self, region: usize, material: Material) -> Result<()> {
        let old = self
            .materials
            .get(region)
            .ok_or_else(|| Error::Config(format!("no region {region}")))?;
        material.validate()?;
        if material.kind != old.kind || material.density != old.density {
            return Err(Error::Config(
                "kind and density cannot change during a run".into(),
            ));
        }
        let mut next = self.materials.clone();
        next[region] = material.clone();
        let mut used = vec![false; next.len()];
        for &r in &self.state.material_ids {
            used[r] = true;
        }
        // An automatic step follows the new bound; a fixed one must still satisfy it.
        let bound = stable_dt(&next, &used, self.spacing, self.dx);
        let (dt, substeps) = resolve_dt(&self.world, 1.0 / self.world.fps, bound)?;
        self.dt = dt;
        self.substeps = substeps;
        self.materials = next;
        for b in &mut self.state.bodies {
            if b.region == region {
                b.restitution = material.restitution;
                b.friction = material.friction;
            }
        }
        self.fluid = self.fluid_regions();
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        let s = &self.state;
        Snapshot {
            displacements: s
                .positions
                .iter()
                .zip(&s.rest_positions)
                .map(|(p, p0)| p - p0)
                .collect(),
            gradients: s.gradients.clone(),
        }
    }

    /// Advance one frame, applying queued pushes first and `forces` by their
    /// time windows.
    pub fn step(&mut self, forces: &[ExternalForce]) -> Result<()> {
        for f in forces {
            f.validate()?;
        }
        let frame = self.frame + 1;
        let start = self.time();
        let pending = std::mem::take(&mut self.pending);
        for push in &pending {
            self.distribute(push, 1.0);
        }
        for s in 0..self.substeps {
            let t = start + s as f64 * self.dt;
            for f in forces {
                match f.kind {
                    ForceKind::Impulse if f.t0 >= t && f.t0 < t + self.dt => {
                        self.distribute(f, 1.0)
                    }
                    ForceKind::Continuous if t >= f.t0 && t < f.t1 => self.distribute(f, self.dt),
                    _ => {}
                }
            }
            self.substep(frame)?;
        }
        self.frame = frame;
        self.check_finite(frame)
    }

    fn substep(&mut self, frame: u64) -> Result<()> {
        let ground = self.world.ground.as_ref();
        match self.solver {
            Solver::Rigid => {
                for b in &mut self.state.bodies {
                    b.integrate(self.dt, &self.world.gravity, ground);
                }
            }
            Solver::Mpm => {
                let lame: Vec<Option<(f64, f64)>> = self
                    .materials
                    .iter()
                    .map(|m| (m.kind == MaterialKind::Elastic).then(|| m.lame()))
                    .collect();
                let ground_friction = self
                    .materials
                    .iter()
                    .filter(|m| m.kind != MaterialKind::Fluid)
                    .map(|m| m.friction)
                    .fold(0.0, f64::max);
                mpm::substep(
                    &mut self.state,
                    &self.mpm_ids,
                    &mpm::MpmParams {
                        dx: self.dx,
                        dt: self.dt,
                        gravity: self.world.gravity,
                        ground,
                        ground_friction,
                        lame: &lame,
                        frame,
                    },
                )?;
                // Gravity reached the bodies through the grid.
                for b in &mut self.state.bodies {
                    b.integrate(self.dt, &Vector3::zeros(), ground);
                }
            }
            Solver::Sph => sph::substep(
                &mut self.state,
                &self.fluid_ids,
                &sph::SphParams {
                    support: SUPPORT_SPACINGS * self.spacing,
                    dt: self.dt,
                    gravity: self.world.gravity,
                    ground,
                    regions: &self.fluid,
                },
            ),
        }
        self.state.sync_rigid_particles();
        Ok(())
    }

    /// Spread `push.magnitude · scale` of momentum over the selected
    /// particles in proportion to their mass.
    fn distribute(&mut self, push: &ExternalForce, scale: f64) {
        let total = push.momentum(scale);
        if total == Vector3::zeros() {
            return;
        }
        let selected = self.push_targets(push);
        let mass: f64 = selected.iter().map(|&i| self.state.masses[i]).sum();
        let dv = total / mass;
        for &i in &selected {
            match self.state.body_of[i] {
                Some(b) => {
                    let share = dv * self.state.masses[i];
                    let body = &mut self.state.bodies[b];
                    let r = self.state.positions[i] - body.center;
                    body.apply_impulse(&share, &r);
                }
                None => self.state.velocities[i] += dv,
            }
        }
        self.state.sync_rigid_particles();
    }

    fn push_targets(&self, push: &ExternalForce) -> Vec<usize> {
        let Some(point) = push.point else {
            return (0..self.state.len()).collect();
        };
        let radius = push.radius.unwrap_or(PUSH_RADIUS_SPACINGS * self.spacing);
        let inside: Vec<usize> = (0..self.state.len())
            .filter(|&i| (self.state.positions[i] - point).norm() <= radius)
            .collect();
        if !inside.is_empty() {
            return inside;
        }
        let nearest = (0..self.state.len())
            .min_by(|&a, &b| {
                let da = (self.state.positions[a] - point).norm_squared();
                let db = (self.state.positions[b] - point).norm_squared();
                da.total_cmp(&db)
            })
            .expect("simulation has particles");
        vec![nearest]
    }

    fn check_finite(&self, frame: u64) -> Result<()> {
        let s = &self.state;
        let bad = s
            .positions
            .iter()
            .position(|p| !p.iter().all(|v| v.is_finite()))
            .or_else(|| {
                s.velocities
                    .iter()
                    .position(|v| !v.iter().all(|x| x.is_finite()))
            })
            .or_else(|| {
                s.gradients
                    .iter()
                    .position(|f| !f.iter().all(|x| x.is_finite()))
            });
        match bad {
            Some(i) => Err(Error::NumericalBlowup {
                frame,
                detail: format!("particle {i} has a non-finite value"),
            }),
            None => Ok(()),
        }
    }
}

fn resolve_dt(world: &WorldConfig, frame_dt: f64, bound: f64) -> Result<(f64, u32)> {
    let (dt, substeps) = match (world.dt, world.substeps) {
        (None, None) => {
            let substeps = (frame_dt / bound * (1.0 - 1e-12)).ceil().max(1.0);
            if substeps > u32::MAX as f64 {
                return Err(Error::Config("frame needs too many substeps".into()));
            }
            let substeps = substeps as u32;
            return Ok((frame_dt / substeps as f64, substeps));
        }
        (Some(dt), None) => {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("dt {dt} must be > 0")));
            }
            let substeps = (frame_dt / dt).round().max(1.0) as u32;
            if ((substeps as f64 * dt) - frame_dt).abs() > 1e-9 * frame_dt {
                return Err(Error::Config(format!(
                    "dt {dt} does not divide the frame time {frame_dt}"
                )));
            }
            (frame_dt / substeps as f64, substeps)
        }
        (None, Some(s)) => {
            if s == 0 {
                return Err(Error::Config("substeps must be >= 1".into()));
            }
            (frame_dt / s as f64, s)
        }
        (Some(dt), Some(s)) => {
            if s == 0 || ((s as f64 * dt) - frame_dt).abs() > 1e-9 * frame_dt {
                return Err(Error::Config(format!(
                    "dt {dt} x {s} substeps does not match the frame time {frame_dt}"
                )));
            }
            (frame_dt / s as f64, s)
        }
    };
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::UnstableConfig {
            reason: format!("substep {dt:.3e} s exceeds the stability bound"),
            suggested_dt: bound,
        });
    }
    Ok((dt, substeps))
}
