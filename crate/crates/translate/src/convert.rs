//! Turning a validated spec into engine inputs. Fractions are resolved
//! against the object's bounding box `[lo, hi]` in scene units.

use nalgebra::Vector3;

use phystalk_core::proxy::RegionPredicate;
use phystalk_core::sim::{ExternalForce, ForceKind, GroundPlane, Material, WorldConfig};
use phystalk_core::skinning::{CenterMode, HoleFillConfig};

use crate::dsl::{CenterModeSpec, ForceKindSpec, Side, SimSpec, Where};

fn at_fraction(lo: &Vector3<f64>, hi: &Vector3<f64>, f: &[f64; 3]) -> Vector3<f64> {
    lo + (hi - lo).component_mul(&Vector3::from(*f))
}

impl SimSpec {
    pub fn up(&self) -> Vector3<f64> {
        Vector3::from(self.scene.up_axis.vector())
    }

    pub fn gravity(&self) -> Vector3<f64> {
        match self.world.gravity_mps2 {
            Some(g) => Vector3::from(g),
            None => -9.81 * self.up(),
        }
    }

    /// One material per region, in region order.
    pub fn materials(&self) -> Vec<Material> {
        self.regions
            .iter()
            .map(|r| r.material.to_material())
            .collect()
    }

    pub fn region_predicates(&self, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Vec<RegionPredicate> {
        let diagonal = (hi - lo).norm();
        self.regions
            .iter()
            .map(|r| match &r.predicate {
                Where::All => RegionPredicate::All,
                Where::HalfSpace {
                    axis,
                    side,
                    at_fraction,
                } => {
                    let a = axis.index();
                    RegionPredicate::HalfSpace {
                        axis: a,
                        threshold: lo[a] + at_fraction * (hi[a] - lo[a]),
                        above: *side == Side::Above,
                    }
                }
                Where::Sphere {
                    center_fraction,
                    radius_fraction,
                } => RegionPredicate::Sphere {
                    center: at_fraction(lo, hi, center_fraction),
                    radius: radius_fraction * diagonal,
                },
            })
            .collect()
    }

    /// World settings for an object whose rest bounds are `[lo, hi]`. The
    /// ground plane sits `ground_offset_m` below the lowest rest point.
    pub fn world_config(&self, lo: &Vector3<f64>, hi: &Vector3<f64>) -> WorldConfig {
        let up = self.up();
        let ground = self.world.ground.then(|| {
            // Box corner furthest against `up`.
            let corner = Vector3::from_fn(|i, _| if up[i] >= 0.0 { lo[i] } else { hi[i] });
            let lowest = corner.dot(&up);
            GroundPlane {
                point: up * (lowest - self.world.ground_offset_m),
                normal: up,
            }
        });
        WorldConfig {
            gravity: self.gravity(),
            ground,
            fps: self.world.fps,
            dt: self.world.dt_s,
            substeps: self.world.substeps,
            grid_resolution: self.world.grid_resolution as usize,
        }
    }

    /// Scheduled forces. `mass` converts velocity changes into momentum.
    pub fn forces(&self, lo: &Vector3<f64>, hi: &Vector3<f64>, mass: f64) -> Vec<ExternalForce> {
        self.forces
            .iter()
            .map(|f| {
                let (kind, magnitude, t1) = match f.kind {
                    ForceKindSpec::Impulse => (
                        ForceKind::Impulse,
                        f.magnitude_ns
                            .unwrap_or_else(|| f.velocity_change_mps.unwrap_or(0.0) * mass),
                        f.at_s,
                    ),
                    ForceKindSpec::Continuous => (
                        ForceKind::Continuous,
                        f.magnitude_n.unwrap_or(0.0),
                        f.until_s.unwrap_or(f.at_s),
                    ),
                };
                ExternalForce {
                    kind,
                    direction: Vector3::from(f.direction).normalize(),
                    magnitude,
                    point: f.point_fraction.map(|p| at_fraction(lo, hi, &p)),
                    radius: f.radius_m,
                    t0: f.at_s,
                    t1,
                }
            })
            .collect()
    }

    pub fn hole_fill_config(&self) -> Option<HoleFillConfig> {
        self.hole_fill.as_ref().map(|h| HoleFillConfig {
            threshold: h.threshold,
            shell_radii: h.shell_radii.clone(),
            poisson_radius: h.poisson_radius_m,
            max_spawn_per_frame: h.max_spawn_per_frame.map(|m| m as usize),
        })
    }

    pub fn center_mode(&self) -> CenterMode {
        match self.skinning.center_mode {
            CenterModeSpec::Affine => CenterMode::Affine,
            CenterModeSpec::Displacement => CenterMode::Displacement,
        }
    }
}
