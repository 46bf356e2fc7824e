use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::proxy::build_hull;

use super::GroundPlane;

/// Contact solver passes per substep.
const CONTACT_ITERATIONS: usize = 20;

/// One rigid region. Its particles follow the pose kinematically.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidBody {
    pub region: usize,
    /// Indices of the particles carried by this body.
    pub particles: Vec<usize>,
    /// Particle offsets from the center of mass in the body frame.
    pub offsets: Vec<Vector3<f64>>,
    /// Body-frame contact points (hull vertices of the particles).
    pub contact_points: Vec<Vector3<f64>>,
    pub mass: f64,
    pub inertia_body: Matrix3<f64>,
    pub inv_inertia_body: Matrix3<f64>,
    /// Center of mass at rest.
    pub rest_center: Vector3<f64>,
    pub center: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    pub angular_momentum: Vector3<f64>,
    pub restitution: f64,
    pub friction: f64,
}

impl RigidBody {
    /// `spacing` regularizes the inertia of thin or single-particle bodies.
    pub(crate) fn new(
        region: usize,
        particles: Vec<usize>,
        positions: &[Vector3<f64>],
        masses: &[f64],
        spacing: f64,
        restitution: f64,
        friction: f64,
    ) -> Self {
        let mass: f64 = particles.iter().map(|&p| masses[p]).sum();
        let center = particles
            .iter()
            .fold(Vector3::zeros(), |acc, &p| acc + masses[p] * positions[p])
            / mass;
        let offsets: Vec<_> = particles.iter().map(|&p| positions[p] - center).collect();
        let mut inertia = Matrix3::identity() * (mass * spacing * spacing / 6.0);
        for (&p, r) in particles.iter().zip(&offsets) {
            inertia += masses[p] * (Matrix3::identity() * r.norm_squared() - r * r.transpose());
        }
        let contact_points = match build_hull(&offsets) {
            Ok(h) => h.vertices,
            Err(_) => offsets.clone(),
        };
        RigidBody {
            region,
            particles,
            offsets,
            contact_points,
            mass,
            inertia_body: inertia,
            inv_inertia_body: inertia.try_inverse().unwrap_or_else(Matrix3::zeros),
            rest_center: center,
            center,
            rotation: UnitQuaternion::identity(),
            velocity: Vector3::zeros(),
            angular_momentum: Vector3::zeros(),
            restitution,
            friction,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    fn inv_inertia_world(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        r * self.inv_inertia_body * r.transpose()
    }

    pub fn angular_velocity(&self) -> Vector3<f64> {
        self.inv_inertia_world() * self.angular_momentum
    }

    pub fn point_velocity(&self, world_offset: &Vector3<f64>) -> Vector3<f64> {
        self.velocity + self.angular_velocity().cross(world_offset)
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.velocity.norm_squared()
            + 0.5 * self.angular_momentum.dot(&self.angular_velocity())
    }

    pub fn apply_impulse(&mut self, impulse: &Vector3<f64>, world_offset: &Vector3<f64>) {
        self.velocity += impulse / self.mass;
        self.angular_momentum += world_offset.cross(impulse);
    }

    /// Advance the pose by `dt`. `accel` is the uniform acceleration applied
    /// this step; without contact the position update is exact for it.
    pub(crate) fn integrate(
        &mut self,
        dt: f64,
        accel: &Vector3<f64>,
        ground: Option<&GroundPlane>,
    ) {
        self.velocity += accel * dt;
        let contact = match ground {
            Some(g) => self.resolve_contacts(g, dt, accel),
            None => false,
        };
        if contact {
            self.center += self.velocity * dt;
        } else {
            self.center += self.velocity * dt - 0.5 * dt * dt * accel;
        }
        let omega = self.angular_velocity();
        let angle = omega.norm() * dt;
        if angle > 0.0 {
            let dq = UnitQuaternion::from_scaled_axis(omega * dt);
            self.rotation = UnitQuaternion::new_normalize((dq * self.rotation).into_inner());
        }
        if let Some(g) = ground {
            self.project_out_of(g);
        }
    }

    fn deepest_penetration(&self, ground: &GroundPlane) -> f64 {
        let r = self.rotation_matrix();
        self.contact_points
            .iter()
            .map(|p| -ground.distance(&(self.center + r * p)))
            .fold(0.0, f64::max)
    }

    fn project_out_of(&mut self, ground: &GroundPlane) {
        let depth = self.deepest_penetration(ground);
        if depth > 0.0 {
            self.center += ground.normal * depth;
        }
    }

    /// Sequential impulses over the contact points touching the ground.
    fn resolve_contacts(&mut self, ground: &GroundPlane, dt: f64, accel: &Vector3<f64>) -> bool {
        let n = ground.normal;
        let r = self.rotation_matrix();
        // Points within one step of travel count as touching.
        let slop = self.velocity.norm() * dt + accel.norm() * dt * dt;
        let offsets: Vec<Vector3<f64>> = self
            .contact_points
            .iter()
            .map(|p| r * p)
            .filter(|o| ground.distance(&(self.center + o)) <= slop)
            .collect();
        if offsets.is_empty() {
            return false;
        }
        // Restitution only for genuine impacts, so resting contact stays quiet.
        let bounce_threshold = 2.0 * accel.norm() * dt;
        let inv_i = self.inv_inertia_world();
        let targets: Vec<f64> = offsets
            .iter()
            .map(|o| {
                let vn = self.point_velocity(o).dot(&n);
                if -vn > bounce_threshold {
                    -self.restitution * vn
                } else {
                    0.0
                }
            })
            .collect();
        if offsets
            .iter()
            .zip(&targets)
            .all(|(o, t)| self.point_velocity(o).dot(&n) >= *t)
        {
            return false;
        }
        // Projected Gauss-Seidel on accumulated normal and friction impulses.
        let mut normal_acc = vec![0.0; offsets.len()];
        let mut friction_acc = vec![Vector3::zeros(); offsets.len()];
        for _ in 0..CONTACT_ITERATIONS {
            for (c, o) in offsets.iter().enumerate() {
                let vn = self.point_velocity(o).dot(&n);
                let k_n = 1.0 / self.mass + n.dot(&(inv_i * o.cross(&n)).cross(o));
                let next = (normal_acc[c] + (targets[c] - vn) / k_n).max(0.0);
                let dj = next - normal_acc[c];
                normal_acc[c] = next;
                self.apply_impulse(&(n * dj), o);

                let v = self.point_velocity(o);
                let vt = v - n * v.dot(&n);
                let vt_norm = vt.norm();
                if vt_norm > 0.0 {
                    let t = vt / vt_norm;
                    let k_t = 1.0 / self.mass + t.dot(&(inv_i * o.cross(&t)).cross(o));
                    let mut acc = friction_acc[c] - t * (vt_norm / k_t);
                    let limit = self.friction * normal_acc[c];
                    if acc.norm() > limit {
                        acc *= limit / acc.norm();
                    }
                    let dj = acc - friction_acc[c];
                    friction_acc[c] = acc;
                    self.apply_impulse(&dj, o);
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_body(n: usize, spacing: f64) -> RigidBody {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    pts.push(Vector3::new(i as f64, j as f64, k as f64) * spacing);
                }
            }
        }
        let masses = vec![1.0; pts.len()];
        RigidBody::new(
            0,
            (0..pts.len()).collect(),
            &pts,
            &masses,
            spacing,
            0.0,
            0.5,
        )
    }

    #[test]
    fn ballistic_is_exact() {
        let mut b = cube_body(3, 0.1);
        let g = Vector3::new(0.0, 0.0, -9.81);
        let start = b.center;
        for _ in 0..1000 {
            b.integrate(1e-3, &g, None);
        }
        let drop = start.z - b.center.z;
        assert!((drop - 0.5 * 9.81).abs() < 1e-9 * 9.81, "{drop}");
    }

    #[test]
    fn inertia_of_symmetric_cube_is_isotropic() {
        let b = cube_body(4, 0.1);
        let d = b.inertia_body.diagonal();
        assert!((d.x - d.y).abs() < 1e-9 && (d.y - d.z).abs() < 1e-9);
        let off = b.inertia_body - Matrix3::from_diagonal(&d);
        assert!(off.norm() < 1e-9);
    }

    #[test]
    fn impulse_at_center_of_mass() {
        let mut b = cube_body(3, 0.1);
        b.apply_impulse(&Vector3::new(2.7, 0.0, 0.0), &Vector3::zeros());
        assert!((b.velocity.x - 0.1).abs() < 1e-12);
        assert_eq!(b.angular_momentum, Vector3::zeros());
    }

    #[test]
    fn free_spin_keeps_angular_momentum() {
        let mut b = cube_body(3, 0.1);
        b.angular_momentum = Vector3::new(0.3, -0.2, 0.5);
        let ke = b.kinetic_energy();
        for _ in 0..100 {
            b.integrate(1e-3, &Vector3::zeros(), None);
        }
        assert_eq!(b.angular_momentum, Vector3::new(0.3, -0.2, 0.5));
        assert!((b.kinetic_energy() - ke).abs() < 1e-6 * ke);
        assert!((b.rotation.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn settles_on_ground() {
        let mut b = cube_body(4, 0.1);
        let ground = GroundPlane::horizontal(0.0);
        b.center.z += 0.5;
        b.rotation = UnitQuaternion::from_euler_angles(0.3, 0.2, 0.0);
        let g = Vector3::new(0.0, 0.0, -9.81);
        for _ in 0..4000 {
            b.integrate(1e-3, &g, Some(&ground));
        }
        let r = b.rotation_matrix();
        let min_z = b
            .offsets
            .iter()
            .map(|o| (b.center + r * o).z)
            .fold(f64::INFINITY, f64::min);
        assert!(min_z.abs() < 0.2, "min z {min_z}");
        assert!(b.kinetic_energy() < 1e-3, "ke {}", b.kinetic_energy());
    }
}
