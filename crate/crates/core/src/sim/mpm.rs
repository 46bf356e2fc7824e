//! Explicit MLS-MPM with quadratic B-spline weights and APIC transfers.
//!
//! The grid is dense over the current particle bounds, rebuilt every
//! substep. Rigid particles join the grid as momentum carriers; whatever
//! the grid does to them is handed back to their body as an impulse.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::skew;

use super::material::corotated_stress;
use super::{GroundPlane, ParticleState};

/// Refuse grids beyond this many nodes; a blown-up state would otherwise
/// try to allocate the world.
const MAX_NODES: usize = 1 << 25;

pub(crate) struct MpmParams<'a> {
    pub dx: f64,
    pub dt: f64,
    pub gravity: Vector3<f64>,
    pub ground: Option<&'a GroundPlane>,
    pub ground_friction: f64,
    /// (μ, λ) per region; `None` for regions that carry no stress.
    pub lame: &'a [Option<(f64, f64)>],
    pub frame: u64,
}

struct Grid {
    origin: Vector3<i64>,
    dims: [usize; 3],
    mass: Vec<f64>,
    momentum: Vec<Vector3<f64>>,
}

impl Grid {
    fn index(&self, node: &Vector3<i64>) -> usize {
        let l = node - self.origin;
        (l.x as usize * self.dims[1] + l.y as usize) * self.dims[2] + l.z as usize
    }
}

struct Stencil {
    base: Vector3<i64>,
    fx: Vector3<f64>,
    w: [Vector3<f64>; 3],
}

fn stencil(x: &Vector3<f64>, inv_dx: f64) -> Stencil {
    let xl = x * inv_dx;
    let base = (xl - Vector3::repeat(0.5)).map(|v| v.floor() as i64);
    let fx = xl - base.map(|v| v as f64);
    let w = [
        (Vector3::repeat(1.5) - fx).map(|v| 0.5 * v * v),
        (fx - Vector3::repeat(1.0)).map(|v| 0.75 - v * v),
        (fx - Vector3::repeat(0.5)).map(|v| 0.5 * v * v),
    ];
    Stencil { base, fx, w }
}

fn for_stencil(s: &Stencil, mut f: impl FnMut(Vector3<i64>, f64, Vector3<f64>)) {
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                let off = Vector3::new(i as i64, j as i64, k as i64);
                let weight = s.w[i].x * s.w[j].y * s.w[k].z;
                let dpos = off.map(|v| v as f64) - s.fx;
                f(s.base + off, weight, dpos);
            }
        }
    }
}

/// One substep for every particle in `active`. Rigid bodies receive their
/// grid impulses but are not integrated here.
pub(crate) fn substep(state: &mut ParticleState, active: &[usize], p: &MpmParams) -> Result<()> {
    if active.is_empty() {
        return Ok(());
    }
    let inv_dx = 1.0 / p.dx;
    let blowup = |detail: String| Error::NumericalBlowup {
        frame: p.frame,
        detail,
    };

    // Rigid particles carry the body's affine velocity field.
    for body in &state.bodies {
        let omega = body.angular_velocity();
        let c = skew(&omega);
        for &i in &body.particles {
            state.velocities[i] = body.velocity + omega.cross(&(state.positions[i] - body.center));
            state.affine[i] = c;
        }
    }

    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in active {
        lo = lo.inf(&state.positions[i]);
        hi = hi.sup(&state.positions[i]);
    }
    if !(lo.iter().chain(hi.iter()).all(|v| v.is_finite())) {
        return Err(blowup("non-finite particle position".into()));
    }
    let origin = (lo * inv_dx).map(|v| v.floor() as i64 - 1);
    let top = (hi * inv_dx).map(|v| v.floor() as i64 + 3);
    let dims = [
        (top.x - origin.x) as usize,
        (top.y - origin.y) as usize,
        (top.z - origin.z) as usize,
    ];
    let nodes = dims[0].saturating_mul(dims[1]).saturating_mul(dims[2]);
    if nodes > MAX_NODES {
        return Err(blowup(format!("particles spread over {nodes} grid nodes")));
    }
    let mut grid = Grid {
        origin,
        dims,
        mass: vec![0.0; nodes],
        momentum: vec![Vector3::zeros(); nodes],
    };

    // Particle to grid.
    let stress_scale = -p.dt * 4.0 * inv_dx * inv_dx;
    for &i in active {
        let m = state.masses[i];
        let region = state.material_ids[i];
        let mut affine = m * state.affine[i];
        if let Some((mu, lambda)) = p.lame[region] {
            if state.body_of[i].is_none() {
                let f = &state.gradients[i];
                let stress = corotated_stress(f, mu, lambda)
                    .map_err(|e| blowup(format!("particle {i}: {e}")))?;
                affine += stress_scale * state.rest_volumes[i] * stress * f.transpose();
            }
        }
        let s = stencil(&state.positions[i], inv_dx);
        let mv = m * state.velocities[i];
        for_stencil(&s, |node, w, dpos| {
            let idx = grid.index(&node);
            grid.mass[idx] += w * m;
            grid.momentum[idx] += w * (mv + affine * (dpos * p.dx));
        });
    }

    // Grid update.
    let gdt = p.gravity * p.dt;
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let idx = (x * dims[1] + y) * dims[2] + z;
                let m = grid.mass[idx];
                if m <= 0.0 {
                    continue;
                }
                let mut v = grid.momentum[idx] / m + gdt;
                if let Some(g) = p.ground {
                    let pos = (origin + Vector3::new(x as i64, y as i64, z as i64))
                        .map(|c| c as f64)
                        * p.dx;
                    if g.distance(&pos) < 0.0 {
                        v = ground_response(&v, &g.normal, p.ground_friction);
                    }
                }
                // Reuse the momentum buffer for velocities.
                grid.momentum[idx] = v;
            }
        }
    }

    // Grid to particle.
    let mut body_impulse = vec![(Vector3::zeros(), Vector3::zeros()); state.bodies.len()];
    let c_scale = 4.0 * inv_dx;
    for &i in active {
        let s = stencil(&state.positions[i], inv_dx);
        let mut v = Vector3::zeros();
        let mut c = Matrix3::zeros();
        for_stencil(&s, |node, w, dpos| {
            let gv = grid.momentum[grid.index(&node)];
            v += w * gv;
            c += (w * c_scale) * gv * dpos.transpose();
        });
        match state.body_of[i] {
            Some(b) => {
                let body = &state.bodies[b];
                let dp = state.masses[i] * (v - state.velocities[i]);
                let r = state.positions[i] - body.center;
                body_impulse[b].0 += dp;
                body_impulse[b].1 += r.cross(&dp);
            }
            None => {
                state.velocities[i] = v;
                state.affine[i] = c;
                state.positions[i] += p.dt * v;
                state.gradients[i] = (Matrix3::identity() + p.dt * c) * state.gradients[i];
            }
        }
    }
    for (body, (dp, dl)) in state.bodies.iter_mut().zip(body_impulse) {
        body.velocity += dp / body.mass;
        body.angular_momentum += dl;
    }
    Ok(())
}

/// Slip boundary with Coulomb friction for a grid velocity moving into the ground.
fn ground_response(v: &Vector3<f64>, n: &Vector3<f64>, friction: f64) -> Vector3<f64> {
    let vn = v.dot(n);
    if vn >= 0.0 {
        return *v;
    }
    let vt = v - n * vn;
    let vt_norm = vt.norm();
    if vt_norm <= -friction * vn {
        Vector3::zeros()
    } else {
        vt * (1.0 + friction * vn / vt_norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_partition_unity_and_reproduce_linear() {
        for x in [0.0, 0.13, 0.5, 0.77, 1.49, -3.2] {
            let p = Vector3::new(x, 2.0 * x + 0.1, -x);
            let s = stencil(&p, 1.0);
            let mut sum = 0.0;
            let mut first = Vector3::zeros();
            for_stencil(&s, |node, w, dpos| {
                sum += w;
                first += w * dpos;
                let expect = node.map(|c| c as f64) - p;
                assert!((dpos - expect).norm() < 1e-12);
            });
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(first.norm() < 1e-12);
        }
    }

    #[test]
    fn ground_response_cases() {
        let n = Vector3::z();
        assert_eq!(
            ground_response(&Vector3::new(1.0, 0.0, 1.0), &n, 0.5),
            Vector3::new(1.0, 0.0, 1.0)
        );
        assert_eq!(
            ground_response(&Vector3::new(0.1, 0.0, -1.0), &n, 0.5),
            Vector3::zeros()
        );
        let v = ground_response(&Vector3::new(2.0, 0.0, -1.0), &n, 0.5);
        assert!((v - Vector3::new(1.5, 0.0, 0.0)).norm() < 1e-12);
        let slip = ground_response(&Vector3::new(2.0, 0.0, -1.0), &n, 0.0);
        assert!((slip - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
    }
}
