//! Weakly compressible SPH: Tait pressure, cubic spline kernel, Monaghan
//! artificial viscosity and spline-based pairwise cohesion.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::spatial::HashGrid;

use super::{GroundPlane, ParticleState};

/// Per-region fluid constants.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct FluidRegion {
    pub rest_density: f64,
    pub stiffness: f64,
    pub exponent: f64,
    pub cohesion: f64,
    pub viscosity: f64,
    pub sound_speed: f64,
}

pub(crate) struct SphParams<'a> {
    /// Kernel support radius.
    pub support: f64,
    pub dt: f64,
    pub gravity: Vector3<f64>,
    pub ground: Option<&'a GroundPlane>,
    pub regions: &'a [Option<FluidRegion>],
}

/// Cubic spline kernel with compact support `h`.
pub(crate) fn kernel(r: f64, h: f64) -> f64 {
    let q = r / h;
    let sigma = 8.0 / (PI * h * h * h);
    if q <= 0.5 {
        sigma * (6.0 * (q * q * q - q * q) + 1.0)
    } else if q <= 1.0 {
        sigma * 2.0 * (1.0 - q).powi(3)
    } else {
        0.0
    }
}

/// dW/dr of `kernel`.
pub(crate) fn kernel_derivative(r: f64, h: f64) -> f64 {
    let q = r / h;
    let sigma = 8.0 / (PI * h * h * h);
    if q <= 0.5 {
        sigma * 6.0 * (3.0 * q * q - 2.0 * q) / h
    } else if q <= 1.0 {
        -sigma * 6.0 * (1.0 - q).powi(2) / h
    } else {
        0.0
    }
}

/// Cohesion spline with support `h`.
fn cohesion_spline(r: f64, h: f64) -> f64 {
    let scale = 32.0 / (PI * h.powi(9));
    if r <= 0.0 || r > h {
        0.0
    } else if 2.0 * r > h {
        scale * (h - r).powi(3) * r.powi(3)
    } else {
        scale * (2.0 * (h - r).powi(3) * r.powi(3) - h.powi(6) / 64.0)
    }
}

/// Neighbour lists (excluding self) within `support`, in ascending index order.
pub(crate) fn neighbours(
    positions: &[Vector3<f64>],
    ids: &[usize],
    support: f64,
) -> Vec<Vec<usize>> {
    let local: Vec<Vector3<f64>> = ids.iter().map(|&i| positions[i]).collect();
    let grid = HashGrid::from_points(&local, support);
    let h2 = support * support;
    local
        .iter()
        .enumerate()
        .map(|(a, p)| {
            let mut out = Vec::new();
            grid.for_each_near(p, |b| {
                if b != a && (local[b] - p).norm_squared() < h2 {
                    out.push(b);
                }
            });
            out.sort_unstable();
            out
        })
        .collect()
}

/// Densities of the particles `ids` (local indexing of `nbrs`).
pub(crate) fn densities(
    state: &ParticleState,
    ids: &[usize],
    nbrs: &[Vec<usize>],
    h: f64,
) -> Vec<f64> {
    ids.iter()
        .zip(nbrs)
        .map(|(&i, list)| {
            let xi = state.positions[i];
            list.iter()
                .fold(state.masses[i] * kernel(0.0, h), |acc, &b| {
                    let j = ids[b];
                    acc + state.masses[j] * kernel((xi - state.positions[j]).norm(), h)
                })
        })
        .collect()
}

pub(crate) fn substep(state: &mut ParticleState, ids: &[usize], p: &SphParams) {
    let h = p.support;
    let nbrs = neighbours(&state.positions, ids, h);
    let rho = densities(state, ids, &nbrs, h);
    let region = |i: usize| {
        p.regions[state.material_ids[i]]
            .as_ref()
            .expect("fluid particle in a non-fluid region")
    };
    let pressure: Vec<f64> = ids
        .iter()
        .zip(&rho)
        .map(|(&i, &d)| {
            let f = region(i);
            (f.stiffness * ((d / f.rest_density).powf(f.exponent) - 1.0)).max(0.0)
        })
        .collect();

    let smoothing = 0.5 * h;
    let accel: Vec<Vector3<f64>> = ids
        .iter()
        .enumerate()
        .map(|(a, &i)| {
            let fi = region(i);
            let xi = state.positions[i];
            let vi = state.velocities[i];
            let pi_term = pressure[a] / (rho[a] * rho[a]);
            let mut acc = p.gravity;
            for &b in &nbrs[a] {
                let j = ids[b];
                let xij = xi - state.positions[j];
                let r = xij.norm();
                if r <= 1e-12 * h {
                    continue;
                }
                let dir = xij / r;
                let mj = state.masses[j];
                let mut coeff = pi_term + pressure[b] / (rho[b] * rho[b]);
                let vij = vi - state.velocities[j];
                let vr = vij.dot(&xij);
                if vr < 0.0 && fi.viscosity > 0.0 {
                    let mu = smoothing * vr / (r * r + 0.01 * smoothing * smoothing);
                    let rho_bar = 0.5 * (rho[a] + rho[b]);
                    coeff += -fi.viscosity * fi.sound_speed * mu / rho_bar;
                }
                acc -= mj * coeff * kernel_derivative(r, h) * dir;
                if fi.cohesion > 0.0 {
                    let correction = 2.0 * fi.rest_density / (rho[a] + rho[b]);
                    acc -= fi.cohesion * correction * mj * cohesion_spline(r, h) * dir;
                }
            }
            acc
        })
        .collect();

    for (&i, a) in ids.iter().zip(&accel) {
        state.velocities[i] += p.dt * a;
        state.positions[i] += p.dt * state.velocities[i];
        if let Some(g) = p.ground {
            let d = g.distance(&state.positions[i]);
            if d < 0.0 {
                state.positions[i] -= g.normal * d;
                let vn = state.velocities[i].dot(&g.normal);
                if vn < 0.0 {
                    state.velocities[i] -= g.normal * vn;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(f: impl Fn(f64) -> f64, h: f64) -> f64 {
        // ∫ f(r) 4π r² dr with the midpoint rule.
        let n = 20_000;
        let dr = h / n as f64;
        (0..n)
            .map(|k| {
                let r = (k as f64 + 0.5) * dr;
                f(r) * 4.0 * PI * r * r * dr
            })
            .sum()
    }

    #[test]
    fn kernel_is_normalized() {
        for h in [0.1, 1.0, 2.5] {
            assert!((integrate(|r| kernel(r, h), h) - 1.0).abs() < 1e-6);
        }
        assert_eq!(kernel(1.01, 1.0), 0.0);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = 0.7;
        for r in [0.05, 0.2, 0.34, 0.36, 0.5, 0.69] {
            let e = 1e-7;
            let fd = (kernel(r + e, h) - kernel(r - e, h)) / (2.0 * e);
            assert!(
                (fd - kernel_derivative(r, h)).abs() < 1e-5 * (1.0 + fd.abs()),
                "r={r}"
            );
        }
    }

    #[test]
    fn cohesion_is_repulsive_close_and_attractive_far() {
        let h = 1.0;
        assert!(cohesion_spline(0.1, h) < 0.0);
        assert!(cohesion_spline(0.7, h) > 0.0);
        assert_eq!(cohesion_spline(1.2, h), 0.0);
        // Continuous at the midpoint.
        assert!((cohesion_spline(0.5 - 1e-9, h) - cohesion_spline(0.5 + 1e-9, h)).abs() < 1e-6);
    }

    #[test]
    fn neighbour_lists_match_brute_force() {
        let pts: Vec<_> = (0..60)
            .map(|i| {
                let t = i as f64;
                Vector3::new((t * 0.37).sin(), (t * 0.71).cos(), (t * 0.13).sin()) * 0.5
            })
            .collect();
        let ids: Vec<usize> = (0..pts.len()).collect();
        let lists = neighbours(&pts, &ids, 0.3);
        for (a, list) in lists.iter().enumerate() {
            let want: Vec<usize> = (0..pts.len())
                .filter(|&b| b != a && (pts[a] - pts[b]).norm_squared() < 0.09)
                .collect();
            assert_eq!(list, &want);
        }
    }
}
