//! Procedural scenes for demos and tests.

use nalgebra::{Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phystalk_core::gaussian::{Gaussian, GaussianSet};

/// `count` small Gaussians filling the box `[min, max]`, all part of the
/// object, with random orientations and a color gradient along z.
pub fn box_scene(count: usize, min: [f64; 3], max: [f64; 3], seed: u64) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = Vector3::from(min);
    let hi = Vector3::from(max);
    let extent = hi - lo;
    let volume = extent.x * extent.y * extent.z;
    let scale = 0.6 * (volume / count.max(1) as f64).cbrt();
    let gaussians = (0..count)
        .map(|_| {
            let u = Vector3::new(rng.gen::<f64>(), rng.gen(), rng.gen());
            let center = lo + extent.component_mul(&u);
            let mut g = Gaussian::isotropic(center, scale, [0.8, 0.4 + 0.4 * u.z, 0.2], 0.9);
            g.rotation = Quaternion::new(rng.gen_range(0.1..1.0), rng.gen(), rng.gen(), rng.gen());
            g.log_scale = Vector3::new(
                (scale * rng.gen_range(0.5..1.5)).ln(),
                (scale * rng.gen_range(0.5..1.5)).ln(),
                (scale * rng.gen_range(0.5..1.5)).ln(),
            );
            g
        })
        .collect();
    GaussianSet::all_object(gaussians)
}

/// A unit cube resting on z = 0, centered on the z axis.
pub fn cube_scene(count: usize, seed: u64) -> GaussianSet {
    box_scene(count, [-0.5, -0.5, 0.0], [0.5, 0.5, 1.0], seed)
}
