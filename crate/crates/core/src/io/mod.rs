//! Scene ingest, animation persistence and preview rendering.

pub mod anim;
pub mod ply;
pub mod preview;

pub use anim::{read_anim, write_anim, AnimFrame, AnimSequence, SpawnedGaussian};
pub use ply::{load_ply, save_ply};
pub use preview::{render_preview, Camera};

use crate::error::Result;
use crate::gaussian::{logit, params_from_covariance, Gaussian, GaussianSet, SH_C0, SH_COEFFS};

/// Bake a frame back into a Gaussian set: posed centers and covariances for
/// every live base Gaussian, followed by the spawned Gaussians.
pub fn posed_set(base: &GaussianSet, frame: &AnimFrame) -> Result<GaussianSet> {
    let mut gaussians = Vec::with_capacity(base.len() + frame.spawned.len());
    for (i, g) in base.gaussians.iter().enumerate() {
        if !frame.alive[i] {
            continue;
        }
        let (rotation, log_scale) = params_from_covariance(&frame.covariances[i]);
        gaussians.push(Gaussian {
            center: frame.centers[i],
            rotation,
            log_scale,
            ..g.clone()
        });
    }
    for s in &frame.spawned {
        let (rotation, log_scale) = params_from_covariance(&s.covariance);
        let mut sh = [0.0f32; SH_COEFFS];
        for c in 0..3 {
            sh[c] = ((s.rgb[c] as f64 / 255.0 - 0.5) / SH_C0) as f32;
        }
        gaussians.push(Gaussian {
            center: s.center,
            rotation,
            log_scale,
            opacity_logit: logit(s.opacity as f64),
            sh,
        });
    }
    Ok(GaussianSet::all_object(gaussians))
}
