//! Headless splat preview.
//!
//! Gaussians are sorted once by camera depth and composited back to front as
//! screen-space ellipses (EWA-projected 2x2 covariance, cut off at 3 sigma)
//! using the DC colour and sigmoid opacity. This is an approximation of
//! per-pixel sorted splatting meant for quick looks and CI checks.

use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianSet, SymCov};
use crate::io::anim::AnimFrame;

/// Pinhole camera looking from `position` towards `look_at`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    #[serde(default = "default_fov")]
    pub fov_y_deg: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub background: [u8; 3],
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_fov() -> f64 {
    50.0
}

const NEAR: f64 = 1e-2;
const LOW_PASS: f64 = 0.3;
const MIN_ALPHA: f64 = 1.0 / 255.0;

impl Camera {
    /// Camera at `position` aimed at `look_at` with default up / fov.
    pub fn looking_at(
        position: Vector3<f64>,
        look_at: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Self {
        Camera {
            position: position.into(),
            look_at: look_at.into(),
            up: default_up(),
            fov_y_deg: default_fov(),
            width,
            height,
            background: [0, 0, 0],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cam: Camera =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("camera: {e}")))?;
        cam.view()?;
        Ok(cam)
    }

    /// World-to-camera rotation (rows: right, down, forward).
    fn view(&self) -> Result<Matrix3<f64>> {
        let pos = Vector3::from(self.position);
        let fwd = Vector3::from(self.look_at) - pos;
        let up = Vector3::from(self.up);
        let right = fwd.cross(&up);
        if fwd.norm() == 0.0 || right.norm() < 1e-12 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(
                "camera needs a nonzero view direction not parallel to up and a nonempty image"
                    .into(),
            ));
        }
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err(Error::InvalidInput(format!("bad fov {}", self.fov_y_deg)));
        }
        let fwd = fwd.normalize();
        let right = right.normalize();
        let down = fwd.cross(&right);
        Ok(Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            fwd.transpose(),
        ]))
    }

    fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y_deg.to_radians()).tan()
    }
}

struct Splat {
    depth: f64,
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    radius: Vector2<f64>,
    rgb: [f64; 3],
    opacity: f64,
}

fn project(
    cam: &Camera,
    view: &Matrix3<f64>,
    center: &Vector3<f64>,
    cov: &SymCov,
    rgb: [f64; 3],
    opacity: f64,
) -> Option<Splat> {
    let pc = view * (center - Vector3::from(cam.position));
    if pc.z < NEAR {
        return None;
    }
    let f = cam.focal();
    let (cx, cy) = (0.5 * cam.width as f64, 0.5 * cam.height as f64);
    let mean = Vector2::new(f * pc.x / pc.z + cx, f * pc.y / pc.z + cy);
    let j = Matrix2x3::new(
        f / pc.z,
        0.0,
        -f * pc.x / (pc.z * pc.z),
        0.0,
        f / pc.z,
        -f * pc.y / (pc.z * pc.z),
    );
    let t = j * view;
    let mut cov2 = t * cov.to_matrix() * t.transpose();
    cov2[(0, 0)] += LOW_PASS;
    cov2[(1, 1)] += LOW_PASS;
    let conic = cov2.try_inverse()?;
    let radius = Vector2::new(3.0 * cov2[(0, 0)].sqrt(), 3.0 * cov2[(1, 1)].sqrt());
    if !(radius.x.is_finite() && radius.y.is_finite()) {
        return None;
    }
    Some(Splat {
        depth: pc.z,
        mean,
        conic,
        radius,
        rgb,
        opacity,
    })
}

/// Render `frame` (posed Gaussians of `base`) from `cam`.
pub fn render_preview(frame: &AnimFrame, base: &GaussianSet, cam: &Camera) -> Result<RgbImage> {
    let view = cam.view()?;
    let mut splats = Vec::with_capacity(frame.len() + frame.spawned.len());
    for i in 0..frame.len().min(base.len()) {
        if !frame.alive[i] {
            continue;
        }
        let g = &base.gaussians[i];
        splats.extend(project(
            cam,
            &view,
            &frame.centers[i],
            &frame.covariances[i],
            g.dc_rgb(),
            g.opacity(),
        ));
    }
    for s in &frame.spawned {
        let rgb = s.rgb.map(|c| c as f64 / 255.0);
        splats.extend(project(
            cam,
            &view,
            &s.center,
            &s.covariance,
            rgb,
            s.opacity as f64,
        ));
    }
    // Back to front; stable sort keeps input order for equal depths.
    splats.sort_by(|a, b| b.depth.total_cmp(&a.depth));

    let (w, h) = (cam.width as usize, cam.height as usize);
    let bg = cam.background.map(|c| c as f64 / 255.0);
    let mut buf: Vec<[f64; 3]> = vec![bg; w * h];
    for s in &splats {
        let x0 = ((s.mean.x - s.radius.x).floor().max(0.0)) as usize;
        let y0 = ((s.mean.y - s.radius.y).floor().max(0.0)) as usize;
        let x1 = ((s.mean.x + s.radius.x).ceil().min(w as f64 - 1.0)).max(-1.0);
        let y1 = ((s.mean.y + s.radius.y).ceil().min(h as f64 - 1.0)).max(-1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        for y in y0..=y1.min(h - 1) {
            for x in x0..=x1.min(w - 1) {
                let d = Vector2::new(x as f64 + 0.5, y as f64 + 0.5) - s.mean;
                let power = -0.5 * (d.transpose() * s.conic * d)[(0, 0)];
                if power > 0.0 {
                    continue;
                }
                let alpha = (s.opacity * power.exp()).min(0.99);
                if alpha < MIN_ALPHA {
                    continue;
                }
                let px = &mut buf[y * w + x];
                for c in 0..3 {
                    px[c] = alpha * s.rgb[c] + (1.0 - alpha) * px[c];
                }
            }
        }
    }
    let mut img = RgbImage::new(cam.width, cam.height);
    for (i, px) in buf.iter().enumerate() {
        let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        img.put_pixel(
            (i % w) as u32,
            (i / w) as u32,
            Rgb([to8(px[0]), to8(px[1]), to8(px[2])]),
        );
    }
    Ok(img)
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    img.save(path.as_ref())
        .map_err(|e| Error::Image(format!("{}: {e}", path.as_ref().display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;

    fn cam() -> Camera {
        Camera::looking_at(Vector3::new(0.0, -3.0, 0.0), Vector3::zeros(), 64, 48)
    }

    #[test]
    fn empty_frame_is_background() {
        let mut c = cam();
        c.background = [10, 20, 30];
        let base = GaussianSet::default();
        let img = render_preview(&AnimFrame::rest(&base).unwrap(), &base, &c).unwrap();
        assert!(img.pixels().all(|p| p.0 == [10, 20, 30]));
    }

    #[test]
    fn centered_gaussian_lights_center() {
        let base = GaussianSet::all_object(vec![Gaussian::isotropic(
            Vector3::zeros(),
            0.2,
            [1.0, 0.5, 0.2],
            0.99,
        )]);
        let frame = AnimFrame::rest(&base).unwrap();
        let img = render_preview(&frame, &base, &cam()).unwrap();
        let p = img.get_pixel(32, 24).0;
        assert!(p[0] > 200, "center pixel {p:?}");
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
        let again = render_preview(&frame, &base, &cam()).unwrap();
        assert_eq!(img.as_raw(), again.as_raw());
    }

    #[test]
    fn behind_camera_is_culled() {
        let base = GaussianSet::all_object(vec![Gaussian::isotropic(
            Vector3::new(0.0, -5.0, 0.0),
            0.5,
            [1.0; 3],
            0.99,
        )]);
        let img = render_preview(&AnimFrame::rest(&base).unwrap(), &base, &cam()).unwrap();
        assert!(img.pixels().all(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn camera_json() {
        let c =
            Camera::from_json(r#"{"position":[0,-3,1],"look_at":[0,0,0],"width":32,"height":32}"#)
                .unwrap();
        assert_eq!(c.fov_y_deg, 50.0);
        assert!(Camera::from_json(
            r#"{"position":[0,0,0],"look_at":[0,0,0],"width":3,"height":3}"#
        )
        .is_err());
    }
}
