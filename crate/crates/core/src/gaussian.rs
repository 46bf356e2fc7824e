//! Gaussian primitives and the covariance / deformation math shared by the
//! proxy, simulation and skinning stages.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Number of spherical-harmonic colour coefficients stored per Gaussian
/// (3 DC terms followed by 45 higher-order terms).
pub const SH_COEFFS: usize = 48;

/// Zeroth-order spherical-harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// One anisotropic Gaussian as stored in a 3DGS scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub center: Vector3<f64>,
    /// Raw (possibly unnormalized) rotation quaternion. Normalized on use.
    pub rotation: Quaternion<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// `f_dc_0..2` followed by `f_rest_0..44`.
    pub sh: [f32; SH_COEFFS],
}

impl Gaussian {
    /// Isotropic Gaussian with the given center, scale and DC colour.
    pub fn isotropic(center: Vector3<f64>, scale: f64, rgb: [f64; 3], opacity: f64) -> Self {
        let mut sh = [0.0f32; SH_COEFFS];
        for (c, v) in rgb.iter().enumerate() {
            sh[c] = ((v - 0.5) / SH_C0) as f32;
        }
        Self {
            center,
            rotation: Quaternion::identity(),
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            sh,
        }
    }

    pub fn covariance(&self) -> Result<SymCov> {
        covariance_from_params(&self.rotation, &self.log_scale)
    }

    /// Opacity after the sigmoid activation.
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// Base (view-independent) colour from the DC coefficients, clamped to [0, 1].
    pub fn dc_rgb(&self) -> [f64; 3] {
        let mut rgb = [0.0; 3];
        for (c, out) in rgb.iter_mut().enumerate() {
            *out = (0.5 + SH_C0 * self.sh[c] as f64).clamp(0.0, 1.0);
        }
        rgb
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// An ordered set of Gaussians plus the subset that makes up the simulated object.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianSet {
    pub gaussians: Vec<Gaussian>,
    /// Sorted, unique indices into `gaussians`. Everything else is static background.
    pub object_mask: Vec<usize>,
}

impl GaussianSet {
    /// A set where every Gaussian belongs to the object.
    pub fn all_object(gaussians: Vec<Gaussian>) -> Self {
        let object_mask = (0..gaussians.len()).collect();
        Self {
            gaussians,
            object_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Replace the object mask, sorting and validating it.
    pub fn set_object_mask(&mut self, mut mask: Vec<usize>) -> Result<()> {
        mask.sort_unstable();
        let before = mask.len();
        mask.dedup();
        if mask.len() != before {
            return Err(Error::InvalidInput(
                "object mask contains duplicate indices".into(),
            ));
        }
        if let Some(&last) = mask.last() {
            if last >= self.gaussians.len() {
                return Err(Error::InvalidInput(format!(
                    "object mask index {last} out of range for {} gaussians",
                    self.gaussians.len()
                )));
            }
        }
        self.object_mask = mask;
        Ok(())
    }

    pub fn object_centers(&self) -> Vec<Vector3<f64>> {
        self.object_mask
            .iter()
            .map(|&i| self.gaussians[i].center)
            .collect()
    }

    /// Normalize every stored quaternion in place. Zero quaternions are rejected.
    pub fn normalize_rotations(&mut self) -> Result<()> {
        for (i, g) in self.gaussians.iter_mut().enumerate() {
            let n = g.rotation.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::InvalidRotation(format!("gaussian {i}")));
            }
            g.rotation /= n;
        }
        Ok(())
    }
}

/// Upper triangle of a symmetric 3x3 matrix: `[xx, xy, xz, yy, yz, zz]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymCov(pub [f64; 6]);

impl SymCov {
    pub fn identity() -> Self {
        SymCov([1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
    }

    /// Symmetrize `m` by averaging its off-diagonal pairs.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        SymCov([
            m[(0, 0)],
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            m[(1, 1)],
            0.5 * (m[(1, 2)] + m[(2, 1)]),
            m[(2, 2)],
        ])
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let [xx, xy, xz, yy, yz, zz] = self.0;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }
}

/// Rotation matrix of a (not necessarily normalized) quaternion.
pub fn rotation_matrix(rotation: &Quaternion<f64>) -> Result<Matrix3<f64>> {
    let n = rotation.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidRotation(format!("quaternion {rotation:?}")));
    }
    Ok(UnitQuaternion::from_quaternion(*rotation)
        .to_rotation_matrix()
        .into_inner())
}

/// `Σ = R diag(exp(log_scale))² Rᵀ`.
pub fn covariance_from_params(
    rotation: &Quaternion<f64>,
    log_scale: &Vector3<f64>,
) -> Result<SymCov> {
    let r = rotation_matrix(rotation)?;
    let s2 = log_scale.map(|l| (2.0 * l).exp());
    let rs = r * Matrix3::from_diagonal(&s2);
    Ok(SymCov::from_matrix(&(rs * r.transpose())))
}

/// `F Σ Fᵀ`, symmetrized.
pub fn transform_covariance(sigma: &SymCov, f_hat: &Matrix3<f64>) -> SymCov {
    let m = f_hat * sigma.to_matrix() * f_hat.transpose();
    SymCov::from_matrix(&m)
}

/// Rotation / stretch split of a deformation gradient, `F = R S`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decomp {
    /// Proper rotation `U Vᵀ`.
    pub rotation: Matrix3<f64>,
    /// Symmetric stretch `V diag(s) Vᵀ`.
    pub stretch: Matrix3<f64>,
    pub u: Matrix3<f64>,
    pub singular_values: Vector3<f64>,
    pub v: Matrix3<f64>,
}

/// Polar decomposition through the SVD.
///
/// When `U Vᵀ` would be a reflection, the column of `U` belonging to the
/// smallest singular value and that singular value are negated, so the
/// rotation is always proper and `F = R S` still holds.
pub fn polar_decompose(f: &Matrix3<f64>) -> Result<Decomp> {
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "deformation gradient has non-finite entries".into(),
        ));
    }
    let svd = f.svd(true, true);
    let mut u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut s = svd.singular_values;
    let v = v_t.transpose();
    if (u * v_t).determinant() < 0.0 {
        let k = s.imin();
        u.set_column(k, &(-u.column(k)));
        s[k] = -s[k];
    }
    let rotation = u * v_t;
    let stretch = v * Matrix3::from_diagonal(&s) * v_t;
    Ok(Decomp {
        rotation,
        stretch: 0.5 * (stretch + stretch.transpose()),
        u,
        singular_values: s,
        v,
    })
}

/// Rotation and log-scale reproducing a covariance (inverse of
/// [`covariance_from_params`] up to axis order). Eigenvalues are floored at a
/// tiny positive value so degenerate covariances stay representable.
pub fn params_from_covariance(sigma: &SymCov) -> (Quaternion<f64>, Vector3<f64>) {
    let eig = nalgebra::SymmetricEigen::new(sigma.to_matrix());
    let mut axes = eig.eigenvectors;
    if axes.determinant() < 0.0 {
        axes.set_column(2, &(-axes.column(2)));
    }
    let rot = UnitQuaternion::from_matrix(&axes);
    let log_scale = eig.eigenvalues.map(|l| 0.5 * l.max(1e-30).ln());
    (*rot.quaternion(), log_scale)
}

/// Skew-symmetric cross-product matrix `[w]×`.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}
