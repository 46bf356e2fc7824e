use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::gaussian::polar_decompose;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaterialKind {
    Rigid,
    Elastic,
    Fluid,
}

/// Region material. Fields not relevant to `kind` are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Material {
    pub kind: MaterialKind,
    /// kg/m³
    pub density: f64,
    /// Pa
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Equation-of-state stiffness B in Pa.
    pub stiffness: f64,
    pub eos_exponent: f64,
    /// Pairwise cohesion coefficient.
    pub surface_tension: f64,
    /// Artificial viscosity coefficient.
    pub viscosity: f64,
    pub restitution: f64,
    pub friction: f64,
}

impl Material {
    pub fn elastic() -> Self {
        Material {
            kind: MaterialKind::Elastic,
            density: 1000.0,
            youngs_modulus: 1e5,
            poisson_ratio: 0.3,
            stiffness: 5e4,
            eos_exponent: 7.0,
            surface_tension: 0.0,
            viscosity: 0.1,
            restitution: 0.0,
            friction: 0.5,
        }
    }

    pub fn rigid() -> Self {
        Material {
            kind: MaterialKind::Rigid,
            ..Material::elastic()
        }
    }

    pub fn fluid() -> Self {
        Material {
            kind: MaterialKind::Fluid,
            ..Material::elastic()
        }
    }

    pub fn of_kind(kind: MaterialKind) -> Self {
        match kind {
            MaterialKind::Rigid => Material::rigid(),
            MaterialKind::Elastic => Material::elastic(),
            MaterialKind::Fluid => Material::fluid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{:?} material: {what}", self.kind)));
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad("density must be > 0");
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return bad("restitution must be in [0, 1]");
        }
        if !(self.friction >= 0.0 && self.friction.is_finite()) {
            return bad("friction must be >= 0");
        }
        match self.kind {
            MaterialKind::Elastic => {
                if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
                    return bad("youngs modulus must be > 0");
                }
                if !(0.0..0.5).contains(&self.poisson_ratio) {
                    return bad("poisson ratio must be in [0, 0.5)");
                }
            }
            MaterialKind::Fluid => {
                if !(self.stiffness > 0.0 && self.stiffness.is_finite()) {
                    return bad("stiffness must be > 0");
                }
                if !(self.eos_exponent >= 1.0 && self.eos_exponent.is_finite()) {
                    return bad("eos exponent must be >= 1");
                }
                if !(self.surface_tension >= 0.0 && self.surface_tension.is_finite()) {
                    return bad("surface tension must be >= 0");
                }
                if !(self.viscosity >= 0.0 && self.viscosity.is_finite()) {
                    return bad("viscosity must be >= 0");
                }
            }
            MaterialKind::Rigid => {}
        }
        Ok(())
    }

    /// Lamé parameters (μ, λ).
    pub fn lame(&self) -> (f64, f64) {
        lame(self.youngs_modulus, self.poisson_ratio)
    }

    /// Elastic wave speed used by the time-step bound.
    pub fn elastic_wave_speed(&self) -> f64 {
        (self.youngs_modulus / self.density).sqrt()
    }

    /// Speed of sound of the equation of state.
    pub fn sound_speed(&self) -> f64 {
        (self.eos_exponent * self.stiffness / self.density).sqrt()
    }
}

pub fn lame(e: f64, nu: f64) -> (f64, f64) {
    let mu = e / (2.0 * (1.0 + nu));
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    (mu, lambda)
}

/// Fixed-corotated energy density Ψ(F) = μ‖F − R‖² + λ/2 (J − 1)².
pub fn corotated_energy(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Result<f64> {
    let d = polar_decompose(f)?;
    let j = f.determinant();
    Ok(mu * (f - d.rotation).norm_squared() + 0.5 * lambda * (j - 1.0).powi(2))
}

/// First Piola-Kirchhoff stress P = 2μ(F − R) + λ(J − 1)J F⁻ᵀ.
pub fn corotated_stress(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Result<Matrix3<f64>> {
    let d = polar_decompose(f)?;
    let j = f.determinant();
    // J F⁻ᵀ is the cofactor matrix, which stays finite as J → 0.
    let cofactor = cofactor(f);
    Ok(2.0 * mu * (f - d.rotation) + lambda * (j - 1.0) * cofactor)
}

fn cofactor(f: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = f.column(1).cross(&f.column(2));
    let c1 = f.column(2).cross(&f.column(0));
    let c2 = f.column(0).cross(&f.column(1));
    Matrix3::from_columns(&[c0, c1, c2])
}
