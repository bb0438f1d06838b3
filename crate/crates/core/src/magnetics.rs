//! Point-dipole magnetostatics.
//!
//! Both magnets are reduced to point dipoles at their centers. The external
//! magnet (EPM) is large, so this approximation degrades when the separation
//! drops below roughly 1.5 magnet lengths; no near-field correction is applied.
//!
//! Frame convention: world frame with `z` up. Gradients are spatial
//! derivatives at the evaluation point, `G[(j, k)] = dB_j / dx_k`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vacuum permeability in H/m.
pub const MU0: f64 = 4.0e-7 * PI;

/// N52 NdFeB remanence used when a scenario does not specify one.
pub const DEFAULT_REMANENCE: f64 = 1.48;

/// Upper bound on remanence for any real permanent magnet material.
pub const MAX_REMANENCE: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagneticsError {
    #[error("invalid magnet spec: {0}")]
    InvalidSpec(String),
    #[error("dipole singularity: evaluation point coincides with the source")]
    Singularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MagnetShape {
    #[default]
    Cylinder,
}

/// Physical magnet description: geometry and material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnetSpec {
    #[serde(default)]
    pub shape: MagnetShape,
    /// m
    pub diameter: f64,
    /// m
    pub length: f64,
    /// T
    #[serde(default = "default_remanence")]
    pub remanence: f64,
    /// Magnetization direction in the body frame.
    #[serde(default = "default_axis")]
    pub axis: Vector3<f64>,
}

fn default_remanence() -> f64 {
    DEFAULT_REMANENCE
}

fn default_axis() -> Vector3<f64> {
    Vector3::z()
}

impl MagnetSpec {
    pub fn cylinder(diameter: f64, length: f64, remanence: f64) -> Self {
        Self {
            shape: MagnetShape::Cylinder,
            diameter,
            length,
            remanence,
            axis: Vector3::z(),
        }
    }

    /// The 11 mm x 22 mm axially magnetized N52 tip magnet.
    pub fn default_ipm() -> Self {
        Self::cylinder(0.011, 0.022, DEFAULT_REMANENCE)
    }

    /// The 101 mm x 101 mm N52 external magnet.
    pub fn default_epm() -> Self {
        Self::cylinder(0.101, 0.101, DEFAULT_REMANENCE)
    }

    pub fn validate(&self) -> Result<(), MagneticsError> {
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(MagneticsError::InvalidSpec(format!(
                "diameter must be positive, got {}",
                self.diameter
            )));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(MagneticsError::InvalidSpec(format!(
                "length must be positive, got {}",
                self.length
            )));
        }
        // Zero remanence is accepted and yields an inert magnet.
        if !(0.0..=MAX_REMANENCE).contains(&self.remanence) {
            return Err(MagneticsError::InvalidSpec(format!(
                "remanence must lie in [0, {MAX_REMANENCE}] T, got {}",
                self.remanence
            )));
        }
        if (self.axis.norm() - 1.0).abs() > 1e-9 {
            return Err(MagneticsError::InvalidSpec(format!(
                "axis must be a unit vector, norm is {}",
                self.axis.norm()
            )));
        }
        Ok(())
    }

    /// Magnet volume in m^3.
    pub fn volume(&self) -> f64 {
        match self.shape {
            MagnetShape::Cylinder => PI * (0.5 * self.diameter).powi(2) * self.length,
        }
    }

    /// Dipole moment magnitude `Br v / mu0` in A m^2.
    pub fn moment_magnitude(&self) -> f64 {
        self.remanence * self.volume() / MU0
    }
}

/// Dipole moment of `spec` with its magnetization pointing along `world_axis`.
pub fn moment_from_spec(
    spec: &MagnetSpec,
    world_axis: &Vector3<f64>,
) -> Result<Vector3<f64>, MagneticsError> {
    spec.validate()?;
    if (world_axis.norm() - 1.0).abs() > 1e-9 {
        return Err(MagneticsError::InvalidSpec(format!(
            "world axis must be a unit vector, norm is {}",
            world_axis.norm()
        )));
    }
    Ok(world_axis * spec.moment_magnitude())
}

/// A point dipole in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleSource {
    /// m
    pub position: Vector3<f64>,
    /// A m^2
    pub moment: Vector3<f64>,
}

impl DipoleSource {
    pub fn new(position: Vector3<f64>, moment: Vector3<f64>) -> Self {
        Self { position, moment }
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.moment.iter())
            .all(|v| v.is_finite())
    }
}

/// Field and field gradient at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    /// T
    pub b: Vector3<f64>,
    /// T/m
    pub gradient: Matrix3<f64>,
}

/// Force and torque acting on a rigid body.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    /// N
    pub force: Vector3<f64>,
    /// N m
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }
}

/// Separation vector from source to point, with its norm.
fn separation(
    source: &DipoleSource,
    point: &Vector3<f64>,
) -> Result<(Vector3<f64>, f64), MagneticsError> {
    let r = point - source.position;
    let d = r.norm();
    if d == 0.0 || !d.is_finite() {
        return Err(MagneticsError::Singularity);
    }
    Ok((r, d))
}

/// Field of a point dipole, `B = mu0 / (4 pi |r|^3) (3 r_hat r_hat^T - I) m`.
///
/// The expression is even in `r`, so it is identical for the displacement
/// taken from EPM to IPM or from IPM to EPM.
pub fn dipole_field(
    source: &DipoleSource,
    point: &Vector3<f64>,
) -> Result<Vector3<f64>, MagneticsError> {
    let (r, d) = separation(source, point)?;
    let r_hat = r / d;
    let m = &source.moment;
    let k = MU0 / (4.0 * PI * d.powi(3));
    Ok(k * (3.0 * r_hat * r_hat.dot(m) - m))
}

/// Spatial gradient of the dipole field at `point`.
///
/// `3 mu0 / (4 pi |r|^4) (m r_hat^T + r_hat m^T + (r_hat . m)(I - 5 r_hat r_hat^T))`
/// with `r_hat` pointing from the source to the evaluation point. The result
/// is symmetric and traceless.
pub fn dipole_gradient(
    source: &DipoleSource,
    point: &Vector3<f64>,
) -> Result<Matrix3<f64>, MagneticsError> {
    let (r, d) = separation(source, point)?;
    let r_hat = r / d;
    let m = &source.moment;
    let k = 3.0 * MU0 / (4.0 * PI * d.powi(4));
    let rm = r_hat.dot(m);
    let g = m * r_hat.transpose()
        + r_hat * m.transpose()
        + rm * (Matrix3::identity() - 5.0 * r_hat * r_hat.transpose());
    Ok(k * g)
}

pub fn field_sample(
    source: &DipoleSource,
    point: &Vector3<f64>,
) -> Result<FieldSample, MagneticsError> {
    Ok(FieldSample {
        b: dipole_field(source, point)?,
        gradient: dipole_gradient(source, point)?,
    })
}

/// `tau = m_i x B`
pub fn magnetic_torque(m_i: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    m_i.cross(b)
}

/// `F = G^T m_i`
pub fn magnetic_force(gradient: &Matrix3<f64>, m_i: &Vector3<f64>) -> Vector3<f64> {
    gradient.transpose() * m_i
}

/// Force and torque exerted by the EPM's field on the IPM.
pub fn wrench_on_ipm(epm: &DipoleSource, ipm: &DipoleSource) -> Result<Wrench, MagneticsError> {
    let sample = field_sample(epm, &ipm.position)?;
    Ok(Wrench {
        force: magnetic_force(&sample.gradient, &ipm.moment),
        torque: magnetic_torque(&ipm.moment, &sample.b),
    })
}
