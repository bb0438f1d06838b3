//! Axial pushing force of a straight vine with the EPM above and ahead.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::actuation::WorkspaceLimits;
use crate::magnetics::{self, DipoleSource};
use crate::mechanics::{growing_force, VineParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceSweepConfig {
    /// Pa
    pub pressures: Vec<f64>,
    /// EPM height above the tip magnet, m.
    pub heights: Vec<f64>,
    /// Horizontal EPM offset ahead of the tip; absent searches for the
    /// offset that maximizes the axial force.
    pub offset: Option<f64>,
}

impl Default for ForceSweepConfig {
    fn default() -> Self {
        Self {
            pressures: (0..=6).map(|k| 5e3 * k as f64).collect(),
            heights: (0..=4).map(|k| 0.1 + 0.05 * k as f64).collect(),
            offset: Some(0.085),
        }
    }
}

impl ForceSweepConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.pressures.is_empty() || self.heights.is_empty() {
            return Err(ExperimentError::Invalid(
                "force sweep needs pressures and heights".into(),
            ));
        }
        if self.pressures.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(ExperimentError::Invalid(
                "pressures must be non-negative".into(),
            ));
        }
        if self.heights.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(ExperimentError::Invalid("heights must be positive".into()));
        }
        if let Some(o) = self.offset {
            if !o.is_finite() {
                return Err(ExperimentError::Invalid("offset must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceCell {
    pub pressure: f64,
    pub height: f64,
    pub offset: f64,
    /// N
    pub growing_force: f64,
    /// Axial magnetic force with the best EPM orientation, N.
    pub magnetic_force: f64,
    pub push: f64,
    pub epm_moment_dir: [f64; 3],
    /// Set when the geometry is not allowed; the force columns are then NaN.
    pub error: Option<String>,
}

impl ForceCell {
    pub fn growing_fraction(&self) -> f64 {
        self.growing_force / self.push
    }
}

/// Axial force per unit EPM moment for each EPM moment axis.
///
/// The force is linear in the EPM moment, so the best direction is this
/// vector normalized and the best force its norm times the moment.
fn axial_sensitivity(
    params: &VineParams,
    height: f64,
    offset: f64,
) -> Result<Vector3<f64>, ExperimentError> {
    let ipm = DipoleSource::new(Vector3::zeros(), Vector3::x() * params.ipm_moment());
    let at = Vector3::new(offset, 0.0, height);
    let mut w = Vector3::zeros();
    for k in 0..3 {
        let epm = DipoleSource::new(at, Vector3::ith(k, 1.0));
        w[k] = magnetics::wrench_on_ipm(&epm, &ipm)
            .map_err(|e| ExperimentError::Solver(e.to_string()))?
            .force
            .x;
    }
    Ok(w)
}

/// Offset in `[0, 3 h]` with the largest axial force, by golden-section search.
fn best_offset(params: &VineParams, height: f64) -> Result<f64, ExperimentError> {
    let f = |o: f64| axial_sensitivity(params, height, o).map(|w| -w.norm());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, 3.0 * height);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-9 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// One sweep cell. The EPM sits `height` above and `offset` ahead of a tip
/// magnet pointing along +x, oriented for the largest axial force.
pub fn force_cell(
    params: &VineParams,
    epm_moment: f64,
    limits: &WorkspaceLimits,
    pressure: f64,
    height: f64,
    offset: Option<f64>,
) -> Result<ForceCell, ExperimentError> {
    let offset = match offset {
        Some(o) => o,
        None => best_offset(params, height)?,
    };
    let fg = growing_force(pressure, params);
    let separation = (offset * offset + height * height).sqrt();
    if separation < limits.min_standoff {
        return Ok(ForceCell {
            pressure,
            height,
            offset,
            growing_force: fg,
            magnetic_force: f64::NAN,
            push: f64::NAN,
            epm_moment_dir: [f64::NAN; 3],
            error: Some(format!(
                "EPM separation {separation:.4} m is inside the minimum standoff {:.4} m",
                limits.min_standoff
            )),
        });
    }
    let w = axial_sensitivity(params, height, offset)?;
    let n = w.norm();
    let dir = if n > 0.0 { w / n } else { Vector3::x() };
    let fm = n * epm_moment;
    Ok(ForceCell {
        pressure,
        height,
        offset,
        growing_force: fg,
        magnetic_force: fm,
        push: fg + fm,
        epm_moment_dir: [dir.x, dir.y, dir.z],
        error: None,
    })
}

/// Pushing force over the pressure by height grid, ordered by pressure then
/// height.
pub fn run_force_sweep(
    cfg: &ForceSweepConfig,
    params: &VineParams,
    epm_moment: f64,
    limits: &WorkspaceLimits,
) -> Result<Vec<ForceCell>, ExperimentError> {
    cfg.validate()?;
    let mut pressures = cfg.pressures.clone();
    pressures.sort_by(f64::total_cmp);
    let mut heights = cfg.heights.clone();
    heights.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(pressures.len() * heights.len());
    for p in &pressures {
        for d in &heights {
            out.push(force_cell(params, epm_moment, limits, *p, *d, cfg.offset)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_orientation_beats_fixed_axes() {
        let params = VineParams::default();
        let limits = WorkspaceLimits::default();
        let cell = force_cell(&params, 952.9, &limits, 30e3, 0.1, Some(0.085)).unwrap();
        let ipm = DipoleSource::new(Vector3::zeros(), Vector3::x() * params.ipm_moment());
        for axis in [Vector3::x(), -Vector3::x(), Vector3::z(), -Vector3::z()] {
            let epm = DipoleSource::new(Vector3::new(0.085, 0.0, 0.1), axis * 952.9);
            let f = magnetics::wrench_on_ipm(&epm, &ipm).unwrap().force.x;
            assert!(f <= cell.magnetic_force + 1e-12);
        }
    }

    #[test]
    fn too_close_is_reported_per_cell() {
        let params = VineParams::default();
        let limits = WorkspaceLimits::default();
        let cell = force_cell(&params, 952.9, &limits, 10e3, 0.03, Some(0.02)).unwrap();
        assert!(cell.error.is_some() && cell.push.is_nan());
    }
}
