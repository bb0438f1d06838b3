//! Fit of the growth drag, the effective EPM moment and the restoration
//! coefficient.
//!
//! The growing fraction target pins the ratio of growing force to magnetic
//! force, which fixes the moment scale once the drag is known. The drag
//! comes from an optional plateau measurement and otherwise stays at its
//! prior. The restoration coefficient is then fitted to the bend radii.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bend::{bend_table_model, BendConfig};
use super::force::force_cell;
use super::ExperimentError;
use crate::actuation::WorkspaceLimits;
use crate::mechanics::{growing_force, VineParams};
use crate::scenario::Scenario;

/// Bend radius observed for one condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BendTarget {
    /// m
    pub length: f64,
    /// Pa
    pub pressure: f64,
    /// m
    pub radius: f64,
}

/// Pushing force with the EPM far away.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauTarget {
    pub pressure: f64,
    pub force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTargets {
    /// Share of the pushing force due to growth at the reference cell.
    pub growing_fraction: f64,
    pub fraction_pressure: f64,
    pub fraction_height: f64,
    pub fraction_offset: f64,
    #[serde(default)]
    pub plateau: Option<PlateauTarget>,
    /// Drag used when no plateau is given, N.
    #[serde(default)]
    pub drag_prior: f64,
    pub bend: Vec<BendTarget>,
    /// Search interval for the restoration coefficient.
    pub restoration_bounds: [f64; 2],
}

impl Default for CalibrationTargets {
    /// The 79 % growing share at 30 kPa with the EPM 100 mm up and 85 mm
    /// ahead, and the nine mean radii of the bend table.
    fn default() -> Self {
        let table = [
            (0.10, 10e3, 65.5),
            (0.10, 20e3, 66.3),
            (0.10, 30e3, 67.0),
            (0.15, 10e3, 67.3),
            (0.15, 20e3, 69.7),
            (0.15, 30e3, 69.0),
            (0.20, 10e3, 63.4),
            (0.20, 20e3, 72.2),
            (0.20, 30e3, 66.5),
        ];
        Self {
            growing_fraction: 0.79,
            fraction_pressure: 30e3,
            fraction_height: 0.1,
            fraction_offset: 0.085,
            plateau: None,
            drag_prior: 0.0,
            bend: table
                .iter()
                .map(|&(length, pressure, mm)| BendTarget {
                    length,
                    pressure,
                    radius: mm * 1e-3,
                })
                .collect(),
            restoration_bounds: [1e-4, 0.2],
        }
    }
}

impl CalibrationTargets {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Invalid(m.into()));
        if !(self.growing_fraction > 0.0 && self.growing_fraction < 1.0) {
            return bad("growing fraction must lie in (0, 1)");
        }
        if !(self.fraction_pressure > 0.0
            && self.fraction_height > 0.0
            && self.fraction_offset.is_finite())
        {
            return bad("fraction reference cell is malformed");
        }
        if !(self.drag_prior >= 0.0 && self.drag_prior.is_finite()) {
            return bad("drag prior must be non-negative");
        }
        let [lo, hi] = self.restoration_bounds;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad("restoration bounds must satisfy 0 < lo < hi");
        }
        if self.bend.is_empty() {
            return bad("at least one bend target is required");
        }
        if self.bend.iter().any(|b| {
            !(b.length > 0.0 && b.pressure > 0.0 && b.radius > 0.0 && b.radius.is_finite())
        }) {
            return bad("bend targets need positive length, pressure and radius");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResiduals {
    /// Model minus target growing fraction.
    pub growing_fraction: f64,
    /// Model minus target plateau force, N.
    pub plateau: Option<f64>,
    /// Model minus target radius per bend target, m.
    pub bend: Vec<f64>,
    /// Root mean square of `bend`, m.
    pub bend_rms: f64,
    /// `(restoration coefficient, bend rms)` for every evaluation of the fit.
    pub search: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// N
    pub drag: f64,
    pub moment_scale: f64,
    pub restoration_coeff: f64,
    /// The fitted coefficient sits on a search bound.
    pub restoration_at_bound: bool,
    pub residuals: CalibrationResiduals,
}

impl Calibration {
    /// Apply the fitted constants to a scenario.
    pub fn apply(&self, scenario: &mut Scenario) {
        self.apply_params(&mut scenario.vine.params);
        scenario.epm.moment_scale = self.moment_scale;
    }

    pub fn apply_params(&self, params: &mut VineParams) {
        params.drag = self.drag;
        params.restoration_coeff = self.restoration_coeff;
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let io = |source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        };
        let text = std::fs::read_to_string(path).map_err(io)?;
        let cal: Calibration = serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Invalid(format!("{}: {e}", path.display())))?;
        if !(cal.drag >= 0.0 && cal.moment_scale > 0.0 && cal.restoration_coeff > 0.0) {
            return Err(ExperimentError::Invalid(format!(
                "{}: calibrated constants must be positive",
                path.display()
            )));
        }
        Ok(cal)
    }
}

fn bend_rms(
    params: &VineParams,
    epm_moment: f64,
    targets: &[BendTarget],
    cfg: &BendConfig,
) -> Result<(f64, Vec<f64>), ExperimentError> {
    let mut res = Vec::with_capacity(targets.len());
    for t in targets {
        let m = bend_table_model(params, epm_moment, t.length, t.pressure, cfg)?;
        res.push(m.radius - t.radius);
    }
    let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
    Ok((rms, res))
}

/// Fit the free constants.
///
/// `params` supplies everything but the fitted values and `epm_moment` is
/// the nominal EPM moment before scaling. The restoration coefficient is
/// found by a log-spaced scan of its bounds followed by golden-section
/// refinement around the best scan point.
pub fn calibrate(
    targets: &CalibrationTargets,
    params: &VineParams,
    epm_moment: f64,
    limits: &WorkspaceLimits,
    bend_cfg: &BendConfig,
) -> Result<Calibration, ExperimentError> {
    targets.validate()?;
    bend_cfg.validate()?;
    let bend_cfg = &BendConfig {
        overbend: None,
        ..bend_cfg.clone()
    };
    let mut params = params.clone();

    let area = params.area();
    params.drag = match &targets.plateau {
        Some(p) => {
            let c = 0.5 * p.pressure * area - p.force;
            if !(c >= 0.0 && c.is_finite()) {
                return Err(ExperimentError::Invalid(format!(
                    "plateau force {} N exceeds the ideal growing force at {} Pa",
                    p.force, p.pressure
                )));
            }
            c
        }
        None => targets.drag_prior,
    };
    let plateau = targets
        .plateau
        .as_ref()
        .map(|p| growing_force(p.pressure, &params) - p.force);

    let fg = growing_force(targets.fraction_pressure, &params);
    if fg <= 0.0 {
        return Err(ExperimentError::Invalid(
            "drag cancels the growing force at the fraction cell".into(),
        ));
    }
    let cell = force_cell(
        &params,
        epm_moment,
        limits,
        targets.fraction_pressure,
        targets.fraction_height,
        Some(targets.fraction_offset),
    )?;
    if let Some(e) = cell.error {
        return Err(ExperimentError::Invalid(e));
    }
    let f = targets.growing_fraction;
    let moment_scale = fg * (1.0 - f) / (f * cell.magnetic_force);
    let scaled = epm_moment * moment_scale;
    let model_fraction = fg / (fg + cell.magnetic_force * moment_scale);

    let mut search = Vec::new();
    let mut eval = |cr: f64| -> Result<f64, ExperimentError> {
        let mut p = params.clone();
        p.restoration_coeff = cr;
        let (rms, _) = bend_rms(&p, scaled, &targets.bend, bend_cfg)?;
        search.push([cr, rms]);
        Ok(rms)
    };
    let [lo, hi] = targets.restoration_bounds;
    let (llo, lhi) = (lo.ln(), hi.ln());
    const SCAN: usize = 24;
    let grid: Vec<f64> = (0..=SCAN)
        .map(|k| llo + (lhi - llo) * k as f64 / SCAN as f64)
        .collect();
    let mut best = (0, f64::INFINITY);
    for (k, x) in grid.iter().enumerate() {
        let v = eval(x.exp())?;
        if v < best.1 {
            best = (k, v);
        }
    }
    let mut a = grid[best.0.saturating_sub(1)];
    let mut b = grid[(best.0 + 1).min(SCAN)];
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (eval(c.exp())?, eval(d.exp())?);
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eval(c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eval(d.exp())?;
        }
    }
    // The bracket may have collapsed onto a bound; keep the best point seen.
    let mut x = 0.5 * (a + b);
    let mut fx = eval(x.exp())?;
    for cand in [llo, lhi, grid[best.0]] {
        let v = eval(cand.exp())?;
        if v < fx {
            x = cand;
            fx = v;
        }
    }
    let restoration_coeff = x.exp().clamp(lo, hi);
    let restoration_at_bound =
        (restoration_coeff / lo - 1.0).abs() < 1e-6 || (restoration_coeff / hi - 1.0).abs() < 1e-6;
    params.restoration_coeff = restoration_coeff;
    let (bend_rms, bend) = bend_rms(&params, scaled, &targets.bend, bend_cfg)?;
    if !bend_rms.is_finite() {
        return Err(ExperimentError::Solver(format!(
            "restoration fit did not converge; search trajectory {search:?}"
        )));
    }
    Ok(Calibration {
        drag: params.drag,
        moment_scale,
        restoration_coeff,
        restoration_at_bound,
        residuals: CalibrationResiduals {
            growing_fraction: model_fraction - f,
            plateau,
            bend,
            bend_rms,
            search,
        },
    })
}
