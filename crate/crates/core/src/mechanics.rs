//! Quasi-static mechanics of the inflated, everting vine body.
//!
//! The unconstrained segment is modeled as a constant-curvature arc that
//! leaves the base along its tangent and bends by `theta` in a plane rotated
//! `bend_azimuth` about the tangent. The tip magnet sits at the distal end of
//! the arc with its magnetization along the tip tangent.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{self, DipoleSource, MagnetSpec, MagneticsError, Wrench};

pub const GRAVITY: f64 = 9.81;

/// Largest deflection the arc model represents.
pub const MAX_DEFLECTION: f64 = PI - 1.0e-3;

/// Moment residual accepted by the equilibrium solver, N m.
pub const MOMENT_TOLERANCE: f64 = 1.0e-9;

const MAX_BISECTIONS: usize = 200;
const SCAN_INTERVALS: f64 = 256.0;
const ROOT_WIDTH: f64 = 1.0e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanicsError {
    #[error("invalid vine parameters: {0}")]
    InvalidParams(String),
    #[error("invalid vine state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
    #[error("equilibrium solver did not converge after {iterations} iterations (|g| = {residual:e} N m)")]
    SolverFailure { iterations: usize, residual: f64 },
}

/// Material and geometric constants of the vine and its tip capsule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VineParams {
    /// Inflated body diameter, m.
    pub diameter: f64,
    /// Lumped growth drag, N.
    #[serde(default)]
    pub drag: f64,
    /// Restoration coefficient `cr` in `tau_g = cr P D^3 theta`.
    pub restoration_coeff: f64,
    /// Collapse coefficient `cb` in `M_c = cb P (D/2)^3`.
    #[serde(default = "default_collapse_coeff")]
    pub collapse_coeff: f64,
    /// kg
    #[serde(default = "default_tip_mass")]
    pub tip_mass: f64,
    /// m
    #[serde(default = "default_tip_length")]
    pub tip_length: f64,
    /// m
    #[serde(default = "default_tip_diameter")]
    pub tip_diameter: f64,
    /// Magnet carried in the tip capsule.
    #[serde(default = "MagnetSpec::default_ipm")]
    pub ipm: MagnetSpec,
}

fn default_collapse_coeff() -> f64 {
    PI / 2.0
}
fn default_tip_mass() -> f64 {
    0.030
}
fn default_tip_length() -> f64 {
    0.035
}
fn default_tip_diameter() -> f64 {
    0.020
}

/// Restoration coefficient fitted to the bend-radius table.
pub const DEFAULT_RESTORATION_COEFF: f64 = 1.0e-4;

impl Default for VineParams {
    fn default() -> Self {
        Self {
            diameter: 0.025,
            drag: 0.0,
            restoration_coeff: DEFAULT_RESTORATION_COEFF,
            collapse_coeff: default_collapse_coeff(),
            tip_mass: default_tip_mass(),
            tip_length: default_tip_length(),
            tip_diameter: default_tip_diameter(),
            ipm: MagnetSpec::default_ipm(),
        }
    }
}

impl VineParams {
    pub fn validate(&self) -> Result<(), MechanicsError> {
        let bad = |msg: String| Err(MechanicsError::InvalidParams(msg));
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return bad(format!("diameter must be positive, got {}", self.diameter));
        }
        if !(self.drag >= 0.0 && self.drag.is_finite()) {
            return bad(format!("drag must be non-negative, got {}", self.drag));
        }
        if !(self.restoration_coeff > 0.0 && self.restoration_coeff.is_finite()) {
            return bad(format!(
                "restoration_coeff must be positive, got {}",
                self.restoration_coeff
            ));
        }
        if !(self.collapse_coeff > 0.0 && self.collapse_coeff.is_finite()) {
            return bad(format!(
                "collapse_coeff must be positive, got {}",
                self.collapse_coeff
            ));
        }
        if !(self.tip_mass >= 0.0 && self.tip_mass.is_finite()) {
            return bad(format!(
                "tip_mass must be non-negative, got {}",
                self.tip_mass
            ));
        }
        if !(self.tip_length > 0.0 && self.tip_diameter > 0.0) {
            return bad("tip capsule dimensions must be positive".into());
        }
        if self.tip_diameter >= self.diameter {
            return bad(format!(
                "tip diameter {} must be smaller than the vine diameter {}",
                self.tip_diameter, self.diameter
            ));
        }
        self.ipm.validate()?;
        Ok(())
    }

    /// Cross-sectional area of the inflated body, m^2.
    pub fn area(&self) -> f64 {
        PI * self.diameter * self.diameter / 4.0
    }

    pub fn tip_radius(&self) -> f64 {
        0.5 * self.tip_diameter
    }

    pub fn ipm_moment(&self) -> f64 {
        self.ipm.moment_magnitude()
    }
}

/// Origin and direction of the unconstrained segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub position: Vector3<f64>,
    /// Unit tangent along which the segment leaves the base.
    pub tangent: Vector3<f64>,
}

impl BasePose {
    pub fn new(position: Vector3<f64>, tangent: Vector3<f64>) -> Self {
        Self {
            position,
            tangent: tangent.normalize(),
        }
    }

    /// Orthonormal frame `(tangent, normal, binormal)`.
    ///
    /// The normal (azimuth zero) is horizontal, `z x tangent`, so for a
    /// horizontal tangent an azimuth of `pi/2` bends the segment upward.
    pub fn frame(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let t = self.tangent;
        let mut n = Vector3::z().cross(&t);
        if n.norm() < 1e-9 {
            n = t.cross(&Vector3::x());
        }
        let n = n.normalize();
        (t, n, t.cross(&n))
    }

    /// Unit bending direction for a given azimuth.
    pub fn bend_direction(&self, azimuth: f64) -> Vector3<f64> {
        let (_, n, b) = self.frame();
        azimuth.cos() * n + azimuth.sin() * b
    }
}

impl Default for BasePose {
    fn default() -> Self {
        Self::new(Vector3::zeros(), Vector3::x())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VineState {
    pub base: BasePose,
    /// Length laid along the environment before the base, m.
    pub constrained_length: f64,
    /// Arc length of the free segment, m.
    pub unconstrained_length: f64,
    /// Pa
    pub pressure: f64,
    /// rad, in `[0, pi)`
    pub deflection: f64,
    /// rad, plane of bending about the base tangent
    pub bend_azimuth: f64,
    /// rad
    #[serde(default)]
    pub tip_roll: f64,
}

impl VineState {
    pub fn straight(base: BasePose, length: f64, pressure: f64) -> Self {
        Self {
            base,
            constrained_length: 0.0,
            unconstrained_length: length,
            pressure,
            deflection: 0.0,
            bend_azimuth: 0.0,
            tip_roll: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), MechanicsError> {
        let bad = |msg: String| Err(MechanicsError::InvalidState(msg));
        if !(self.pressure >= 0.0 && self.pressure.is_finite()) {
            return bad(format!(
                "pressure must be non-negative, got {}",
                self.pressure
            ));
        }
        if !(self.constrained_length >= 0.0 && self.unconstrained_length >= 0.0) {
            return bad("lengths must be non-negative".into());
        }
        if !(0.0..PI).contains(&self.deflection) {
            return bad(format!(
                "deflection must lie in [0, pi), got {}",
                self.deflection
            ));
        }
        if (self.base.tangent.norm() - 1.0).abs() > 1e-9 {
            return bad("base tangent must be a unit vector".into());
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.constrained_length + self.unconstrained_length
    }
}

/// Distal end of the constant-curvature segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcPose {
    pub tip_position: Vector3<f64>,
    pub tip_tangent: Vector3<f64>,
    /// 1/m
    pub curvature: f64,
}

/// Pushing force of the pressurized body, `max(0, P A / 2 - C)`.
pub fn growing_force(pressure: f64, params: &VineParams) -> f64 {
    (0.5 * pressure * params.area() - params.drag).max(0.0)
}

/// Elastic moment resisting a deflection, `cr P D^3 theta`.
pub fn restoration_moment(theta: f64, pressure: f64, params: &VineParams) -> f64 {
    params.restoration_coeff * pressure * params.diameter.powi(3) * theta
}

/// Bending moment at which the inflated body kinks, `cb P (D/2)^3`.
pub fn collapse_moment(pressure: f64, params: &VineParams) -> f64 {
    params.collapse_coeff * pressure * (0.5 * params.diameter).powi(3)
}

/// Arc offset from the base in the `(tangent, bend direction)` plane.
///
/// Valid for signed `theta`; a negative angle mirrors the arc.
fn arc_offsets(length: f64, theta: f64) -> (f64, f64) {
    if theta.abs() < 1e-8 {
        // Series expansion avoids cancellation near the straight pose.
        let t2 = theta * theta;
        (
            length * (1.0 - t2 / 6.0),
            length * theta * (0.5 - t2 / 24.0),
        )
    } else {
        let r = length / theta;
        (r * theta.sin(), r * (1.0 - theta.cos()))
    }
}

fn arc_from(base: &BasePose, length: f64, theta: f64, direction: &Vector3<f64>) -> ArcPose {
    let t = base.tangent;
    let (along, across) = arc_offsets(length, theta);
    ArcPose {
        tip_position: base.position + along * t + across * direction,
        tip_tangent: theta.cos() * t + theta.sin() * direction,
        curvature: if length > 0.0 {
            theta.abs() / length
        } else {
            0.0
        },
    }
}

/// Forward kinematics of the unconstrained segment.
pub fn tip_pose(state: &VineState) -> ArcPose {
    let dir = state.base.bend_direction(state.bend_azimuth);
    arc_from(
        &state.base,
        state.unconstrained_length,
        state.deflection,
        &dir,
    )
}

/// Bending radius `l / theta`; `None` for a straight segment.
pub fn bending_radius(state: &VineState) -> Option<f64> {
    (state.deflection > 0.0).then(|| state.unconstrained_length / state.deflection)
}

/// Tip-magnet dipole for a given arc.
pub fn ipm_dipole(arc: &ArcPose, params: &VineParams) -> DipoleSource {
    DipoleSource::new(arc.tip_position, arc.tip_tangent * params.ipm_moment())
}

/// Loads evaluated on the tip for one candidate configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipLoad {
    pub arc: ArcPose,
    pub wrench: Wrench,
    /// Total moment about the segment base, N m.
    pub moment: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BalanceOptions {
    /// Include the tip weight.
    pub gravity: bool,
    /// Restrict bending to the base plane (azimuth 0 or pi).
    pub planar: bool,
    /// Continue from this signed deflection instead of from the straight pose.
    pub warm_start: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub theta: f64,
    pub bend_azimuth: f64,
    pub buckled: bool,
    /// No stable balance was found: the moment balance had no root before
    /// `MAX_DEFLECTION`, or no bend plane could turn to an equilibrium.
    /// `theta` is then the last deflection reached.
    pub saturated: bool,
    /// In-plane applied bending moment at `theta`, N m.
    pub applied_moment: f64,
    /// `applied - restoration` at `theta`, N m.
    pub residual: f64,
    pub magnetic: Wrench,
}

struct Balance<'a> {
    epm: &'a DipoleSource,
    state: &'a VineState,
    params: &'a VineParams,
    gravity: bool,
}

impl Balance<'_> {
    fn load(&self, theta: f64, direction: &Vector3<f64>) -> Result<TipLoad, MechanicsError> {
        let arc = arc_from(
            &self.state.base,
            self.state.unconstrained_length,
            theta,
            direction,
        );
        let ipm = ipm_dipole(&arc, self.params);
        let wrench = magnetics::wrench_on_ipm(self.epm, &ipm)?;
        let mut force = wrench.force;
        if self.gravity {
            force.z -= self.params.tip_mass * GRAVITY;
        }
        let lever = arc.tip_position - self.state.base.position;
        Ok(TipLoad {
            arc,
            wrench,
            moment: wrench.torque + lever.cross(&force),
        })
    }

    /// `g(theta)` for bending toward `direction` (signed theta allowed).
    fn residual(
        &self,
        theta: f64,
        direction: &Vector3<f64>,
    ) -> Result<(f64, TipLoad), MechanicsError> {
        let load = self.load(theta, direction)?;
        let axis = self.state.base.tangent.cross(direction);
        let applied = load.moment.dot(&axis);
        Ok((
            applied - restoration_moment(theta, self.state.pressure, self.params),
            load,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bound {
    Interior,
    Lower,
    Upper,
}

/// Stable root of a function that decreases through zero, followed from
/// `start` by stepping downhill in `g` and refining by bisection.
fn follow_root<F>(mut g: F, start: f64, lo: f64, hi: f64) -> Result<(f64, Bound), MechanicsError>
where
    F: FnMut(f64) -> Result<f64, MechanicsError>,
{
    let step = MAX_DEFLECTION / SCAN_INTERVALS;
    let start = start.clamp(lo, hi);
    let g0 = g(start)?;
    if g0 == 0.0 {
        return Ok((start, Bound::Interior));
    }
    let (mut a, mut b);
    if g0 > 0.0 {
        a = start;
        loop {
            b = (a + step).min(hi);
            if g(b)? <= 0.0 {
                break;
            }
            if b >= hi {
                return Ok((hi, Bound::Upper));
            }
            a = b;
        }
    } else {
        b = start;
        loop {
            a = (b - step).max(lo);
            if g(a)? > 0.0 {
                break;
            }
            if a <= lo {
                return Ok((lo, Bound::Lower));
            }
            b = a;
        }
    }
    // g(a) > 0 >= g(b). Bisect to the bracket width rather than stopping at
    // the moment tolerance, so the root is a smooth function of the inputs.
    let mut last = f64::INFINITY;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (a + b);
        let gm = g(mid)?;
        last = gm;
        if gm == 0.0 || mid <= a || mid >= b || b - a < ROOT_WIDTH {
            if gm.abs() < MOMENT_TOLERANCE {
                return Ok((mid, Bound::Interior));
            }
            break;
        }
        if gm > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Err(MechanicsError::SolverFailure {
        iterations: MAX_BISECTIONS,
        residual: last.abs(),
    })
}

/// Deflection at which the applied bending moment balances the restoration
/// moment, starting from the straight pose and taking the smallest root.
///
/// Gravity is excluded and the bend plane is free.
pub fn equilibrium_deflection(
    epm: &DipoleSource,
    state: &VineState,
    params: &VineParams,
) -> Result<Equilibrium, MechanicsError> {
    equilibrium_with(epm, state, params, &BalanceOptions::default())
}

/// Equilibrium with explicit gravity, plane constraint and warm start.
///
/// With a warm start the solver follows the equilibrium branch through the
/// previous deflection instead of restarting from the straight pose, which
/// is what a quasi-static trajectory needs.
pub fn equilibrium_with(
    epm: &DipoleSource,
    state: &VineState,
    params: &VineParams,
    opts: &BalanceOptions,
) -> Result<Equilibrium, MechanicsError> {
    state.validate()?;
    if !epm.is_finite() {
        return Err(MechanicsError::InvalidState(
            "EPM dipole is not finite".into(),
        ));
    }
    let balance = Balance {
        epm,
        state,
        params,
        gravity: opts.gravity,
    };
    if state.unconstrained_length == 0.0 {
        let load = balance.load(0.0, &state.base.bend_direction(state.bend_azimuth))?;
        return Ok(Equilibrium {
            theta: 0.0,
            bend_azimuth: state.bend_azimuth,
            buckled: false,
            saturated: false,
            applied_moment: 0.0,
            residual: 0.0,
            magnetic: load.wrench,
        });
    }
    if opts.planar {
        planar_equilibrium(&balance, state, params, opts.warm_start)
    } else {
        spatial_equilibrium(&balance, state, params, opts.warm_start)
    }
}

fn finish(
    balance: &Balance<'_>,
    params: &VineParams,
    signed_theta: f64,
    direction: &Vector3<f64>,
    azimuth: f64,
    bound: Bound,
    stranded: bool,
) -> Result<Equilibrium, MechanicsError> {
    let (residual, load) = balance.residual(signed_theta, direction)?;
    let axis = balance.state.base.tangent.cross(direction);
    let applied = load.moment.dot(&axis);
    let theta = signed_theta.abs();
    let saturated =
        stranded || bound == Bound::Upper || (bound == Bound::Lower && signed_theta < 0.0);
    let applied_mag = if signed_theta < 0.0 {
        -applied
    } else {
        applied
    };
    let buckled = theta > 0.0
        && applied_mag > collapse_moment(balance.state.pressure, params) + MOMENT_TOLERANCE;
    Ok(Equilibrium {
        theta,
        bend_azimuth: if signed_theta < 0.0 {
            azimuth + PI
        } else {
            azimuth
        },
        buckled,
        saturated,
        applied_moment: applied_mag,
        residual: if signed_theta < 0.0 {
            -residual
        } else {
            residual
        },
        magnetic: load.wrench,
    })
}

fn planar_equilibrium(
    balance: &Balance<'_>,
    state: &VineState,
    params: &VineParams,
    warm_start: Option<f64>,
) -> Result<Equilibrium, MechanicsError> {
    let (_, n, _) = state.base.frame();
    let start = warm_start.unwrap_or(0.0);
    let (theta, bound) = follow_root(
        |th| Ok(balance.residual(th, &n)?.0),
        start,
        -MAX_DEFLECTION,
        MAX_DEFLECTION,
    )?;
    finish(balance, params, theta, &n, 0.0, bound, false)
}

fn spatial_equilibrium(
    balance: &Balance<'_>,
    state: &VineState,
    params: &VineParams,
    warm_start: Option<f64>,
) -> Result<Equilibrium, MechanicsError> {
    let (t, n0, b0) = state.base.frame();
    // Bend toward the perpendicular part of the applied moment on the
    // straight body: for a torque-dominated tip this is the projected field
    // direction.
    let straight_azimuth = || -> Result<Option<f64>, MechanicsError> {
        let load = balance.load(0.0, &n0)?;
        let perp = load.moment - t * t.dot(&load.moment);
        Ok((perp.norm() > 0.0).then(|| {
            let dir = perp.cross(&t);
            dir.dot(&b0).atan2(dir.dot(&n0))
        }))
    };

    // Deflection in a fixed plane, and the moment component along the bend
    // direction, which rotates the plane toward decreasing azimuth.
    let solve_plane = |psi: f64, start: f64| -> Result<(f64, Bound, f64), MechanicsError> {
        let dir = state.base.bend_direction(psi);
        let (theta, bound) = follow_root(
            |x| Ok(balance.residual(x, &dir)?.0),
            start,
            0.0,
            MAX_DEFLECTION,
        )?;
        if theta == 0.0 {
            return Ok((theta, bound, 0.0));
        }
        let load = balance.load(theta, &dir)?;
        Ok((theta, bound, load.moment.dot(&dir)))
    };

    let warm = warm_start.unwrap_or(0.0).abs();
    let mut psi0 = state.bend_azimuth;
    let mut first = None;
    if warm > 0.0 {
        let r = solve_plane(psi0, warm)?;
        // Relaxed to straight with the moment now pushing the other way: start
        // over from the straight pose.
        if !(r.0 == 0.0 && r.1 == Bound::Lower) {
            first = Some(r);
        }
    }
    let (mut theta, mut bound, h0) = match first {
        Some(r) => r,
        None => {
            match straight_azimuth()? {
                Some(psi) => psi0 = psi,
                None if warm == 0.0 => {}
                // No perpendicular moment at all: straight is the balance.
                None => {
                    return finish(
                        balance,
                        params,
                        0.0,
                        &state.base.bend_direction(psi0),
                        psi0,
                        Bound::Interior,
                        false,
                    )
                }
            }
            solve_plane(psi0, 0.0)?
        }
    };
    let mut psi = psi0;
    // Set when the plane cannot turn to a balance: the walk left the
    // azimuths with an interior root, or never found a sign change.
    let mut stranded = false;
    if theta > 0.0 && bound == Bound::Interior && h0.abs() >= MOMENT_TOLERANCE {
        let step = PI / 64.0;
        let dir_sign = if h0 > 0.0 { -1.0 } else { 1.0 };
        let mut a = psi0;
        let mut bracket = None;
        stranded = true;
        for _ in 0..128 {
            let b = a + dir_sign * step;
            let (th, bd, h) = solve_plane(b, 0.0)?;
            if th == 0.0 || bd != Bound::Interior {
                break;
            }
            psi = b;
            theta = th;
            bound = bd;
            if h * h0 <= 0.0 {
                stranded = false;
                if h.abs() >= MOMENT_TOLERANCE {
                    bracket = Some((a, b));
                }
                break;
            }
            a = b;
        }
        if let Some((mut lo, mut hi)) = bracket {
            // h(lo) has the sign of h0 and both ends have interior roots.
            for _ in 0..MAX_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                let (th, bd, h) = solve_plane(mid, 0.0)?;
                let interior = th > 0.0 && bd == Bound::Interior;
                if interior {
                    psi = mid;
                    theta = th;
                    bound = bd;
                    if h.abs() < MOMENT_TOLERANCE {
                        break;
                    }
                }
                if (hi - lo).abs() < 1e-13 {
                    break;
                }
                if interior && h * h0 > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }
    let azimuth = psi.rem_euclid(2.0 * PI);
    let dir = state.base.bend_direction(azimuth);
    finish(balance, params, theta, &dir, azimuth, bound, stranded)
}

/// Total moment about the base and the tip wrench for a given configuration.
pub fn tip_load(
    epm: &DipoleSource,
    state: &VineState,
    params: &VineParams,
    gravity: bool,
) -> Result<TipLoad, MechanicsError> {
    let balance = Balance {
        epm,
        state,
        params,
        gravity,
    };
    balance.load(
        state.deflection,
        &state.base.bend_direction(state.bend_azimuth),
    )
}
