//! Inverse actuation: EPM poses that realize a tip wrench or heading,
//! scripted EPM trajectories, suspension setpoints and joystick mapping.

use std::f64::consts::PI;

use nalgebra::{Rotation3, SMatrix, SVector, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{self, DipoleSource, MagneticsError, Wrench};
use crate::mechanics::{
    self, restoration_moment, tip_pose, BasePose, MechanicsError, VineParams, VineState, GRAVITY,
};

/// Weighted wrench residual below which a solve counts as feasible.
pub const SOLVE_TOLERANCE: f64 = 1.0e-9;

const MAX_ITERATIONS: usize = 200;
const INITIAL_DAMPING: f64 = 1.0e-3;
const FD_STEP: f64 = 1.0e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActuationError {
    #[error("invalid actuation input: {0}")]
    InvalidInput(String),
    #[error("desired heading is {0:.3} rad from the base tangent; at most pi/2 is reachable")]
    HeadingOutOfRange(f64),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
    #[error(transparent)]
    Mechanics(#[from] MechanicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpmPose {
    pub position: Vector3<f64>,
    /// Unit direction of the EPM magnetic moment.
    pub moment_dir: Vector3<f64>,
}

impl EpmPose {
    pub fn new(position: Vector3<f64>, moment_dir: Vector3<f64>) -> Self {
        Self {
            position,
            moment_dir: moment_dir.normalize(),
        }
    }

    pub fn dipole(&self, moment: f64) -> DipoleSource {
        DipoleSource::new(self.position, self.moment_dir * moment)
    }

    pub fn validate(&self) -> Result<(), ActuationError> {
        if !self
            .position
            .iter()
            .chain(self.moment_dir.iter())
            .all(|v| v.is_finite())
        {
            return Err(ActuationError::InvalidInput(
                "EPM pose is not finite".into(),
            ));
        }
        if (self.moment_dir.norm() - 1.0).abs() > 1e-9 {
            return Err(ActuationError::InvalidInput(
                "EPM moment direction must be a unit vector".into(),
            ));
        }
        Ok(())
    }
}

/// Axis-aligned box, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| p[i].clamp(self.min[i], self.max[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceLimits {
    /// Minimum EPM-IPM center separation, m.
    pub min_standoff: f64,
    pub bounds: Aabb,
    /// m/s
    pub max_speed: f64,
    /// Rate limit for the moment direction under joystick control, rad/s.
    #[serde(default = "default_max_angular_speed")]
    pub max_angular_speed: f64,
}

fn default_max_angular_speed() -> f64 {
    0.5
}

impl Default for WorkspaceLimits {
    fn default() -> Self {
        Self {
            min_standoff: 0.06,
            bounds: Aabb {
                min: Vector3::new(-0.6, -0.6, -0.1),
                max: Vector3::new(0.6, 0.6, 0.6),
            },
            max_speed: 0.004,
            max_angular_speed: default_max_angular_speed(),
        }
    }
}

impl WorkspaceLimits {
    pub fn validate(&self) -> Result<(), ActuationError> {
        if !(self.min_standoff > 0.0 && self.min_standoff.is_finite()) {
            return Err(ActuationError::InvalidInput(format!(
                "min_standoff must be positive, got {}",
                self.min_standoff
            )));
        }
        if (0..3).any(|i| !(self.bounds.min[i] <= self.bounds.max[i])) {
            return Err(ActuationError::InvalidInput(
                "bounding box min exceeds max".into(),
            ));
        }
        if !(self.max_speed >= 0.0 && self.max_angular_speed >= 0.0) {
            return Err(ActuationError::InvalidInput(
                "speed limits must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Whether an EPM position is legal for an IPM at `ipm`.
    pub fn admits(&self, position: &Vector3<f64>, ipm: &Vector3<f64>) -> bool {
        self.bounds.contains(position)
            && (position - ipm).norm() >= self.min_standoff * (1.0 - 1e-12)
    }

    /// Nearest legal position: clamp to the box, then push out radially to
    /// the standoff sphere.
    pub fn project(&self, position: &Vector3<f64>, ipm: &Vector3<f64>) -> Vector3<f64> {
        let mut p = self.bounds.clamp(position);
        let d = p - ipm;
        let sep = d.norm();
        if sep < self.min_standoff {
            let dir = if sep > 1e-12 { d / sep } else { Vector3::z() };
            p = ipm + dir * self.min_standoff;
            let clamped = self.bounds.clamp(&p);
            if clamped != p {
                // The box cuts the sphere; slide along the box face back out
                // to the standoff distance.
                let q = clamped - ipm;
                let mut free = Vector3::zeros();
                for i in 0..3 {
                    if clamped[i] == p[i] {
                        free[i] = q[i];
                    }
                }
                let fixed = q - free;
                let need = self.min_standoff.powi(2) - fixed.norm_squared();
                if need > 0.0 && free.norm() > 1e-12 {
                    p = ipm + fixed + free.normalize() * need.sqrt();
                } else {
                    p = clamped;
                }
            }
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WrenchTarget {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
    pub force_weight: f64,
    pub torque_weight: f64,
}

impl WrenchTarget {
    pub fn validate(&self) -> Result<(), ActuationError> {
        if !(self.force_weight >= 0.0 && self.torque_weight >= 0.0) {
            return Err(ActuationError::InvalidInput(
                "wrench weights must be non-negative".into(),
            ));
        }
        if self.force_weight == 0.0 && self.torque_weight == 0.0 {
            return Err(ActuationError::InvalidInput(
                "wrench weights must not both be zero".into(),
            ));
        }
        if !self
            .force
            .iter()
            .chain(self.torque.iter())
            .all(|v| v.is_finite())
        {
            return Err(ActuationError::InvalidInput(
                "wrench target is not finite".into(),
            ));
        }
        Ok(())
    }

    /// Weighted norm of the difference between `w` and the target.
    pub fn residual(&self, w: &Wrench) -> f64 {
        (self.force_weight * (w.force - self.force).norm_squared()
            + self.torque_weight * (w.torque - self.torque).norm_squared())
        .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub residual: f64,
    pub iterations: usize,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Hold the EPM at this height and solve over the remaining variables.
    pub fixed_height: Option<f64>,
    /// Try further starting poses when the initial guess does not converge.
    pub multi_start: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: SOLVE_TOLERANCE,
            max_iterations: MAX_ITERATIONS,
            fixed_height: None,
            multi_start: true,
        }
    }
}

/// N, scales the EPM offset from above the tip against moment errors.
const OFFSET_WEIGHT: f64 = 0.01;

/// What the solver drives to zero.
#[derive(Debug, Clone, Copy)]
enum Objective<'a> {
    /// Weighted force and torque error at the IPM.
    Wrench(&'a WrenchTarget),
    /// Error in the magnetic moment about `base`, perpendicular to `tangent`,
    /// plus the horizontal offset of the EPM from the IPM. The offset term
    /// removes the freedom the two moment conditions leave open.
    BaseMoment {
        base: Vector3<f64>,
        tangent: Vector3<f64>,
        target: Vector3<f64>,
    },
}

struct Problem<'a> {
    objective: Objective<'a>,
    ipm: &'a DipoleSource,
    limits: &'a WorkspaceLimits,
    moment: f64,
    fixed_height: Option<f64>,
}

type Residual = SVector<f64, 6>;

impl Problem<'_> {
    fn residual(&self, pose: &EpmPose) -> Result<Residual, ActuationError> {
        let w = magnetics::wrench_on_ipm(&pose.dipole(self.moment), self.ipm)?;
        match self.objective {
            Objective::Wrench(target) => {
                let sf = target.force_weight.sqrt();
                let st = target.torque_weight.sqrt();
                let df = (w.force - target.force) * sf;
                let dt = (w.torque - target.torque) * st;
                Ok(Residual::new(df.x, df.y, df.z, dt.x, dt.y, dt.z))
            }
            Objective::BaseMoment {
                base,
                tangent,
                target,
            } => {
                let m = w.torque + (self.ipm.position - base).cross(&w.force) - target;
                let d = m - tangent * tangent.dot(&m);
                let o = (pose.position - self.ipm.position) * OFFSET_WEIGHT;
                Ok(Residual::new(d.x, d.y, d.z, o.x, o.y, 0.0))
            }
        }
    }

    fn legalize(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mut p = *p;
        if let Some(h) = self.fixed_height {
            p.z = h;
        }
        let q = self.limits.project(&p, &self.ipm.position);
        if let Some(h) = self.fixed_height {
            if q.z != h {
                // Standoff pushed the pose off the plane; move radially within it.
                let mut d = Vector3::new(p.x - self.ipm.position.x, p.y - self.ipm.position.y, 0.0);
                let dz = h - self.ipm.position.z;
                let r2 = self.limits.min_standoff.powi(2) - dz * dz;
                if r2 > 0.0 {
                    if d.norm() < 1e-12 {
                        d = Vector3::x();
                    }
                    let d = d.normalize() * r2.sqrt();
                    return self.limits.bounds.clamp(&Vector3::new(
                        self.ipm.position.x + d.x,
                        self.ipm.position.y + d.y,
                        h,
                    ));
                }
                return Vector3::new(p.x, p.y, h);
            }
        }
        q
    }

    /// Apply a local step: position offsets plus two tangent-plane angles.
    fn retract(&self, pose: &EpmPose, step: &[f64; 5]) -> EpmPose {
        let (e1, e2) = tangent_basis(&pose.moment_dir);
        let p = pose.position + Vector3::new(step[0], step[1], step[2]);
        let u = pose.moment_dir + e1 * step[3] + e2 * step[4];
        EpmPose::new(self.legalize(&p), u)
    }

    fn free(&self) -> [bool; 5] {
        [true, true, self.fixed_height.is_none(), true, true]
    }

    /// Damped Gauss-Newton from one starting pose.
    fn descend(
        &self,
        start: &EpmPose,
        opts: &SolveOptions,
    ) -> Result<(EpmPose, f64, usize), ActuationError> {
        let free = self.free();
        let mut pose = EpmPose::new(self.legalize(&start.position), start.moment_dir);
        let mut r = self.residual(&pose)?;
        let mut cost = r.norm();
        let mut lambda = INITIAL_DAMPING;
        let mut iters = 0;
        while iters < opts.max_iterations && cost > opts.tolerance {
            iters += 1;
            let scale = (pose.position - self.ipm.position).norm().max(1e-3);
            let mut jac = SMatrix::<f64, 6, 5>::zeros();
            for k in 0..5 {
                if !free[k] {
                    continue;
                }
                let h = if k < 3 { FD_STEP * scale } else { FD_STEP };
                let mut step = [0.0; 5];
                step[k] = h;
                let rp = self.residual(&self.unconstrained(&pose, &step))?;
                step[k] = -h;
                let rm = self.residual(&self.unconstrained(&pose, &step))?;
                jac.set_column(k, &((rp - rm) / (2.0 * h)));
            }
            let jtj = jac.transpose() * jac;
            let g = jac.transpose() * r;
            let mut improved = false;
            while lambda < 1e12 {
                let mut a = jtj;
                for k in 0..5 {
                    a[(k, k)] += lambda * (jtj[(k, k)].max(1e-12));
                    if !free[k] {
                        a[(k, k)] = 1.0;
                    }
                }
                let Some(delta) = a.lu().solve(&(-g)) else {
                    lambda *= 10.0;
                    continue;
                };
                let step = [delta[0], delta[1], delta[2], delta[3], delta[4]];
                let cand = self.retract(&pose, &step);
                let rc = self.residual(&cand)?;
                let cc = rc.norm();
                if cc < cost {
                    let moved = (cand.position - pose.position).norm()
                        + (cand.moment_dir - pose.moment_dir).norm();
                    pose = cand;
                    r = rc;
                    cost = cc;
                    lambda = (lambda * 0.3).max(1e-15);
                    improved = moved > 0.0;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        Ok((pose, cost, iters))
    }

    /// Step without legalization, for finite differences.
    fn unconstrained(&self, pose: &EpmPose, step: &[f64; 5]) -> EpmPose {
        let (e1, e2) = tangent_basis(&pose.moment_dir);
        EpmPose::new(
            pose.position + Vector3::new(step[0], step[1], step[2]),
            pose.moment_dir + e1 * step[3] + e2 * step[4],
        )
    }
}

fn tangent_basis(u: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if u.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = u.cross(&helper).normalize();
    (e1, u.cross(&e1))
}

fn pose_distance(a: &EpmPose, b: &EpmPose) -> f64 {
    (a.position - b.position).norm() + 0.05 * (a.moment_dir - b.moment_dir).norm()
}

/// Starting poses spread around the IPM, nearest to `guess` first.
fn start_poses(
    ipm: &Vector3<f64>,
    guess: &EpmPose,
    limits: &WorkspaceLimits,
    fixed_height: Option<f64>,
) -> Vec<EpmPose> {
    let mut dirs = Vec::new();
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            for k in -1i32..=1 {
                if (i, j, k) != (0, 0, 0) {
                    dirs.push(Vector3::new(i as f64, j as f64, k as f64).normalize());
                }
            }
        }
    }
    let moments = [
        Vector3::x(),
        -Vector3::x(),
        Vector3::y(),
        -Vector3::y(),
        Vector3::z(),
        -Vector3::z(),
    ];
    let s = limits.min_standoff;
    let radii = [1.15 * s, 1.6 * s, 2.4 * s, 3.6 * s];
    let mut out = Vec::new();
    for r in radii {
        for d in &dirs {
            let mut p = ipm + d * r;
            if let Some(h) = fixed_height {
                p.z = h;
            }
            if !limits.admits(&p, ipm) {
                continue;
            }
            for m in &moments {
                out.push(EpmPose::new(p, *m));
            }
        }
    }
    out.sort_by(|a, b| pose_distance(a, guess).total_cmp(&pose_distance(b, guess)));
    out
}

/// EPM pose whose wrench on `ipm` best matches `target`.
///
/// Damped least squares over the EPM position and a tangent-plane
/// parameterization of the moment direction, with central-difference
/// sensitivities. Every returned pose respects `limits`. When the initial
/// guess does not reach the tolerance, further starts are tried in order of
/// distance from the guess and the first feasible optimum is returned, so
/// among mirror-image solutions the one nearest the guess wins.
pub fn solve_epm_pose(
    target: &WrenchTarget,
    ipm: &DipoleSource,
    limits: &WorkspaceLimits,
    initial_guess: &EpmPose,
    epm_moment: f64,
) -> Result<(EpmPose, SolveReport), ActuationError> {
    solve_epm_pose_with(
        target,
        ipm,
        limits,
        initial_guess,
        epm_moment,
        &SolveOptions::default(),
    )
}

pub fn solve_epm_pose_with(
    target: &WrenchTarget,
    ipm: &DipoleSource,
    limits: &WorkspaceLimits,
    initial_guess: &EpmPose,
    epm_moment: f64,
    opts: &SolveOptions,
) -> Result<(EpmPose, SolveReport), ActuationError> {
    target.validate()?;
    limits.validate()?;
    initial_guess.validate()?;
    if !ipm.is_finite() {
        return Err(ActuationError::InvalidInput(
            "IPM dipole is not finite".into(),
        ));
    }
    if !(epm_moment > 0.0 && epm_moment.is_finite()) {
        return Err(ActuationError::InvalidInput(format!(
            "EPM moment must be positive, got {epm_moment}"
        )));
    }
    let problem = Problem {
        objective: Objective::Wrench(target),
        ipm,
        limits,
        moment: epm_moment,
        fixed_height: opts.fixed_height,
    };
    solve_problem(&problem, initial_guess, opts)
}

fn solve_problem(
    problem: &Problem<'_>,
    initial_guess: &EpmPose,
    opts: &SolveOptions,
) -> Result<(EpmPose, SolveReport), ActuationError> {
    let ipm = problem.ipm;
    let limits = problem.limits;
    let (mut best, mut best_cost, mut total) = problem.descend(initial_guess, opts)?;
    if best_cost <= opts.tolerance || !opts.multi_start {
        return Ok((
            best,
            SolveReport {
                residual: best_cost,
                iterations: total,
                feasible: best_cost <= opts.tolerance,
            },
        ));
    }
    for start in start_poses(&ipm.position, initial_guess, limits, opts.fixed_height) {
        let (pose, cost, iters) = problem.descend(&start, opts)?;
        total += iters;
        if cost < best_cost {
            best = pose;
            best_cost = cost;
        }
        if cost <= opts.tolerance {
            break;
        }
    }
    Ok((
        best,
        SolveReport {
            residual: best_cost,
            iterations: total,
            feasible: best_cost <= opts.tolerance,
        },
    ))
}

/// Wrench target that bends the free segment so its tip faces `heading`.
///
/// The torque is the restoration moment at the deflection between the base
/// tangent and the heading, about the normal of the plane they span. The
/// force target is zero with a low weight.
pub fn heading_to_wrench(
    state: &VineState,
    params: &VineParams,
    desired_heading: &Vector3<f64>,
) -> Result<WrenchTarget, ActuationError> {
    let n = desired_heading.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(ActuationError::InvalidInput(
            "desired heading must be a nonzero vector".into(),
        ));
    }
    let h = desired_heading / n;
    let t = state.base.tangent;
    let theta = t.dot(&h).clamp(-1.0, 1.0).acos();
    if theta > PI / 2.0 + 1e-12 {
        return Err(ActuationError::HeadingOutOfRange(theta));
    }
    let axis = t.cross(&h);
    let torque = if axis.norm() > 1e-12 {
        axis.normalize() * restoration_moment(theta, state.pressure, params)
    } else {
        Vector3::zeros()
    };
    Ok(WrenchTarget {
        force: Vector3::zeros(),
        torque,
        force_weight: 1e-3,
        torque_weight: 1.0,
    })
}

/// EPM poses on a horizontal circle of radius `length` about the base,
/// `height` above it. Angle zero lies along the base tangent and positive
/// angles turn toward the base normal. The moment is horizontal and points
/// along the direction of travel. Both endpoints are included.
pub fn circular_epm_trajectory(
    base: &BasePose,
    length: f64,
    height: f64,
    angle_range: (f64, f64),
    step: f64,
) -> Result<Vec<EpmPose>, ActuationError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(ActuationError::InvalidInput(format!(
            "trajectory step must be positive, got {step}"
        )));
    }
    let (a0, a1) = angle_range;
    if !(a0.is_finite() && a1.is_finite()) {
        return Err(ActuationError::InvalidInput(
            "angle range must be finite".into(),
        ));
    }
    let (t, n, _) = base.frame();
    let span = a1 - a0;
    let sign = if span < 0.0 { -1.0 } else { 1.0 };
    let count = (span.abs() / step + 1e-9).floor() as usize;
    let pose_at = |phi: f64| {
        let radial = phi.cos() * t + phi.sin() * n;
        let along = (-phi.sin() * t + phi.cos() * n) * sign;
        EpmPose::new(
            base.position + radial * length + Vector3::z() * height,
            along,
        )
    };
    let mut out: Vec<EpmPose> = (0..=count)
        .map(|k| pose_at(a0 + sign * step * k as f64))
        .collect();
    if (a0 + sign * step * count as f64 - a1).abs() > 1e-12 {
        out.push(pose_at(a1));
    }
    Ok(out)
}

/// Vertical force at the tip that the bent body carries on its own.
///
/// Positive when the segment droops and its restoration moment pushes the
/// tip up.
pub fn elastic_support(state: &VineState, params: &VineParams) -> f64 {
    if state.deflection == 0.0 {
        return 0.0;
    }
    let arc = tip_pose(state);
    let dir = state.base.bend_direction(state.bend_azimuth);
    let axis = state.base.tangent.cross(&dir);
    let restoring = -axis * restoration_moment(state.deflection, state.pressure, params);
    let lever = arc.tip_position - state.base.position;
    let arm = lever.cross(&Vector3::z());
    if arm.norm_squared() < 1e-18 {
        return 0.0;
    }
    restoring.dot(&arm) / arm.norm_squared()
}

/// EPM pose at `epm_height` that holds the given configuration in
/// equilibrium with the tip weight.
///
/// The magnetic moment about the segment base, perpendicular to the base
/// tangent, must supply the restoration moment plus the moment of the tip
/// weight. These two conditions leave two of the four pose variables free;
/// the solver settles on the solution nearest the initial guess, which by
/// default sits directly above the tip with the moment antiparallel to it.
pub fn suspension_setpoint(
    state: &VineState,
    params: &VineParams,
    epm_height: f64,
    epm_moment: f64,
    limits: &WorkspaceLimits,
    initial_guess: Option<&EpmPose>,
) -> Result<(EpmPose, SolveReport), ActuationError> {
    state.validate()?;
    params.validate()?;
    limits.validate()?;
    if !(epm_moment > 0.0 && epm_moment.is_finite()) {
        return Err(ActuationError::InvalidInput(format!(
            "EPM moment must be positive, got {epm_moment}"
        )));
    }
    let arc = tip_pose(state);
    let ipm = mechanics::ipm_dipole(&arc, params);
    if epm_height - ipm.position.z < limits.min_standoff {
        return Err(ActuationError::InvalidInput(format!(
            "EPM height {epm_height} is closer than the minimum standoff to the tip"
        )));
    }
    let weight = Vector3::new(0.0, 0.0, -params.tip_mass * GRAVITY);
    let lever = arc.tip_position - state.base.position;
    let dir = state.base.bend_direction(state.bend_azimuth);
    let axis = state.base.tangent.cross(&dir);
    let target =
        axis * restoration_moment(state.deflection, state.pressure, params) - lever.cross(&weight);
    let guess = match initial_guess {
        Some(g) => *g,
        None => {
            let u = arc.tip_tangent;
            let horizontal = Vector3::new(u.x, u.y, 0.0);
            let m = if horizontal.norm() > 1e-9 {
                -horizontal
            } else {
                Vector3::x()
            };
            EpmPose::new(Vector3::new(ipm.position.x, ipm.position.y, epm_height), m)
        }
    };
    guess.validate()?;
    let opts = SolveOptions {
        fixed_height: Some(epm_height),
        ..SolveOptions::default()
    };
    let problem = Problem {
        objective: Objective::BaseMoment {
            base: state.base.position,
            tangent: state.base.tangent,
            target,
        },
        ipm: &ipm,
        limits,
        moment: epm_moment,
        fixed_height: opts.fixed_height,
    };
    solve_problem(&problem, &guess, &opts)
}

/// Integrate one joystick sample into an EPM pose.
///
/// `input[0..3]` is the Cartesian velocity and `input[3..6]` the angular
/// velocity of the moment direction, both normalized to `[-1, 1]` and scaled
/// by the workspace speed limits. The result is clamped to the box and kept
/// at least `min_standoff` from `ipm`.
pub fn teleop_map(
    input: &[f64; 6],
    current: &EpmPose,
    limits: &WorkspaceLimits,
    dt: f64,
    ipm: &Vector3<f64>,
) -> Result<EpmPose, ActuationError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ActuationError::InvalidInput(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if input.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(ActuationError::InvalidInput(
            "teleop input must lie in [-1, 1]".into(),
        ));
    }
    if input.iter().all(|v| *v == 0.0) {
        return Ok(*current);
    }
    let v = Vector3::new(input[0], input[1], input[2]) * limits.max_speed;
    let w = Vector3::new(input[3], input[4], input[5]) * limits.max_angular_speed;
    let p = limits.project(&(current.position + v * dt), ipm);
    let mut u = current.moment_dir;
    if w.norm() > 0.0 {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(w), w.norm() * dt);
        u = rot * u;
    }
    Ok(EpmPose::new(p, u))
}
