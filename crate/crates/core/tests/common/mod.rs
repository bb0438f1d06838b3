//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the library's field, gradient or equilibrium
//! code; the oracles are written from the physics directly so the tests
//! compare two separate implementations.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::OnceLock;

use magvine::actuation::WorkspaceLimits;
use magvine::experiments::{calibrate, BendConfig, Calibration, CalibrationTargets};
use magvine::scenario::{load_scenario, Scenario};
use nalgebra::Vector3;

pub const MU0: f64 = 4.0e-7 * PI;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(format!("{name}.scn"))
}

pub fn fixture(name: &str) -> Scenario {
    load_scenario(fixture_path(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

/// The default fit, computed once per test binary.
pub fn calibration() -> &'static Calibration {
    static CAL: OnceLock<Calibration> = OnceLock::new();
    CAL.get_or_init(|| {
        let sc = fixture("freespace");
        calibrate(
            &CalibrationTargets::default(),
            &sc.vine.params,
            sc.epm.spec.moment_magnitude(),
            &WorkspaceLimits::default(),
            &BendConfig::default(),
        )
        .expect("default calibration")
    })
}

pub fn calibrated(name: &str) -> Scenario {
    let mut sc = fixture(name);
    calibration().apply(&mut sc);
    sc
}

/// Dipole field written out component-wise:
/// `mu0/4pi * (3 r (m.r) / |r|^5 - m / |r|^3)`.
pub fn field(source: &Vector3<f64>, m: &Vector3<f64>, at: &Vector3<f64>) -> Vector3<f64> {
    let r = at - source;
    let d2 = r.x * r.x + r.y * r.y + r.z * r.z;
    let d = d2.sqrt();
    let mr = m.x * r.x + m.y * r.y + m.z * r.z;
    let c = MU0 / (4.0 * PI);
    let a = 3.0 * mr / (d2 * d2 * d);
    let b = 1.0 / (d2 * d);
    Vector3::new(
        c * (a * r.x - b * m.x),
        c * (a * r.y - b * m.y),
        c * (a * r.z - b * m.z),
    )
}

/// Central differences of the field, column `j` holding `dB/dx_j`.
pub fn gradient_fd(
    source: &Vector3<f64>,
    m: &Vector3<f64>,
    at: &Vector3<f64>,
    h: f64,
) -> nalgebra::Matrix3<f64> {
    let mut g = nalgebra::Matrix3::zeros();
    for j in 0..3 {
        let e = Vector3::ith(j, h);
        let col = (field(source, m, &(at + e)) - field(source, m, &(at - e))) / (2.0 * h);
        g.set_column(j, &col);
    }
    g
}

/// Force on a dipole `m_i` at `at` as the gradient of `m_i . B`, by central
/// differences of the energy.
pub fn force_fd(
    source: &Vector3<f64>,
    m_e: &Vector3<f64>,
    at: &Vector3<f64>,
    m_i: &Vector3<f64>,
) -> Vector3<f64> {
    let h = 1e-6;
    Vector3::from_fn(|j, _| {
        let e = Vector3::ith(j, h);
        (m_i.dot(&field(source, m_e, &(at + e))) - m_i.dot(&field(source, m_e, &(at - e))))
            / (2.0 * h)
    })
}

/// Planar bending problem for the grid oracle. The segment leaves the
/// origin along `tangent` and bends toward `normal` by a signed angle.
#[derive(Debug, Clone, Copy)]
pub struct BendProblem {
    pub tangent: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub length: f64,
    pub pressure: f64,
    pub diameter: f64,
    pub cr: f64,
    pub ipm_moment: f64,
    pub epm_position: Vector3<f64>,
    pub epm_moment: Vector3<f64>,
}

impl BendProblem {
    /// Applied minus restoring moment about `tangent x normal`, for a
    /// signed deflection.
    pub fn residual(&self, theta: f64) -> f64 {
        let (along, across) = if theta == 0.0 {
            (self.length, 0.0)
        } else {
            let r = self.length / theta;
            (r * theta.sin(), r * (1.0 - theta.cos()))
        };
        let tip = self.tangent * along + self.normal * across;
        let dir = self.tangent * theta.cos() + self.normal * theta.sin();
        let m_i = dir * self.ipm_moment;
        let b = field(&self.epm_position, &self.epm_moment, &tip);
        let torque = m_i.cross(&b);
        let force = force_fd(&self.epm_position, &self.epm_moment, &tip, &m_i);
        let axis = self.tangent.cross(&self.normal);
        let applied = (torque + tip.cross(&force)).dot(&axis);
        applied - self.cr * self.pressure * self.diameter.powi(3) * theta
    }
}

/// Result of the grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridRoot {
    /// Signed deflection, to within one grid step.
    Root(f64),
    /// No crossing before the scan limit.
    Saturated(f64),
}

/// Smallest stable root of the residual reached from the straight pose, by
/// stepping `step` at a time toward the side the residual pushes and
/// interpolating linearly inside the first bracket.
pub fn grid_root(p: &BendProblem, limit: f64, step: f64) -> GridRoot {
    let g0 = p.residual(0.0);
    if g0 == 0.0 {
        return GridRoot::Root(0.0);
    }
    let sign = g0.signum();
    let (mut a, mut ga) = (0.0, g0);
    let n = (limit / step).floor() as usize;
    for k in 1..=n {
        let b = sign * step * k as f64;
        let gb = p.residual(b);
        if gb.signum() != sign || gb == 0.0 {
            return GridRoot::Root(a + (b - a) * ga / (ga - gb));
        }
        a = b;
        ga = gb;
    }
    GridRoot::Saturated(sign * limit)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Largest entry error relative to the largest entry.
pub fn max_rel(a: &nalgebra::Matrix3<f64>, b: &nalgebra::Matrix3<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

pub fn unit(v: Vector3<f64>) -> Vector3<f64> {
    v / v.norm()
}

pub fn random_unit<R: rand::Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}
