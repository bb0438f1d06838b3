//! Table-top environments: tubular lumens with horizontal centerlines,
//! vertical walls, and labeled targets.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clearance at or below which the tip counts as touching a wall, m.
pub const CONTACT_TOLERANCE: f64 = 1.0e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvironmentError {
    #[error("{0}")]
    Invalid(String),
}

/// Open-ended tube whose centerline runs horizontally at `height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lumen {
    #[serde(default)]
    pub label: String,
    /// Centerline vertices in the horizontal plane, m.
    pub centerline: Vec<[f64; 2]>,
    /// m
    pub inner_diameter: f64,
    /// Height of the centerline, m.
    #[serde(default)]
    pub height: f64,
}

/// Vertical wall standing on a polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wall {
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub label: String,
    pub position: [f64; 3],
    /// Reached when the tip center is within this distance, m.
    #[serde(default = "default_target_radius")]
    pub radius: f64,
}

fn default_target_radius() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    #[serde(default)]
    pub lumens: Vec<Lumen>,
    #[serde(default)]
    pub obstacles: Vec<Wall>,
    #[serde(default)]
    pub targets: Vec<Target>,
    /// A plate over the workspace keeps the vine in the horizontal plane and
    /// carries the tip weight.
    #[serde(default)]
    pub constraining_plate: bool,
}

/// Polyline with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vector3<f64>>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, EnvironmentError> {
        if points.len() < 2 {
            return Err(EnvironmentError::Invalid(
                "polyline needs at least two points".into(),
            ));
        }
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = (w[1] - w[0]).norm();
            if !(d > 0.0 && d.is_finite()) {
                return Err(EnvironmentError::Invalid(
                    "polyline has a repeated or non-finite vertex".into(),
                ));
            }
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Ok(Self { points, cumulative })
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    fn segment_index(&self, s: f64) -> usize {
        let n = self.points.len() - 1;
        match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Point at arc length `s`, clamped to the polyline.
    pub fn point_at(&self, s: f64) -> Vector3<f64> {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_index(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        a + (b - a) * ((s - self.cumulative[i]) / seg)
    }

    /// Unit tangent of the segment containing `s`; at a vertex, the outgoing one.
    pub fn tangent_at(&self, s: f64) -> Vector3<f64> {
        let i = self.segment_index(s.clamp(0.0, self.length()));
        (self.points[i + 1] - self.points[i]).normalize()
    }

    /// Nearest point in the horizontal projection: `(s, horizontal distance)`.
    pub fn nearest_horizontal(&self, p: &Vector3<f64>) -> (f64, f64) {
        let q = Vector2::new(p.x, p.y);
        let mut best = (0.0, f64::INFINITY);
        for i in 0..self.points.len() - 1 {
            let a = self.points[i].xy();
            let b = self.points[i + 1].xy();
            let ab = b - a;
            let len2 = ab.norm_squared();
            let u = if len2 > 0.0 {
                ((q - a).dot(&ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = (a + ab * u - q).norm();
            if d < best.1 {
                best = (
                    self.cumulative[i] + u * (self.cumulative[i + 1] - self.cumulative[i]),
                    d,
                );
            }
        }
        best
    }
}

fn to_points(raw: &[[f64; 2]], z: f64) -> Vec<Vector3<f64>> {
    raw.iter().map(|p| Vector3::new(p[0], p[1], z)).collect()
}

fn segments_cross(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>, d: Vector2<f64>) -> bool {
    let orient = |p: Vector2<f64>, q: Vector2<f64>, r: Vector2<f64>| (q - p).perp(&(r - p));
    let (o1, o2, o3, o4) = (
        orient(a, b, c),
        orient(a, b, d),
        orient(c, d, a),
        orient(c, d, b),
    );
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

fn check_simple(raw: &[[f64; 2]], what: &str) -> Result<(), EnvironmentError> {
    if raw.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EnvironmentError::Invalid(format!(
            "{what} has non-finite coordinates"
        )));
    }
    Polyline::new(to_points(raw, 0.0))
        .map_err(|e| EnvironmentError::Invalid(format!("{what}: {e}")))?;
    let v: Vec<Vector2<f64>> = raw.iter().map(|p| Vector2::new(p[0], p[1])).collect();
    for i in 0..v.len() - 1 {
        for j in i + 2..v.len() - 1 {
            if segments_cross(v[i], v[i + 1], v[j], v[j + 1]) {
                return Err(EnvironmentError::Invalid(format!(
                    "{what} intersects itself (segments {i} and {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Clearance of the tip capsule against the environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clearance {
    /// Signed distance from the capsule surface to the nearest wall;
    /// infinite when nothing bounds the tip.
    pub gap: f64,
    /// Unit direction from the tip toward the nearest wall.
    pub outward: Vector3<f64>,
    /// The environment has lumens but the tip lies beyond all of them.
    pub out_of_bounds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactResult {
    pub position: Vector3<f64>,
    pub contact: bool,
    pub wall_gap: f64,
    pub out_of_bounds: bool,
}

impl Lumen {
    pub fn radius(&self) -> f64 {
        0.5 * self.inner_diameter
    }

    pub fn path(&self) -> Polyline {
        Polyline::new(to_points(&self.centerline, self.height)).expect("validated lumen")
    }

    /// Cross-section offset of `p` from the centerline, or `None` beyond
    /// either open end.
    fn offset(&self, path: &Polyline, p: &Vector3<f64>) -> Option<Vector3<f64>> {
        let (s, _) = path.nearest_horizontal(p);
        let c = path.point_at(s);
        let t = path.tangent_at(s);
        let d = p - c;
        let along = d.x * t.x + d.y * t.y;
        if (s <= 0.0 && along < -1e-12) || (s >= path.length() && along > 1e-12) {
            return None;
        }
        Some(Vector3::new(d.x - along * t.x, d.y - along * t.y, d.z))
    }
}

impl Environment {
    pub fn validate(&self, vine_diameter: f64) -> Result<(), EnvironmentError> {
        for (i, l) in self.lumens.iter().enumerate() {
            check_simple(&l.centerline, &format!("lumen {i} centerline"))?;
            if !(l.inner_diameter > vine_diameter) {
                return Err(EnvironmentError::Invalid(format!(
                    "lumen {i} inner diameter {} must exceed the vine diameter {vine_diameter}",
                    l.inner_diameter
                )));
            }
            if !l.height.is_finite() {
                return Err(EnvironmentError::Invalid(format!(
                    "lumen {i} height is not finite"
                )));
            }
        }
        for (i, w) in self.obstacles.iter().enumerate() {
            check_simple(&w.points, &format!("obstacle {i}"))?;
        }
        for t in &self.targets {
            if t.position.iter().any(|v| !v.is_finite()) || !(t.radius > 0.0) {
                return Err(EnvironmentError::Invalid(format!(
                    "target '{}' is malformed",
                    t.label
                )));
            }
        }
        Ok(())
    }

    pub fn is_free_space(&self) -> bool {
        self.lumens.is_empty() && self.obstacles.is_empty()
    }

    /// Lumen containing `p` with the smallest cross-section offset.
    pub fn lumen_at(&self, p: &Vector3<f64>) -> Option<(usize, Vector3<f64>)> {
        let mut best: Option<(usize, Vector3<f64>)> = None;
        for (i, l) in self.lumens.iter().enumerate() {
            if let Some(off) = l.offset(&l.path(), p) {
                if best.is_none_or(|(_, b)| off.norm() < b.norm()) {
                    best = Some((i, off));
                }
            }
        }
        best
    }

    pub fn clearance(&self, p: &Vector3<f64>, tip_radius: f64) -> Clearance {
        let mut out = Clearance {
            gap: f64::INFINITY,
            outward: Vector3::zeros(),
            out_of_bounds: false,
        };
        if !self.lumens.is_empty() {
            match self.lumen_at(p) {
                Some((i, off)) => {
                    let r = off.norm();
                    out.gap = self.lumens[i].radius() - r - tip_radius;
                    out.outward = if r > 1e-12 { off / r } else { -Vector3::z() };
                }
                None => out.out_of_bounds = true,
            }
        }
        for w in &self.obstacles {
            let path = Polyline::new(to_points(&w.points, p.z)).expect("validated wall");
            let (s, d) = path.nearest_horizontal(p);
            let gap = d - tip_radius;
            if gap < out.gap {
                let q = path.point_at(s);
                let toward = Vector3::new(q.x - p.x, q.y - p.y, 0.0);
                out.gap = gap;
                out.outward = if toward.norm() > 1e-12 {
                    toward.normalize()
                } else {
                    Vector3::zeros()
                };
            }
        }
        out
    }

    pub fn reached_target(&self, p: &Vector3<f64>) -> Option<&Target> {
        self.targets
            .iter()
            .find(|t| (Vector3::from(t.position) - p).norm() <= t.radius)
    }
}

/// Project the tip capsule back inside the environment.
///
/// Inside a lumen the center moves radially in the cross-section; against a
/// wall it moves horizontally away from it. A tip with no bounding geometry
/// keeps its position and reports an infinite gap.
pub fn contact_project(
    tip_position: &Vector3<f64>,
    tip_radius: f64,
    env: &Environment,
) -> ContactResult {
    let c = env.clearance(tip_position, tip_radius);
    let mut position = *tip_position;
    let mut gap = c.gap;
    if gap < 0.0 {
        position -= c.outward * (-gap);
        gap = 0.0;
    }
    ContactResult {
        position,
        contact: gap <= CONTACT_TOLERANCE,
        wall_gap: gap,
        out_of_bounds: c.out_of_bounds,
    }
}
