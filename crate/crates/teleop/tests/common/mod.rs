//! Joystick pilot for the maze: reads telemetry, answers with twists.

#![allow(dead_code)]

use magvine::environment::Polyline;
use magvine::scenario::{load_scenario, Scenario};
use magvine_teleop::protocol::{CommandPayload, ScenarioInfo, Telemetry};
use nalgebra::Vector3;

pub fn fixture(name: &str) -> Scenario {
    load_scenario(format!(
        "{}/../../fixtures/{name}",
        env!("CARGO_MANIFEST_DIR")
    ))
    .unwrap()
}

pub struct Pilot {
    path: Polyline,
    height: f64,
    max_speed: f64,
    max_angular_speed: f64,
    pub grow_rate: f64,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

impl Pilot {
    pub fn new(info: &ScenarioInfo) -> Self {
        let lumen = &info.environment.lumens[0];
        Self {
            path: lumen.path(),
            height: lumen.height + 0.12,
            max_speed: info.limits.max_speed,
            max_angular_speed: info.limits.max_angular_speed,
            grow_rate: 0.003,
        }
    }

    pub fn command(&self, t: &Telemetry) -> CommandPayload {
        let tip = v3(t.tip_measured.position);
        let (s, _) = self.path.nearest_horizontal(&tip);
        let aim = self.path.point_at(s + 0.03);
        let heading = Vector3::new(aim.x - tip.x, aim.y - tip.y, 0.0);
        let heading = if heading.norm() > 1e-9 {
            heading.normalize()
        } else {
            self.path.tangent_at(s)
        };
        let mut twist = [0.0; 6];
        if let Some(epm) = &t.epm {
            let want = Vector3::new(tip.x, tip.y, self.height);
            // Full speed beyond half a second of travel.
            let v = (want - v3(epm.position)) / (0.5 * self.max_speed);
            let m = v3(epm.direction);
            let target = -heading;
            let axis = m.cross(&target);
            let angle = axis.norm().atan2(m.dot(&target));
            let w = if axis.norm() > 1e-9 {
                axis.normalize() * angle / (0.5 * self.max_angular_speed)
            } else if angle > 1.0 {
                Vector3::z() / (0.5 * self.max_angular_speed)
            } else {
                Vector3::zeros()
            };
            for k in 0..3 {
                twist[k] = v[k].clamp(-1.0, 1.0);
                twist[k + 3] = w[k].clamp(-1.0, 1.0);
            }
        }
        CommandPayload {
            epm_twist: Some(twist),
            grow_rate: Some(self.grow_rate),
            pressure_setpoint: None,
        }
    }
}
