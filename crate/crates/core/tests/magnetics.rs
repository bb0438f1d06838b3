mod common;

use common::{field, gradient_fd, loglog_slope, max_rel, random_unit, unit};
use magvine::magnetics::{
    dipole_field, dipole_gradient, field_sample, magnetic_force, magnetic_torque, wrench_on_ipm,
    DipoleSource,
};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    [-range..range, -range..range, -range..range].prop_map(|[x, y, z]| Vector3::new(x, y, z))
}

fn direction() -> impl Strategy<Value = Vector3<f64>> {
    vec3(1.0)
        .prop_filter("nonzero", |v| v.norm() > 0.1)
        .prop_map(unit)
}

/// Source, evaluation point at least 3 cm away, and both moments.
fn pair() -> impl Strategy<Value = (DipoleSource, DipoleSource)> {
    (
        vec3(0.3),
        direction(),
        0.03..0.5f64,
        direction(),
        0.1..1000.0f64,
        0.1..5.0f64,
    )
        .prop_map(|(p, dir, d, mdir, me, mi)| {
            let epm = DipoleSource::new(p, mdir * me);
            let ipm = DipoleSource::new(p + dir * d, random_like(&dir) * mi);
            (epm, ipm)
        })
}

/// A second direction derived from the first so proptest shrinks one value.
fn random_like(v: &Vector3<f64>) -> Vector3<f64> {
    unit(Vector3::new(v.y - 0.3, v.z + 0.7, v.x - 0.2))
}

#[test]
fn gradient_matches_finite_differences_on_1000_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let src = Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        );
        let m = random_unit(&mut rng) * rng.random_range(0.1..1000.0);
        let at = src + random_unit(&mut rng) * rng.random_range(0.03..0.5);
        let g = dipole_gradient(&DipoleSource::new(src, m), &at).unwrap();
        worst = worst.max(max_rel(&gradient_fd(&src, &m, &at, 1e-6), &g));
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn closed_forms() {
    let unit_src = DipoleSource::new(Vector3::zeros(), Vector3::z());
    let b = dipole_field(&unit_src, &Vector3::new(0.0, 0.0, 0.1)).unwrap();
    assert!((b.z / 2e-4 - 1.0).abs() < 1e-9, "{b:?}");
    assert!(b.x.abs() < 1e-20 && b.y.abs() < 1e-20);

    let w = wrench_on_ipm(
        &unit_src,
        &DipoleSource::new(Vector3::new(0.0, 0.0, 0.1), Vector3::z()),
    )
    .unwrap();
    assert!((w.force.z / -6e-3 - 1.0).abs() < 1e-9, "{w:?}");
    assert_eq!(w.torque, Vector3::zeros());

    let epm = DipoleSource::new(Vector3::new(0.0, 0.0, 0.1), Vector3::z() * 952.9);
    let ipm = DipoleSource::new(Vector3::zeros(), Vector3::z() * 2.462);
    let w = wrench_on_ipm(&epm, &ipm).unwrap();
    assert!((w.force.z / 14.1 - 1.0).abs() < 0.01, "{w:?}");
    assert!(w.force.z > 0.0, "the IPM is pulled up toward the EPM");

    let tau = magnetic_torque(&(Vector3::x() * 2.462), &(Vector3::z() * 0.0465));
    assert!((tau.norm() - 0.1145).abs() < 5e-5);
    assert!(unit(tau).dot(&-Vector3::y()) > 1.0 - 1e-12);

    // The 0.0465 T above is the on-axis field of the EPM at 0.16 m.
    let b = dipole_field(
        &DipoleSource::new(Vector3::zeros(), Vector3::z() * 952.9),
        &Vector3::new(0.0, 0.0, 0.16),
    )
    .unwrap();
    assert!((b.z - 0.0465).abs() < 5e-5, "{b:?}");
}

#[test]
fn decay_slopes_over_ten_to_thirty_centimetres() {
    let epm_dir = unit(Vector3::new(0.3, -0.2, 1.0));
    let axis = unit(Vector3::new(1.0, 0.4, 0.5));
    let m_i = unit(Vector3::new(-0.2, 1.0, 0.1)) * 2.462;
    let ds: Vec<f64> = (0..=40).map(|k| 0.1 + 0.005 * k as f64).collect();
    let (mut taus, mut forces) = (Vec::new(), Vec::new());
    for d in &ds {
        let w = wrench_on_ipm(
            &DipoleSource::new(Vector3::zeros(), epm_dir * 952.9),
            &DipoleSource::new(axis * *d, m_i),
        )
        .unwrap();
        taus.push(w.torque.norm());
        forces.push(w.force.norm());
    }
    let st = loglog_slope(&ds, &taus);
    let sf = loglog_slope(&ds, &forces);
    assert!((st + 3.0).abs() < 1e-3, "torque slope {st}");
    assert!((sf + 4.0).abs() < 1e-3, "force slope {sf}");
}

#[test]
fn zero_ipm_moment_feels_nothing() {
    let epm = DipoleSource::new(Vector3::zeros(), Vector3::z() * 952.9);
    let w = wrench_on_ipm(
        &epm,
        &DipoleSource::new(Vector3::new(0.1, 0.0, 0.05), Vector3::zeros()),
    )
    .unwrap();
    assert_eq!(w.force, Vector3::zeros());
    assert_eq!(w.torque, Vector3::zeros());
}

#[test]
fn coincident_dipoles_are_singular() {
    let a = DipoleSource::new(Vector3::new(0.1, 0.2, 0.3), Vector3::z());
    assert!(dipole_field(&a, &a.position).is_err());
    assert!(wrench_on_ipm(&a, &a).is_err());
}

proptest! {
    #[test]
    fn field_matches_independent_formula((epm, ipm) in pair()) {
        let b = dipole_field(&epm, &ipm.position).unwrap();
        let o = field(&epm.position, &epm.moment, &ipm.position);
        prop_assert!((b - o).norm() <= 1e-12 * o.norm().max(1e-30), "{b:?} vs {o:?}");
    }

    #[test]
    fn gradient_is_symmetric_and_traceless((epm, ipm) in pair()) {
        let g = dipole_gradient(&epm, &ipm.position).unwrap();
        let scale = g.norm();
        prop_assert!((g - g.transpose()).amax() <= 1e-12 * scale);
        prop_assert!(g.trace().abs() <= 1e-12 * scale);
    }

    #[test]
    fn torque_is_perpendicular_to_the_ipm((epm, ipm) in pair()) {
        let w = wrench_on_ipm(&epm, &ipm).unwrap();
        prop_assert!(w.torque.dot(&ipm.moment).abs() <= 1e-12 * w.torque.norm() * ipm.moment.norm());
    }

    #[test]
    fn wrench_is_the_composition_of_its_parts((epm, ipm) in pair()) {
        let s = field_sample(&epm, &ipm.position).unwrap();
        let w = wrench_on_ipm(&epm, &ipm).unwrap();
        prop_assert_eq!(w.torque, magnetic_torque(&ipm.moment, &s.b));
        prop_assert_eq!(w.force, magnetic_force(&s.gradient, &ipm.moment));
    }

    #[test]
    fn force_is_the_energy_gradient((epm, ipm) in pair()) {
        let w = wrench_on_ipm(&epm, &ipm).unwrap();
        let fd = common::force_fd(&epm.position, &epm.moment, &ipm.position, &ipm.moment);
        prop_assert!((w.force - fd).norm() <= 1e-6 * fd.norm(), "{:?} vs {fd:?}", w.force);
    }

    #[test]
    fn newton_third_law((epm, ipm) in pair()) {
        let on_ipm = wrench_on_ipm(&epm, &ipm).unwrap().force;
        let on_epm = wrench_on_ipm(&ipm, &epm).unwrap().force;
        prop_assert!((on_ipm + on_epm).norm() <= 1e-9 * on_ipm.norm());
    }

    #[test]
    fn rotation_equivariance((epm, ipm) in pair(), axis in direction(), angle in -3.0..3.0f64) {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let w = wrench_on_ipm(&epm, &ipm).unwrap();
        // Rotate about the EPM so the displacement rotates with the moments.
        let turn = |d: &DipoleSource| DipoleSource::new(epm.position + rot * (d.position - epm.position), rot * d.moment);
        let wr = wrench_on_ipm(&turn(&epm), &turn(&ipm)).unwrap();
        prop_assert!((wr.force - rot * w.force).norm() <= 1e-9 * w.force.norm());
        prop_assert!((wr.torque - rot * w.torque).norm() <= 1e-9 * w.torque.norm().max(1e-300));
    }

    #[test]
    fn doubling_separation_divides_torque_by_8_and_force_by_16((epm, ipm) in pair()) {
        let far = DipoleSource::new(epm.position + 2.0 * (ipm.position - epm.position), ipm.moment);
        let near = wrench_on_ipm(&epm, &ipm).unwrap();
        let w = wrench_on_ipm(&epm, &far).unwrap();
        prop_assert!((w.torque.norm() * 8.0 / near.torque.norm() - 1.0).abs() < 1e-9);
        prop_assert!((w.force.norm() * 16.0 / near.force.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn torque_is_bilinear(m in vec3(3.0), b in vec3(0.1), k in -10.0..10.0f64) {
        let t = magnetic_torque(&m, &b);
        prop_assert!((magnetic_torque(&m, &(b * k)) - t * k).norm() <= 1e-12 * (t.norm() * k.abs()).max(1e-300));
        prop_assert!(magnetic_torque(&m, &(m * 0.01)).norm() <= 1e-15 * m.norm_squared());
    }

    #[test]
    fn coaxial_pairs_feel_only_axial_force(d in 0.03..0.5f64, axis in direction(), me in 1.0..1000.0f64) {
        let w = wrench_on_ipm(
            &DipoleSource::new(Vector3::zeros(), axis * me),
            &DipoleSource::new(axis * d, axis * 2.462),
        ).unwrap();
        prop_assert!(w.torque.norm() <= 1e-12 * w.force.norm());
        prop_assert!(w.force.cross(&axis).norm() <= 1e-9 * w.force.norm());
        prop_assert!(w.force.dot(&axis) < 0.0, "aligned coaxial dipoles attract");
    }
}
