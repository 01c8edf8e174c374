use approx::assert_relative_eq;
use handground::kinematics::*;
use proptest::prelude::*;

fn geometry(r_a: f64, r_b: f64) -> FingerGeometry {
    FingerGeometry { r_a, r_b, ..FingerGeometry::default() }
}

fn bent_arc() -> impl Strategy<Value = ArcState> {
    (1e-4..std::f64::consts::PI, 10.0..400.0f64).prop_map(|(theta, r)| ArcState::from_radius(theta, r).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn frame_with_zero_offset_reaches_fingertip(arc in bent_arc()) {
        let tip = fingertip_position(&arc).unwrap();
        for side in [TendonSide::A, TendonSide::B] {
            let t = tendon_frame(&arc, side, &geometry(0.0, 0.0)).unwrap();
            prop_assert!((t[(0, 3)] - tip.x).abs() <= 1e-9 * (1.0 + tip.x.abs()));
            prop_assert!((t[(2, 3)] - tip.y).abs() <= 1e-9 * (1.0 + tip.y.abs()));
            prop_assert_eq!(t[(1, 3)], 0.0);
        }
    }

    #[test]
    fn frame_rotation_is_proper(arc in bent_arc(), r_a in 0.5..10.0f64, frac in 0.0..0.95f64) {
        let g = geometry(r_a, frac * arc.r);
        for side in [TendonSide::A, TendonSide::B] {
            let t = tendon_frame(&arc, side, &g).unwrap();
            let rot = t.fixed_view::<3, 3>(0, 0).into_owned();
            let err = (rot.transpose() * rot - nalgebra::Matrix3::identity()).abs().max();
            prop_assert!(err <= 1e-10);
            prop_assert!((rot.determinant() - 1.0).abs() <= 1e-10);
            prop_assert_eq!(t.row(3).into_owned(), nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0));
        }
    }

    #[test]
    fn displacements_are_linear_in_angle_change(
        r in 20.0..200.0f64, r_a in 0.5..10.0f64, r_b in 0.5..10.0f64,
        theta_o in 0.0..3.0f64, delta in -1.0..1.0f64,
    ) {
        let g = geometry(r_a, r_b);
        let once = tendon_displacements(&g, r, theta_o, theta_o - delta).unwrap();
        let twice = tendon_displacements(&g, r, theta_o, theta_o - 2.0 * delta).unwrap();
        // theta_o - delta rounds, so the doubled change is exact only up to ulps
        prop_assert!((twice.a - 2.0 * once.a).abs() <= 1e-12 * (1.0 + twice.a.abs()));
        prop_assert!((twice.b - 2.0 * once.b).abs() <= 1e-12 * (1.0 + twice.b.abs()));
        let exact = tendon_displacements(&g, r, 0.0, -delta).unwrap();
        let exact2 = tendon_displacements(&g, r, 0.0, -2.0 * delta).unwrap();
        prop_assert_eq!(exact2.a, 2.0 * exact.a);
        prop_assert_eq!(exact2.b, 2.0 * exact.b);
        if delta != 0.0 {
            prop_assert!((once.a / once.b - (r + r_a) / (r - r_b)).abs() <= 1e-12 * (r + r_a) / (r - r_b));
        }
    }

    #[test]
    fn inverse_round_trips(r in 20.0..200.0f64, r_a in 0.5..10.0f64, theta_o in 0.0..3.0f64, theta_t in 0.0..3.0f64) {
        let g = geometry(r_a, 5.0);
        let s = tendon_displacements(&g, r, theta_o, theta_t).unwrap();
        let back = arc_from_displacements(&g, r, theta_o, s.a).unwrap();
        prop_assert!((back - theta_t).abs() <= 1e-12);
    }
}

#[test]
fn finite_difference_slopes() {
    let g = geometry(6.0, 4.0);
    let (r, theta_o, theta_t, h) = (35.0, 1.1, 0.7, 1e-6);
    let plus = tendon_displacements(&g, r, theta_o, theta_t + h).unwrap();
    let minus = tendon_displacements(&g, r, theta_o, theta_t - h).unwrap();
    let da = (plus.a - minus.a) / (2.0 * h);
    let db = (plus.b - minus.b) / (2.0 * h);
    assert_relative_eq!(da, -(r + g.r_a), max_relative = 1e-6);
    assert_relative_eq!(db, -(r - g.r_b), max_relative = 1e-6);
}

#[test]
fn straight_limit_is_continuous() {
    let l = 50.0;
    let straight = fingertip_position(&ArcState::straight(l).unwrap()).unwrap();
    let nearly = fingertip_position(&ArcState::from_length(2e-6, l).unwrap()).unwrap();
    assert!((straight - nearly).norm() < 1e-3);
    let t = tendon_frame(&ArcState::from_length(1e-7, l).unwrap(), TendonSide::B, &FingerGeometry::default()).unwrap();
    assert_eq!(t.fixed_view::<3, 3>(0, 0).into_owned(), nalgebra::Matrix3::identity());
    assert_eq!(t[(2, 3)], l);
}

#[test]
fn grounding_modes_share_kinematics() {
    // the mode only selects which joints the device acts on
    let arc = ArcState::from_radius(0.9, 40.0).unwrap();
    let g = FingerGeometry::default();
    let frames: Vec<_> = GroundingMode::ALL.iter().map(|_| tendon_frame(&arc, TendonSide::A, &g).unwrap()).collect();
    assert!(frames.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(GroundingMode::BackOfHand.actuated_joints(), &[Joint::Mp1, Joint::Pip, Joint::Dip]);
    assert_eq!(GroundingMode::ProximalPhalanx.actuated_joints(), &[Joint::Pip, Joint::Dip]);
    assert_eq!(GroundingMode::MiddlePhalanx.actuated_joints(), &[Joint::Dip]);
}
