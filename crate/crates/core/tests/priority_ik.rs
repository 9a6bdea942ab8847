use mprio_core::kinematics::{forward_kinematics, Joint, RobotModel};
use mprio_core::priority::{
    assemble_ik_qp, damper_lower_bound, priority_value, priority_weights, robot_kinematics, IkContext, Priority,
    PriorityConfig, Roles, TaskCommand, WorldState,
};
use mprio_core::qp::{solve_qp, QpStatus};
use mprio_core::CollisionParams;
use nalgebra::{DVector, Isometry3, Matrix6, Translation3, UnitQuaternion, Vector3, Vector6};
use proptest::prelude::*;

const Q_A: [f64; 7] = [0.3, 0.9, -0.2, 1.1, 0.4, -0.7, 0.2];

/// Robot A at the origin and robot B rotated half a turn about z, placed so
/// the two tool points sit `gap` apart along x with the same joint angles.
fn facing_pair(gap: f64) -> (Vec<RobotModel>, Vec<DVector<f64>>, Vector3<f64>) {
    let a = RobotModel::generic7("a", Isometry3::identity());
    let tip = forward_kinematics(&a, &Q_A).unwrap().position;
    let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
    let b_base = tip + Vector3::new(gap, 0.0, 0.0) - rot * tip;
    let b = RobotModel::generic7("b", Isometry3::from_parts(Translation3::from(b_base), rot));
    let q = vec![DVector::from_row_slice(&Q_A), DVector::from_row_slice(&Q_A)];
    (vec![a, b], q, tip)
}

fn twist(v: Vector3<f64>) -> Vector6<f64> {
    Vector6::new(v.x, v.y, v.z, 0.0, 0.0, 0.0)
}

/// Solve the head-on problem with robot 0 approaching at 0.05 m/s along +x
/// and robot 1 approaching along −x, and return the realized twists.
fn head_on(w: [f64; 2], gap: f64) -> (Vector6<f64>, Vector6<f64>, f64) {
    let (models, q, _) = facing_pair(gap);
    let kin = robot_kinematics(&models, &q).unwrap();
    let cmds = [
        TaskCommand {
            robot_index: 0,
            twist: twist(Vector3::new(0.05, 0.0, 0.0)),
        },
        TaskCommand {
            robot_index: 1,
            twist: twist(Vector3::new(-0.05, 0.0, 0.0)),
        },
    ];
    let cp = CollisionParams::default();
    let qp = assemble_ik_qp(&models, &kin, &cmds, &w, 1.0, &cp, &[(1, 0)]).unwrap();
    assert_eq!(qp.n_ineq(), 1);
    let sol = solve_qp(&qp, 1e-9, 20_000).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    let v0 = &kin[0].jacobian * sol.x.rows(0, 7);
    let v1 = &kin[1].jacobian * sol.x.rows(7, 7);
    (v0, v1, damper_lower_bound(gap, &cp))
}

#[test]
fn heavy_robot_tracks_and_light_robot_yields() {
    for (w, lead) in [([1e7, 1e5], 0usize), ([1e5, 1e7], 1usize)] {
        let (v0, v1, lower) = head_on(w, 0.12);
        let (lead_v, lead_cmd, yield_v) = if lead == 0 {
            (v0, Vector3::new(0.05, 0.0, 0.0), v1)
        } else {
            (v1, Vector3::new(-0.05, 0.0, 0.0), v0)
        };
        let residual = (lead_v - twist(lead_cmd)).norm();
        assert!(residual <= 1e-3, "leading robot residual {residual}");
        // Approach speed of the pair is capped at −lower, so the yielding
        // robot has to back off by the remainder.
        let approach = v0.x - v1.x;
        assert!(approach <= -lower + 1e-6, "approach {approach} vs cap {}", -lower);
        let yield_dir = if lead == 0 { -1.0 } else { 1.0 };
        let yield_speed = yield_dir * yield_v.x;
        assert!(
            yield_speed <= -(0.05 + lower) + 1e-3,
            "yielding robot still approaches at {yield_speed}"
        );
    }
}

#[test]
fn distant_robots_decouple() {
    let (models, q, _) = facing_pair(0.4);
    let kin = robot_kinematics(&models, &q).unwrap();
    let cmds = [
        TaskCommand {
            robot_index: 0,
            twist: Vector6::new(0.05, -0.02, 0.01, 0.0, 0.1, 0.0),
        },
        TaskCommand {
            robot_index: 1,
            twist: Vector6::new(-0.03, 0.0, 0.04, 0.1, 0.0, 0.0),
        },
    ];
    let cp = CollisionParams::default();
    let both = assemble_ik_qp(&models, &kin, &cmds, &[1e5, 1e7], 1.0, &cp, &[(1, 0)]).unwrap();
    assert_eq!(both.n_ineq(), 0);
    let joint = solve_qp(&both, 1e-10, 20_000).unwrap().x;
    for i in 0..2 {
        let single = assemble_ik_qp(
            &models[i..=i],
            &kin[i..=i],
            &[TaskCommand {
                robot_index: 0,
                twist: cmds[i].twist,
            }],
            &[[1e5, 1e7][i]],
            1.0,
            &cp,
            &[],
        )
        .unwrap();
        let alone = solve_qp(&single, 1e-10, 20_000).unwrap().x;
        assert!((joint.rows(7 * i, 7) - alone).amax() < 1e-6);
    }
}

#[test]
fn square_jacobian_gives_the_inverse() {
    let joints: Vec<Joint> = [
        Vector3::z_axis(),
        Vector3::y_axis(),
        Vector3::x_axis(),
        Vector3::y_axis(),
        Vector3::z_axis(),
        Vector3::x_axis(),
    ]
    .into_iter()
    .map(|axis| Joint {
        axis,
        origin: Isometry3::translation(0.05, 0.02, 0.25),
    })
    .collect();
    let model = RobotModel::new(
        "six",
        Isometry3::identity(),
        joints,
        Isometry3::identity(),
        vec![-10.0; 6],
        vec![10.0; 6],
    )
    .unwrap();
    let q = vec![DVector::from_row_slice(&[0.2, 0.5, -0.3, 0.8, 0.1, -0.4])];
    let kin = robot_kinematics(std::slice::from_ref(&model), &q).unwrap();
    let j = Matrix6::from_iterator(kin[0].jacobian.iter().copied());
    assert!(j.determinant().abs() > 1e-3);
    let xd = Vector6::new(0.1, -0.05, 0.02, 0.1, 0.0, -0.2);
    let cmd = [TaskCommand {
        robot_index: 0,
        twist: xd,
    }];
    let qp = assemble_ik_qp(
        std::slice::from_ref(&model),
        &kin,
        &cmd,
        &[1.0],
        0.0,
        &CollisionParams::default(),
        &[],
    )
    .unwrap();
    let x = solve_qp(&qp, 1e-10, 20_000).unwrap().x;
    let expected = j.try_inverse().unwrap() * xd;
    assert!((x - DVector::from_column_slice(expected.as_slice())).amax() < 1e-6);
}

#[test]
fn table_weights_and_damper_ramp() {
    let cfg = PriorityConfig::default();
    let w = priority_weights(&[Priority::Recovery], &cfg, Some(0));
    assert_eq!((w.recovery, w.manufacturing[0]), (1e7, 1e5));
    let w = priority_weights(&[Priority::Manufacturing], &cfg, Some(0));
    assert_eq!((w.recovery, w.manufacturing[0]), (1e5, 1e7));
    let w = priority_weights(&[Priority::Manufacturing], &cfg, None);
    assert_eq!((w.recovery, w.manufacturing[0]), (1e7, 1e7));
    let cp = CollisionParams::default();
    assert_eq!(damper_lower_bound(cp.d_s, &cp), 0.0);
    assert!((damper_lower_bound(cp.d_i, &cp) + 0.1).abs() < 1e-12);
    assert!((damper_lower_bound(0.125, &cp) + 0.05).abs() < 1e-12);
    assert_eq!(priority_value(0.15, 0.15), Priority::Recovery);
}

#[test]
fn context_reports_priorities_and_frozen_robots_hold() {
    let (models, q, tip) = facing_pair(0.12);
    let roles = Roles {
        recovery: 0,
        manufacturing: vec![1],
    };
    let b_tip = tip + Vector3::new(0.12, 0.0, 0.0);
    let cfg = PriorityConfig {
        thresholds: vec![0.05],
        ..PriorityConfig::default()
    };
    let mut ctx = IkContext::new(CollisionParams::default(), cfg);
    let cmds = vec![
        TaskCommand {
            robot_index: 0,
            twist: twist(Vector3::new(0.05, 0.0, 0.0)),
        },
        TaskCommand {
            robot_index: 1,
            twist: twist(Vector3::new(-0.05, 0.0, 0.0)),
        },
    ];
    // Manufacturing target 0.02 m away: within the threshold, so it leads.
    let mut state = WorldState {
        q: q.clone(),
        targets: vec![tip, b_tip + Vector3::new(0.0, 0.0, 0.02)],
        frozen: vec![false, false],
    };
    let step = ctx.step_ik(&models, &roles, &state, &cmds).unwrap();
    assert_eq!(step.priorities, vec![Priority::Manufacturing]);
    assert_eq!(step.weights, vec![1e5, 1e7]);
    assert_eq!(step.active_constraints, 1);
    assert!((step.pair_distances[0] - 0.12).abs() < 1e-9);
    // Target far away: the recovery robot leads.
    state.targets[1] = b_tip + Vector3::new(0.0, 0.0, 0.3);
    let step = ctx.step_ik(&models, &roles, &state, &cmds).unwrap();
    assert_eq!(step.priorities, vec![Priority::Recovery]);
    assert_eq!(step.weights, vec![1e7, 1e5]);
    state.frozen[1] = true;
    let step = ctx.step_ik(&models, &roles, &state, &cmds).unwrap();
    assert!(step.qdot[1].iter().all(|&v| v == 0.0));
    assert_eq!(ctx.qp_solves, 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Whatever the weights and commands, the realized approach speed never
    /// exceeds the damper cap.
    #[test]
    fn damper_caps_the_approach_speed(
        gap in 0.101f64..0.149,
        log_w0 in 3.0f64..8.0, log_w1 in 3.0f64..8.0,
        a in -0.2f64..0.2, b in -0.2f64..0.2, c in -0.1f64..0.1,
    ) {
        let (models, q, _) = facing_pair(gap);
        let kin = robot_kinematics(&models, &q).unwrap();
        let cmds = [
            TaskCommand { robot_index: 0, twist: twist(Vector3::new(a, c, 0.0)) },
            TaskCommand { robot_index: 1, twist: twist(Vector3::new(b, 0.0, c)) },
        ];
        let cp = CollisionParams::default();
        let w = [10f64.powf(log_w0), 10f64.powf(log_w1)];
        let qp = assemble_ik_qp(&models, &kin, &cmds, &w, 1.0, &cp, &[(1, 0)]).unwrap();
        let sol = solve_qp(&qp, 1e-9, 20_000).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        let v0 = &kin[0].jacobian * sol.x.rows(0, 7);
        let v1 = &kin[1].jacobian * sol.x.rows(7, 7);
        // n points from robot 0 to robot 1, so the gap rate is v1.x − v0.x.
        prop_assert!(v1.x - v0.x >= damper_lower_bound(gap, &cp) - 1e-6);
    }
}
