//! Fixtures shared by the benchmarks.

use mprio_core::kinematics::{forward_kinematics, RobotModel};
use mprio_core::priority::{assemble_ik_qp, robot_kinematics, TaskCommand};
use mprio_core::qp::QpProblem;
use mprio_core::CollisionParams;
use nalgebra::{DVector, Isometry3, Translation3, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const Q: [f64; 7] = [0.3, 0.9, -0.2, 1.1, 0.4, -0.7, 0.2];

/// Two seven-joint arms whose tools face each other `gap` apart, closing in
/// head-on. One pair row is active when `gap` is inside the influence distance.
pub fn head_on_qp(gap: f64) -> QpProblem {
    let a = RobotModel::generic7("a", Isometry3::identity());
    let tip = forward_kinematics(&a, &Q).expect("valid configuration").position;
    let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
    let base = tip + Vector3::new(gap, 0.0, 0.0) - rot * tip;
    let b = RobotModel::generic7("b", Isometry3::from_parts(Translation3::from(base), rot));
    let models = [a, b];
    let q = vec![DVector::from_row_slice(&Q); 2];
    let kin = robot_kinematics(&models, &q).expect("valid configuration");
    let cmds = [
        TaskCommand {
            robot_index: 0,
            twist: Vector6::new(0.05, 0.0, 0.0, 0.0, 0.0, 0.0),
        },
        TaskCommand {
            robot_index: 1,
            twist: Vector6::new(-0.05, 0.0, 0.0, 0.0, 0.0, 0.0),
        },
    ];
    assemble_ik_qp(
        &models,
        &kin,
        &cmds,
        &[1e7, 1e5],
        1.0,
        &CollisionParams::default(),
        &[(1, 0)],
    )
    .expect("consistent problem")
}

/// Noisy samples of a smooth surface on [0, 0.5]^dim.
pub fn gp_data(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(0.0..0.5)).collect())
        .collect();
    let y = x
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(i, v)| (4.0 * v + i as f64).sin())
                .sum::<f64>()
                + 0.05 * rng.random_range(-1.0..1.0)
        })
        .collect();
    (x, y)
}
