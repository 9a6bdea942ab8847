//! Impedance motion generators and target schedules.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal mass/damper/spring, one entry per Cartesian axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceParams {
    pub mass: [f64; 3],
    pub damping: [f64; 3],
    pub stiffness: [f64; 3],
}

/// `d = 2√(m·k)` per axis.
pub fn critical_damping(mass: [f64; 3], stiffness: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|j| 2.0 * (mass[j] * stiffness[j]).sqrt())
}

impl ImpedanceParams {
    pub fn critically_damped(mass: [f64; 3], stiffness: [f64; 3]) -> Self {
        ImpedanceParams {
            mass,
            damping: critical_damping(mass, stiffness),
            stiffness,
        }
    }

    /// Zero stiffness and damping are allowed: such a controller simply holds still.
    pub fn validate(&self) -> Result<()> {
        for j in 0..3 {
            if !(self.mass[j] > 0.0) {
                return Err(Error::field(format!("impedance.mass[{j}]"), "must be positive"));
            }
            if !(self.stiffness[j] >= 0.0) || !(self.damping[j] >= 0.0) {
                return Err(Error::field(
                    format!("impedance[{j}]"),
                    "stiffness and damping must be non-negative",
                ));
            }
        }
        Ok(())
    }

    pub fn is_critically_damped(&self) -> bool {
        self.damping == critical_damping(self.mass, self.stiffness)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImpedanceState {
    /// Measured end-effector position.
    pub x: Vector3<f64>,
    /// Controller velocity (the previous command).
    pub xdot: Vector3<f64>,
    pub x_d: Vector3<f64>,
    pub xdot_d: Vector3<f64>,
    pub f_ext: Vector3<f64>,
}

/// One explicit Euler step of `Mẍ + D(ẋ − ẋ_d) + K(x − x_d) = f`.
/// Returns the new velocity command and stores it in `s.xdot`.
pub fn impedance_step(s: &mut ImpedanceState, p: &ImpedanceParams, dt: f64) -> Vector3<f64> {
    let mut cmd = Vector3::zeros();
    for j in 0..3 {
        let acc =
            (s.f_ext[j] - p.damping[j] * (s.xdot[j] - s.xdot_d[j]) - p.stiffness[j] * (s.x[j] - s.x_d[j])) / p.mass[j];
        cmd[j] = s.xdot[j] + acc * dt;
    }
    s.xdot = cmd;
    cmd
}

/// Maximum angular rate commanded by [`orientation_hold`] (rad/s).
pub const MAX_ANGULAR_RATE: f64 = 1.0;

/// Proportional angular velocity that rotates `current` onto `reference`.
pub fn orientation_hold(current: &UnitQuaternion<f64>, reference: &UnitQuaternion<f64>, gain: f64) -> Vector3<f64> {
    let err = reference * current.inverse();
    let q = err.quaternion();
    // q and −q are the same rotation; take the short way round.
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let s = v.norm();
    if s < 1e-15 {
        return Vector3::zeros();
    }
    let angle = 2.0 * s.atan2(w);
    let omega = v * (gain * angle / s);
    let n = omega.norm();
    if n > MAX_ANGULAR_RATE {
        omega * (MAX_ANGULAR_RATE / n)
    } else {
        omega
    }
}

/// Anything that can hand out the next recovery target.
pub trait TargetSource {
    fn next_target(&mut self) -> Vector3<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleMode {
    /// Visit waypoints in a loop; every reach is one manufacturing task.
    ManufacturingCycle,
    /// Single target; a new one is drawn from the prior after each reach.
    RecoverySpawn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSchedule {
    pub mode: ScheduleMode,
    pub waypoints: Vec<Vector3<f64>>,
    pub reach_tol: f64,
    pub current_index: usize,
    pub target: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleUpdate {
    pub new_target: Option<Vector3<f64>>,
    pub completed: bool,
}

impl TargetSchedule {
    pub fn cycle(waypoints: Vec<Vector3<f64>>, reach_tol: f64) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Config("a manufacturing cycle needs at least 2 waypoints".into()));
        }
        if !(reach_tol > 0.0) {
            return Err(Error::field("reach_tol", "must be positive"));
        }
        Ok(TargetSchedule {
            mode: ScheduleMode::ManufacturingCycle,
            target: waypoints[0],
            waypoints,
            reach_tol,
            current_index: 0,
        })
    }

    pub fn spawn(first_target: Vector3<f64>, reach_tol: f64) -> Result<Self> {
        if !(reach_tol > 0.0) {
            return Err(Error::field("reach_tol", "must be positive"));
        }
        Ok(TargetSchedule {
            mode: ScheduleMode::RecoverySpawn,
            waypoints: Vec::new(),
            reach_tol,
            current_index: 0,
            target: first_target,
        })
    }

    pub fn reached(&self, ee: &Vector3<f64>) -> bool {
        (ee - self.target).norm() <= self.reach_tol
    }
}

/// Check for a reach and move the target on if so. Recovery schedules need
/// a `source` to draw their next target; without one they keep the old target.
pub fn advance_schedule(
    sched: &mut TargetSchedule,
    ee: &Vector3<f64>,
    source: Option<&mut dyn TargetSource>,
) -> ScheduleUpdate {
    if !sched.reached(ee) {
        return ScheduleUpdate {
            new_target: None,
            completed: false,
        };
    }
    let new_target = match sched.mode {
        ScheduleMode::ManufacturingCycle => {
            sched.current_index = (sched.current_index + 1) % sched.waypoints.len();
            Some(sched.waypoints[sched.current_index])
        }
        ScheduleMode::RecoverySpawn => source.map(|s| s.next_target()),
    };
    if let Some(t) = new_target {
        sched.target = t;
    }
    ScheduleUpdate {
        new_target,
        completed: true,
    }
}

/// `count` points evenly spaced on a horizontal circle, starting at angle `phase`.
pub fn circle_waypoints(center: Vector3<f64>, radius: f64, count: usize, phase: f64) -> Vec<Vector3<f64>> {
    (0..count)
        .map(|k| {
            let a = phase + std::f64::consts::TAU * k as f64 / count as f64;
            center + Vector3::new(radius * a.cos(), radius * a.sin(), 0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn critical_damping_values() {
        let d = critical_damping([1.0, 1.0, 4.0], [40.0, 1.0, 1.0]);
        assert!((d[0] - 12.649110640673518).abs() < 1e-12);
        assert_eq!(d[1], 2.0);
        assert_eq!(d[2], 4.0);
    }

    #[test]
    fn equilibrium_command_is_zero() {
        let p = ImpedanceParams::critically_damped([1.0; 3], [40.0, 40.0, 20.0]);
        let mut s = ImpedanceState {
            x: Vector3::new(0.3, -0.1, 0.5),
            x_d: Vector3::new(0.3, -0.1, 0.5),
            ..Default::default()
        };
        assert_eq!(impedance_step(&mut s, &p, 0.002), Vector3::zeros());
    }

    #[test]
    fn spring_balances_external_force() {
        let k = [40.0, 40.0, 20.0];
        let p = ImpedanceParams::critically_damped([1.0; 3], k);
        let delta = Vector3::new(0.01, -0.02, 0.03);
        let mut s = ImpedanceState {
            x_d: Vector3::zeros(),
            f_ext: Vector3::new(k[0] * delta.x, k[1] * delta.y, k[2] * delta.z),
            ..Default::default()
        };
        for _ in 0..20_000 {
            let v = impedance_step(&mut s, &p, 0.002);
            s.x += v * 0.002;
        }
        assert!((s.x - delta).norm() < 1e-9);
    }

    #[test]
    fn orientation_hold_cases() {
        let r = UnitQuaternion::from_euler_angles(0.1, -0.4, 0.9);
        assert_eq!(orientation_hold(&r, &r, 2.0), Vector3::zeros());

        let w = orientation_hold(
            &UnitQuaternion::identity(),
            &UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.2),
            1.0,
        );
        assert!((w - Vector3::new(0.0, 0.0, 0.2)).norm() < 1e-12);

        let antipodal = UnitQuaternion::new_unchecked(-r.into_inner());
        assert!(orientation_hold(&antipodal, &r, 1.0).norm() < 1e-12);

        let big = orientation_hold(
            &UnitQuaternion::identity(),
            &UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 2.0),
            5.0,
        );
        assert!((big.norm() - MAX_ANGULAR_RATE).abs() < 1e-12);
    }

    #[test]
    fn schedule_reach_logic() {
        let wps = circle_waypoints(Vector3::zeros(), 0.15, 4, 0.0);
        let mut s = TargetSchedule::cycle(wps.clone(), 0.02).unwrap();
        let at = s.target;
        let miss = at + Vector3::new(0.02 + 1e-3, 0.0, 0.0);
        assert!(!advance_schedule(&mut s, &miss, None).completed);
        let up = advance_schedule(&mut s, &at, None);
        assert!(up.completed);
        assert_eq!(up.new_target, Some(wps[1]));
        for _ in 0..3 {
            let t = s.target;
            assert!(advance_schedule(&mut s, &t, None).completed);
        }
        assert_eq!(s.current_index, 0);
        assert!(TargetSchedule::cycle(vec![Vector3::zeros()], 0.02).is_err());
    }

    struct Fixed(Vector3<f64>);
    impl TargetSource for Fixed {
        fn next_target(&mut self) -> Vector3<f64> {
            self.0
        }
    }

    #[test]
    fn spawn_schedule_draws_from_source() {
        let mut s = TargetSchedule::spawn(Vector3::new(1.0, 0.0, 0.0), 0.02).unwrap();
        let mut src = Fixed(Vector3::new(0.0, 1.0, 0.0));
        let up = advance_schedule(&mut s, &Vector3::new(1.0, 0.0, 0.0), Some(&mut src));
        assert!(up.completed);
        assert_eq!(s.target, Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn waypoints_on_circle() {
        let c = Vector3::new(0.5, 0.2, 0.4);
        for w in circle_waypoints(c, 0.15, 4, 0.3) {
            assert!(((w - c).norm() - 0.15).abs() < 1e-12);
            assert_eq!(w.z, c.z);
        }
    }
}
