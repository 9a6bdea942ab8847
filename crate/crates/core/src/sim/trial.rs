//! Recovery tasks: the recovery robot reaches for a dropped object while
//! the manufacturing robots keep cycling (or until the timeout passes).

use nalgebra::{DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::control::{advance_schedule, impedance_step, orientation_hold, ImpedanceState, TargetSchedule};
use crate::error::Result;
use crate::prior::{sample_drop_position, MhChain, MhConfig};
use crate::priority::{
    robot_kinematics, IkContext, IkStep, Priority, PriorityPolicy, RobotKinematics, TaskCommand, WorldState,
};
use crate::seed::{derive_seed, stream};

use super::scene::SceneConfig;

/// Variations on a trial used by the benchmarks and by audits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOptions {
    pub policy: PriorityPolicy,
    /// Manufacturing halts for the whole recovery task and is kept clear of
    /// the shared space.
    pub non_continuous: bool,
    pub collisions: bool,
    /// Keep a per-tick trajectory log.
    pub record: bool,
}

impl Default for TrialOptions {
    fn default() -> Self {
        TrialOptions {
            policy: PriorityPolicy::Thresholds,
            non_continuous: false,
            collisions: true,
            record: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub tick: usize,
    pub robot: usize,
}

/// Per-tick samples, taken before the control update of that tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub time: Vec<f64>,
    /// End-effector position of every robot.
    pub positions: Vec<Vec<Vector3<f64>>>,
    /// Current target of every robot.
    pub targets: Vec<Vec<Vector3<f64>>>,
    /// Priority of every manufacturing robot (empty on the final tick).
    pub priorities: Vec<Vec<Priority>>,
    pub task_events: Vec<TaskEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// Duration of the recovery task (s).
    pub risk_time: f64,
    /// Manufacturing waypoint completions during the task, per manufacturing robot.
    pub tasks_completed: Vec<u32>,
    pub deadlocked: bool,
    /// Smallest manufacturing–recovery end-effector distance seen (m);
    /// `None` when pairs are not tracked (non-continuous runs).
    pub min_pair_distance: Option<f64>,
    /// The security distance was breached by more than 1 cm.
    pub hard_failure: bool,
    pub drop_position: Vector3<f64>,
    pub ticks: usize,
    pub qp_infeasible: usize,
    pub qp_iterations: usize,
    pub trajectory_log: Option<TrajectoryLog>,
}

impl TrialResult {
    pub fn total_tasks(&self) -> u32 {
        self.tasks_completed.iter().sum()
    }
}

/// Tolerance on the security distance before a breach is a hard failure.
pub const SAFETY_MARGIN: f64 = 0.01;

/// Controllers, IK and joint state of every robot in one scene.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    scene: &'a SceneConfig,
    pub ik: IkContext,
    pub q: Vec<DVector<f64>>,
    impedance: Vec<ImpedanceState>,
    schedules: Vec<Option<TargetSchedule>>,
    frozen: Vec<bool>,
    kin: Vec<RobotKinematics>,
    tick: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(scene: &'a SceneConfig, ik: IkContext) -> Result<Self> {
        let q = scene.homes.clone();
        let kin = robot_kinematics(&scene.models, &q)?;
        let mut impedance = Vec::with_capacity(q.len());
        let mut schedules = Vec::with_capacity(q.len());
        for (i, k) in kin.iter().enumerate() {
            let schedule = if scene.waypoints[i].is_empty() {
                None
            } else {
                Some(TargetSchedule::cycle(scene.waypoints[i].clone(), scene.file.reach_tol)?)
            };
            let target = schedule.as_ref().map_or(k.pose.position, |s| s.target);
            impedance.push(ImpedanceState {
                x: k.pose.position,
                x_d: target,
                ..ImpedanceState::default()
            });
            schedules.push(schedule);
        }
        Ok(Simulation {
            scene,
            ik,
            frozen: vec![false; q.len()],
            q,
            impedance,
            schedules,
            kin,
            tick: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scene.file.dt
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn position(&self, robot: usize) -> Vector3<f64> {
        self.kin[robot].pose.position
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.kin.iter().map(|k| k.pose.position).collect()
    }

    pub fn target(&self, robot: usize) -> Vector3<f64> {
        self.impedance[robot].x_d
    }

    pub fn targets(&self) -> Vec<Vector3<f64>> {
        self.impedance.iter().map(|s| s.x_d).collect()
    }

    /// Override the target of `robot`; manufacturing robots stop cycling.
    pub fn set_target(&mut self, robot: usize, target: Vector3<f64>, velocity: Vector3<f64>) {
        self.schedules[robot] = None;
        self.impedance[robot].x_d = target;
        self.impedance[robot].xdot_d = velocity;
    }

    pub fn set_frozen(&mut self, robot: usize, frozen: bool) {
        self.frozen[robot] = frozen;
    }

    /// Check manufacturing reaches; returns the robots that completed a task.
    pub fn advance_schedules(&mut self) -> Vec<usize> {
        let mut done = Vec::new();
        for i in 0..self.schedules.len() {
            if self.frozen[i] {
                continue;
            }
            let ee = self.kin[i].pose.position;
            if let Some(s) = self.schedules[i].as_mut() {
                let up = advance_schedule(s, &ee, None);
                if up.completed {
                    self.impedance[i].x_d = s.target;
                    done.push(i);
                }
            }
        }
        done
    }

    /// Distance of each manufacturing end-effector to the recovery one.
    pub fn pair_distances(&self) -> Vec<f64> {
        let p_r = self.position(self.scene.roles.recovery);
        self.scene
            .roles
            .manufacturing
            .iter()
            .map(|&m| (self.position(m) - p_r).norm())
            .collect()
    }

    /// Impedance → priority IK → `q ← q + q̇·dt`.
    pub fn step(&mut self) -> Result<IkStep> {
        let dt = self.scene.file.dt;
        let gain = self.scene.file.orientation_gain;
        let mut commands = Vec::with_capacity(self.q.len());
        for (i, k) in self.kin.iter().enumerate() {
            let s = &mut self.impedance[i];
            s.x = k.pose.position;
            let v = impedance_step(s, &self.scene.impedance[i], dt);
            let w = orientation_hold(&k.pose.orientation, &self.scene.home_poses[i].orientation, gain);
            commands.push(TaskCommand {
                robot_index: i,
                twist: Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z),
            });
        }
        let state = WorldState {
            q: Vec::new(),
            targets: self.targets(),
            frozen: self.frozen.clone(),
        };
        let step = self
            .ik
            .step_with(&self.scene.models, &self.scene.roles, &self.kin, &state, &commands)?;
        for (i, qdot) in step.qdot.iter().enumerate() {
            // The controller sees the velocity the robot actually achieved.
            self.impedance[i].xdot = self.kin[i].jacobian.fixed_rows::<3>(0) * qdot;
            self.q[i].axpy(dt, qdot, 1.0);
        }
        self.kin = robot_kinematics(&self.scene.models, &self.q)?;
        self.tick += 1;
        Ok(step)
    }
}

fn ik_context(scene: &SceneConfig, thresholds: &[f64], opts: &TrialOptions) -> IkContext {
    let mut priority = scene.file.priority.clone();
    priority.thresholds = thresholds.to_vec();
    let mut ik = IkContext::new(scene.file.collision, priority).with_policy(opts.policy);
    ik.collisions_enabled = opts.collisions && !opts.non_continuous;
    ik
}

/// Drop-position chain of the trial sequence rooted at `seed`.
fn drop_chain(scene: &SceneConfig, seed: u64) -> Result<MhChain> {
    let cfg = MhConfig {
        seed: derive_seed(seed, stream::TRIAL),
        ..scene.file.mh
    };
    MhChain::new(scene.file.prior.clone(), cfg)
}

/// Drop position of the first trial of sequence `seed`.
pub fn drop_for_seed(scene: &SceneConfig, seed: u64) -> Result<Vector3<f64>> {
    Ok(sample_drop_position(&mut drop_chain(scene, seed)?))
}

/// Consecutive recovery tasks in one running workspace. The first starts
/// from the home configurations; every later one starts where the previous
/// ended, with the manufacturing robots still mid-cycle, and the dropped
/// object is relocated as soon as the recovery robot reaches it.
pub struct TrialSequence<'a> {
    scene: &'a SceneConfig,
    sim: Simulation<'a>,
    chain: MhChain,
    opts: TrialOptions,
}

impl<'a> TrialSequence<'a> {
    pub fn new(scene: &'a SceneConfig, thresholds: &[f64], seed: u64, opts: &TrialOptions) -> Result<Self> {
        scene.check_thresholds(thresholds)?;
        let mut sim = Simulation::new(scene, ik_context(scene, thresholds, opts))?;
        if opts.non_continuous {
            for &m in &scene.roles.manufacturing {
                sim.set_frozen(m, true);
            }
        }
        Ok(TrialSequence {
            scene,
            sim,
            chain: drop_chain(scene, seed)?,
            opts: *opts,
        })
    }

    pub fn simulation(&self) -> &Simulation<'a> {
        &self.sim
    }

    /// Relocate the object by the prior and run the next task.
    pub fn next_trial(&mut self) -> Result<TrialResult> {
        let drop = sample_drop_position(&mut self.chain);
        self.run_to(drop)
    }

    /// Run one recovery task towards `drop` from the current state.
    pub fn run_to(&mut self, drop: Vector3<f64>) -> Result<TrialResult> {
        let scene = self.scene;
        let opts = &self.opts;
        let sim = &mut self.sim;
        let r = scene.roles.recovery;
        let manufacturing = &scene.roles.manufacturing;
        sim.set_target(r, drop, Vector3::zeros());
        let start = sim.tick();
        let (infeasible0, iterations0) = (sim.ik.infeasible_events, sim.ik.qp_iterations);
        let max_ticks = (scene.file.trial_timeout / scene.file.dt).round() as usize;
        let floor = scene.file.collision.d_s - SAFETY_MARGIN;
        let mut tasks = vec![0u32; manufacturing.len()];
        let mut min_pair = f64::INFINITY;
        let mut log = opts.record.then(TrajectoryLog::default);
        let deadlocked = loop {
            // Pairs are only meaningful while the robots share the space.
            if !opts.non_continuous {
                for d in sim.pair_distances() {
                    min_pair = min_pair.min(d);
                }
            }
            if let Some(log) = log.as_mut() {
                log.time.push(sim.time());
                log.positions.push(sim.positions());
                log.targets.push(sim.targets());
            }
            if (sim.position(r) - drop).norm() <= scene.file.reach_tol {
                break false;
            }
            if sim.tick() - start >= max_ticks {
                break true;
            }
            for robot in sim.advance_schedules() {
                let k = manufacturing
                    .iter()
                    .position(|&m| m == robot)
                    .expect("only manufacturing robots cycle");
                tasks[k] += 1;
                if let Some(log) = log.as_mut() {
                    log.task_events.push(TaskEvent {
                        tick: sim.tick(),
                        robot,
                    });
                }
            }
            let step = sim.step()?;
            if let Some(log) = log.as_mut() {
                log.priorities.push(step.priorities);
            }
        };
        let ticks = sim.tick() - start;
        Ok(TrialResult {
            risk_time: ticks as f64 * scene.file.dt,
            tasks_completed: tasks,
            deadlocked,
            min_pair_distance: min_pair.is_finite().then_some(min_pair),
            hard_failure: min_pair < floor,
            drop_position: drop,
            ticks,
            qp_infeasible: sim.ik.infeasible_events - infeasible0,
            qp_iterations: sim.ik.qp_iterations - iterations0,
            trajectory_log: log,
        })
    }
}

/// The first trial of sequence `seed`: from home towards a sampled drop.
pub fn run_trial(scene: &SceneConfig, thresholds: &[f64], seed: u64) -> Result<TrialResult> {
    run_trial_with(scene, thresholds, seed, &TrialOptions::default())
}

pub fn run_trial_with(scene: &SceneConfig, thresholds: &[f64], seed: u64, opts: &TrialOptions) -> Result<TrialResult> {
    TrialSequence::new(scene, thresholds, seed, opts)?.next_trial()
}

/// A trial from home towards a given drop position.
pub fn run_trial_at(
    scene: &SceneConfig,
    thresholds: &[f64],
    drop: Vector3<f64>,
    opts: &TrialOptions,
) -> Result<TrialResult> {
    TrialSequence::new(scene, thresholds, 0, opts)?.run_to(drop)
}
