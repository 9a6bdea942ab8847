//! Weighted multi-robot differential IK with velocity-damper collision
//! constraints and the distance-threshold priority rule.

use nalgebra::{DMatrix, DVector, Matrix6xX, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{pose_and_jacobian, stack_offsets, Pose, RobotModel};
use crate::qp::{QpProblem, QpSettings, QpSolver, QpStatus};

/// Velocity-damper geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionParams {
    /// Security distance d_s (m).
    pub d_s: f64,
    /// Influence distance d_i (m).
    pub d_i: f64,
    /// Convergence gain ξ.
    pub xi: f64,
}

impl Default for CollisionParams {
    fn default() -> Self {
        CollisionParams {
            d_s: 0.10,
            d_i: 0.15,
            xi: 0.1,
        }
    }
}

impl CollisionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_s > 0.0 && self.d_s < self.d_i) {
            return Err(Error::field(
                "collision",
                format!("need 0 < d_s < d_i, got d_s={} d_i={}", self.d_s, self.d_i),
            ));
        }
        if !(self.xi > 0.0) {
            return Err(Error::field("collision.xi", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorityConfig {
    /// Per-manufacturing-robot switching distance l̄ (m).
    #[serde(default)]
    pub thresholds: Vec<f64>,
    pub l_max: f64,
    /// Nominal IK weight w_o.
    pub w_o: f64,
    /// Weight boost γ.
    pub gamma: f64,
    /// Joint-velocity damping ε.
    pub epsilon: f64,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        PriorityConfig {
            thresholds: Vec::new(),
            l_max: 0.5,
            w_o: 1.0e5,
            gamma: 1.0e2,
            epsilon: 1.0,
        }
    }
}

impl PriorityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_max >= 0.0) {
            return Err(Error::field("priority.l_max", "must be non-negative"));
        }
        if !(self.w_o > 0.0) {
            return Err(Error::field("priority.w_o", "must be positive"));
        }
        if !(self.gamma > 1.0) {
            return Err(Error::field("priority.gamma", "must exceed 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::field("priority.epsilon", "must be positive"));
        }
        for (i, &t) in self.thresholds.iter().enumerate() {
            if !(0.0..=self.l_max).contains(&t) {
                return Err(Error::field(
                    format!("priority.thresholds[{i}]"),
                    format!("{t} outside [0, {}]", self.l_max),
                ));
            }
        }
        Ok(())
    }
}

/// Output of the priority function: which side of a conflict yields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Priority {
    /// p = 0
    Manufacturing,
    /// p = 1
    Recovery,
}

impl Priority {
    pub fn value(self) -> u8 {
        match self {
            Priority::Manufacturing => 0,
            Priority::Recovery => 1,
        }
    }
}

/// How priorities are decided each tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorityPolicy {
    /// Distance-threshold rule with the configured l̄.
    Thresholds,
    /// p ≡ 1
    AlwaysRecovery,
    /// p ≡ 0
    AlwaysManufacturing,
}

/// Manufacturing is prioritized while its end-effector is strictly closer
/// than `l_bar` to its own target.
pub fn priority_value(l: f64, l_bar: f64) -> Priority {
    if l < l_bar {
        Priority::Manufacturing
    } else {
        Priority::Recovery
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub manufacturing: Vec<f64>,
    pub recovery: f64,
}

/// `w_m = w_o·γ^(1−p_i)` per manufacturing robot and `w_r = w_o·γ^(p*)`, where
/// p* is the priority of the active pair's manufacturing robot (1 if none).
pub fn priority_weights(priorities: &[Priority], cfg: &PriorityConfig, active_pair: Option<usize>) -> Weights {
    let manufacturing = priorities
        .iter()
        .map(|p| cfg.w_o * cfg.gamma.powi(1 - i32::from(p.value())))
        .collect();
    let p_star = active_pair
        .and_then(|i| priorities.get(i))
        .map_or(1, |p| i32::from(p.value()));
    Weights {
        manufacturing,
        recovery: cfg.w_o * cfg.gamma.powi(p_star),
    }
}

/// Lower bound of the velocity damper at separation `d`.
pub fn damper_lower_bound(d: f64, cp: &CollisionParams) -> f64 {
    -cp.xi * (d - cp.d_s) / (cp.d_i - cp.d_s)
}

/// Velocity-damper row `nᵀ(Ĵ_m − Ĵ_r)` and its lower bound, or `None`
/// when the pair is outside the influence distance.
pub fn collision_constraint(
    p_m: &Vector3<f64>,
    p_r: &Vector3<f64>,
    jhat_m: &Matrix6xX<f64>,
    jhat_r: &Matrix6xX<f64>,
    cp: &CollisionParams,
) -> Result<Option<(DVector<f64>, f64)>> {
    let diff = p_m - p_r;
    let d = diff.norm();
    if d <= 1e-9 {
        return Err(Error::DegenerateGeometry { distance: d });
    }
    if d >= cp.d_i {
        return Ok(None);
    }
    let n = diff / d;
    let rel = jhat_m.rows(0, 3) - jhat_r.rows(0, 3);
    let row = rel.tr_mul(&n);
    Ok(Some((row, damper_lower_bound(d, cp))))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskCommand {
    pub robot_index: usize,
    /// (ṗ, ω) in the world frame.
    pub twist: Vector6<f64>,
}

/// Index sets for the single recovery robot and the manufacturing robots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roles {
    pub recovery: usize,
    pub manufacturing: Vec<usize>,
}

/// Per-robot kinematic snapshot used to build one IK problem.
#[derive(Debug, Clone)]
pub struct RobotKinematics {
    pub pose: Pose,
    pub jacobian: Matrix6xX<f64>,
}

pub fn robot_kinematics(models: &[RobotModel], q: &[DVector<f64>]) -> Result<Vec<RobotKinematics>> {
    if models.len() != q.len() {
        return Err(Error::Dimension {
            expected: models.len(),
            actual: q.len(),
            context: "joint vectors per robot",
        });
    }
    models
        .iter()
        .zip(q)
        .map(|(m, q)| {
            let (pose, jacobian) = pose_and_jacobian(m, q.as_slice())?;
            Ok(RobotKinematics { pose, jacobian })
        })
        .collect()
}

/// Build the QP: `H = Σ w_i Ĵ_iᵀĴ_i + εI`, `g = −Σ w_i Ĵ_iᵀẋ_i`, joint-rate
/// box bounds, and one damper row per pair closer than d_i.
///
/// `pairs` holds (manufacturing, recovery) robot indices.
pub fn assemble_ik_qp(
    models: &[RobotModel],
    kin: &[RobotKinematics],
    commands: &[TaskCommand],
    weights: &[f64],
    epsilon: f64,
    cp: &CollisionParams,
    pairs: &[(usize, usize)],
) -> Result<QpProblem> {
    let n_robots = models.len();
    for (len, context) in [
        (kin.len(), "kinematic snapshots"),
        (commands.len(), "task commands"),
        (weights.len(), "weights"),
    ] {
        if len != n_robots {
            return Err(Error::Dimension {
                expected: n_robots,
                actual: len,
                context,
            });
        }
    }
    let (offsets, total) = stack_offsets(models);
    let mut h = DMatrix::identity(total, total) * epsilon;
    let mut g = DVector::zeros(total);
    let mut lb = DVector::zeros(total);
    let mut ub = DVector::zeros(total);
    for cmd in commands {
        let i = cmd.robot_index;
        if i >= n_robots {
            return Err(Error::Argument(format!("command for unknown robot {i}")));
        }
        let (o, n) = (offsets[i], models[i].dof());
        let j = &kin[i].jacobian;
        let w = weights[i];
        // Ĵ_i is zero outside robot i's columns, so only the diagonal block is touched.
        let block = j.tr_mul(j) * w;
        let mut hv = h.view_mut((o, o), (n, n));
        hv += block;
        g.rows_mut(o, n).copy_from(&(j.tr_mul(&cmd.twist) * -w));
    }
    for (i, m) in models.iter().enumerate() {
        let o = offsets[i];
        for k in 0..m.dof() {
            lb[o + k] = m.qdot_min[k];
            ub[o + k] = m.qdot_max[k];
        }
    }
    let mut qp = QpProblem::boxed(h, g, lb, ub);
    for &(im, ir) in pairs {
        let jm = crate::kinematics::embed_jacobian(&kin[im].jacobian, offsets[im], total);
        let jr = crate::kinematics::embed_jacobian(&kin[ir].jacobian, offsets[ir], total);
        if let Some((row, lower)) = collision_constraint(&kin[im].pose.position, &kin[ir].pose.position, &jm, &jr, cp)?
        {
            qp.push_inequality(&row, lower);
        }
    }
    Ok(qp)
}

/// Joint state and current targets of every robot.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub q: Vec<DVector<f64>>,
    /// Current Cartesian target of each robot (recovery: the drop position).
    pub targets: Vec<Vector3<f64>>,
    /// Robots whose joints are held still (bounds pinned to zero).
    pub frozen: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct IkStep {
    /// Joint velocity per robot.
    pub qdot: Vec<DVector<f64>>,
    pub status: QpStatus,
    /// Priority per manufacturing robot (in `Roles::manufacturing` order).
    pub priorities: Vec<Priority>,
    /// Weight per robot.
    pub weights: Vec<f64>,
    /// Distance of each manufacturing end-effector to its own target.
    pub target_distances: Vec<f64>,
    /// End-effector distance of each (manufacturing, recovery) pair.
    pub pair_distances: Vec<f64>,
    pub active_constraints: usize,
}

/// One IK context per trial: owns the warm-started solver.
#[derive(Debug, Clone)]
pub struct IkContext {
    pub collision: CollisionParams,
    pub priority: PriorityConfig,
    pub policy: PriorityPolicy,
    /// When false no damper rows are emitted (reference runs).
    pub collisions_enabled: bool,
    pub infeasible_events: usize,
    pub max_iter_events: usize,
    /// ADMM iterations summed over all solves.
    pub qp_iterations: usize,
    pub qp_solves: usize,
    solver: QpSolver,
}

impl IkContext {
    pub fn new(collision: CollisionParams, priority: PriorityConfig) -> Self {
        IkContext {
            collision,
            priority,
            policy: PriorityPolicy::Thresholds,
            collisions_enabled: true,
            infeasible_events: 0,
            max_iter_events: 0,
            qp_iterations: 0,
            qp_solves: 0,
            solver: QpSolver::new(QpSettings::default()),
        }
    }

    pub fn with_policy(mut self, policy: PriorityPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn solver_settings_mut(&mut self) -> &mut QpSettings {
        &mut self.solver.settings
    }

    fn priorities(&self, distances: &[f64]) -> Result<Vec<Priority>> {
        match self.policy {
            PriorityPolicy::AlwaysRecovery => Ok(vec![Priority::Recovery; distances.len()]),
            PriorityPolicy::AlwaysManufacturing => Ok(vec![Priority::Manufacturing; distances.len()]),
            PriorityPolicy::Thresholds => {
                if self.priority.thresholds.len() != distances.len() {
                    return Err(Error::Dimension {
                        expected: distances.len(),
                        actual: self.priority.thresholds.len(),
                        context: "priority thresholds",
                    });
                }
                Ok(distances
                    .iter()
                    .zip(&self.priority.thresholds)
                    .map(|(&l, &lb)| priority_value(l, lb))
                    .collect())
            }
        }
    }

    /// Priorities → weights → QP → joint velocities, from a precomputed
    /// kinematic snapshot.
    pub fn step_with(
        &mut self,
        models: &[RobotModel],
        roles: &Roles,
        kin: &[RobotKinematics],
        state: &WorldState,
        commands: &[TaskCommand],
    ) -> Result<IkStep> {
        let r = roles.recovery;
        let p_r = kin[r].pose.position;
        let target_distances: Vec<f64> = roles
            .manufacturing
            .iter()
            .map(|&m| (kin[m].pose.position - state.targets[m]).norm())
            .collect();
        let pair_distances: Vec<f64> = roles
            .manufacturing
            .iter()
            .map(|&m| (kin[m].pose.position - p_r).norm())
            .collect();
        let priorities = self.priorities(&target_distances)?;
        let active_pair = pair_distances
            .iter()
            .enumerate()
            .filter(|(_, &d)| d < self.collision.d_i)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k);
        let w = priority_weights(&priorities, &self.priority, active_pair);
        let mut weights = vec![0.0; models.len()];
        weights[r] = w.recovery;
        for (k, &m) in roles.manufacturing.iter().enumerate() {
            weights[m] = w.manufacturing[k];
        }
        let pairs: Vec<(usize, usize)> = if self.collisions_enabled {
            roles.manufacturing.iter().map(|&m| (m, r)).collect()
        } else {
            Vec::new()
        };
        let mut qp = assemble_ik_qp(
            models,
            kin,
            commands,
            &weights,
            self.priority.epsilon,
            &self.collision,
            &pairs,
        )?;
        let (offsets, _) = stack_offsets(models);
        for (i, m) in models.iter().enumerate() {
            if state.frozen.get(i).copied().unwrap_or(false) {
                for k in 0..m.dof() {
                    qp.lb[offsets[i] + k] = 0.0;
                    qp.ub[offsets[i] + k] = 0.0;
                }
            }
        }
        let active_constraints = qp.n_ineq();
        let sol = self.solver.solve(&qp)?;
        self.qp_iterations += sol.iterations;
        self.qp_solves += 1;
        let x = match sol.status {
            QpStatus::Infeasible => {
                self.infeasible_events += 1;
                log::warn!("IK QP infeasible; holding all joints");
                DVector::zeros(qp.dim())
            }
            QpStatus::MaxIter => {
                self.max_iter_events += 1;
                log::warn!(
                    "IK QP hit the iteration limit (primal {:.2e}, dual {:.2e})",
                    sol.primal_residual,
                    sol.dual_residual
                );
                sol.x
            }
            QpStatus::Optimal => sol.x,
        };
        let qdot = models
            .iter()
            .enumerate()
            .map(|(i, m)| x.rows(offsets[i], m.dof()).into_owned())
            .collect();
        Ok(IkStep {
            qdot,
            status: sol.status,
            priorities,
            weights,
            target_distances,
            pair_distances,
            active_constraints,
        })
    }

    /// Full tick from joint state: kinematics, priorities, QP.
    pub fn step_ik(
        &mut self,
        models: &[RobotModel],
        roles: &Roles,
        state: &WorldState,
        commands: &[TaskCommand],
    ) -> Result<IkStep> {
        let kin = robot_kinematics(models, &state.q)?;
        self.step_with(models, roles, &kin, state, commands)
    }
}
