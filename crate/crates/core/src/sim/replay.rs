//! Scripted two-robot interaction: the manufacturing robot descends onto
//! its target while the recovery robot sweeps sideways through its path
//! twice, once while the manufacturing robot is still far from its target
//! and once after it has come within the threshold.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priority::{priority_value, IkContext, Priority};

use super::scene::SceneConfig;
use super::trial::Simulation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    /// Priority threshold l̄ of the manufacturing robot (m).
    pub threshold: f64,
    /// Height the manufacturing robot descends through (m).
    pub descent: f64,
    /// Vertical stiffness of the manufacturing robot.
    pub stiffness_z: f64,
    /// Recovery sweep speed along y (m/s).
    pub sweep_speed: f64,
    /// Half-width of the sweep (m).
    pub sweep_half_width: f64,
    /// Offset of the sweep line from the manufacturing path along x (m).
    pub offset: f64,
    /// Time spent at rest after the second sweep (s).
    pub settle_time: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            threshold: 0.15,
            descent: 0.3,
            stiffness_z: 1.5,
            sweep_speed: 0.28,
            sweep_half_width: 0.3,
            offset: 0.1,
            settle_time: 8.0,
        }
    }
}

/// One stretch of time with the pair inside the influence distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start: f64,
    pub end: f64,
    /// Priority output for the manufacturing robot when the episode began.
    pub priority: Priority,
    /// Largest gap between the prioritized robot and its collision-free
    /// counterfactual over the episode (m).
    pub prioritized_error: f64,
    /// Same for the yielding robot.
    pub yielding_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub episodes: Vec<Episode>,
    pub min_pair_distance: f64,
    /// Final distance of each robot (recovery, manufacturing) to its target.
    pub final_errors: [f64; 2],
    /// Distance of each robot (recovery, manufacturing) to its collision-free
    /// counterfactual, every tick from the end of the last episode onward.
    pub resume_deviation: Vec<[f64; 2]>,
    pub time: Vec<f64>,
    pub recovery: Vec<[f64; 3]>,
    pub manufacturing: Vec<[f64; 3]>,
}

/// Scripted recovery reference: start at one end of the sweep, go across,
/// come back, then rest.
struct Script {
    cfg: ReplayConfig,
    x: f64,
    z_target: f64,
}

impl Script {
    fn sweep_duration(&self) -> f64 {
        2.0 * self.cfg.sweep_half_width / self.cfg.sweep_speed
    }

    fn total(&self) -> f64 {
        2.0 * self.sweep_duration() + self.cfg.settle_time
    }

    /// Nominal manufacturing height: critically damped descent at unit mass.
    fn nominal_height(&self, t: f64) -> f64 {
        let w = self.cfg.stiffness_z.sqrt();
        self.z_target + self.cfg.descent * (1.0 + w * t) * (-w * t).exp()
    }

    fn reference(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let (h, v, d) = (self.cfg.sweep_half_width, self.cfg.sweep_speed, self.sweep_duration());
        let (y, vy) = if t < d {
            (-h + v * t, v)
        } else if t < 2.0 * d {
            (h - v * (t - d), -v)
        } else {
            (-h, 0.0)
        };
        let w = self.cfg.stiffness_z.sqrt();
        let z = self.nominal_height(t);
        let vz = -self.cfg.descent * w * w * t * (-w * t).exp();
        (Vector3::new(self.x, y, z), Vector3::new(0.0, vy, vz))
    }
}

/// Run the scenario on a one-manufacturing-robot scene.
pub fn run_replay(base: &SceneConfig, cfg: &ReplayConfig) -> Result<ReplayReport> {
    if base.n_manufacturing() != 1 {
        return Err(Error::Argument(
            "the replay needs exactly one manufacturing robot".into(),
        ));
    }
    let m = base.roles.manufacturing[0];
    let r = base.roles.recovery;
    let mut file = base.file.clone();
    file.robots[m].stiffness[2] = cfg.stiffness_z;
    file.robots[m].damping = None;
    let scene = SceneConfig::from_file(file)?;

    let start = scene.home_poses[m].position;
    let target = start - Vector3::new(0.0, 0.0, cfg.descent);
    let script = Script {
        cfg: *cfg,
        x: start.x - cfg.offset,
        z_target: target.z,
    };

    let mut priority = scene.file.priority.clone();
    priority.thresholds = vec![cfg.threshold];
    let ik = IkContext::new(scene.file.collision, priority);
    let mut sim = Simulation::new(&scene, ik)?;
    sim.set_target(m, target, Vector3::zeros());
    let (p0, v0) = script.reference(0.0);
    sim.set_target(r, p0, v0);

    let dt = scene.file.dt;
    let d_i = scene.file.collision.d_i;
    let n_ticks = (script.total() / dt).round() as usize;
    let mut report = ReplayReport {
        episodes: Vec::new(),
        min_pair_distance: f64::INFINITY,
        final_errors: [0.0; 2],
        resume_deviation: Vec::new(),
        time: Vec::with_capacity(n_ticks + 1),
        recovery: Vec::with_capacity(n_ticks + 1),
        manufacturing: Vec::with_capacity(n_ticks + 1),
    };
    // (fork, start tick, end tick, priority)
    let mut forks: Vec<(Simulation<'_>, usize, Option<usize>, Priority)> = Vec::new();
    let mut inside = false;
    for tick in 0..=n_ticks {
        let t = tick as f64 * dt;
        let (p, v) = script.reference(t);
        sim.set_target(r, p, v);
        let (pr, pm) = (sim.position(r), sim.position(m));
        let d = (pr - pm).norm();
        report.min_pair_distance = report.min_pair_distance.min(d);
        report.time.push(t);
        report.recovery.push([pr.x, pr.y, pr.z]);
        report.manufacturing.push([pm.x, pm.y, pm.z]);
        if d < d_i && !inside {
            let priority = priority_value((pm - target).norm(), cfg.threshold);
            let mut fork = sim.clone();
            fork.ik.collisions_enabled = false;
            forks.push((fork, tick, None, priority));
        } else if d >= d_i && inside {
            if let Some(last) = forks.last_mut() {
                last.2 = Some(tick);
            }
        }
        inside = d < d_i;
        if tick < n_ticks {
            sim.step()?;
        }
    }
    report.final_errors = [
        (sim.position(r) - sim.target(r)).norm(),
        (sim.position(m) - target).norm(),
    ];

    let n_forks = forks.len();
    for (k, (mut fork, start, end, priority)) in forks.into_iter().enumerate() {
        let end = end.unwrap_or(n_ticks);
        let last = k + 1 == n_forks;
        let horizon = if last { n_ticks } else { end };
        let (mut err_r, mut err_m) = (0.0f64, 0.0f64);
        for tick in start..=horizon {
            if tick > start {
                let (p, v) = script.reference((tick - 1) as f64 * dt);
                fork.set_target(r, p, v);
                fork.step()?;
            }
            let dr = (fork.position(r) - Vector3::from(report.recovery[tick])).norm();
            let dm = (fork.position(m) - Vector3::from(report.manufacturing[tick])).norm();
            if tick <= end {
                err_r = err_r.max(dr);
                err_m = err_m.max(dm);
            } else {
                report.resume_deviation.push([dr, dm]);
            }
        }
        let (prioritized_error, yielding_deviation) = match priority {
            Priority::Recovery => (err_r, err_m),
            Priority::Manufacturing => (err_m, err_r),
        };
        report.episodes.push(Episode {
            start: start as f64 * dt,
            end: end as f64 * dt,
            priority,
            prioritized_error,
            yielding_deviation,
        });
    }
    Ok(report)
}

/// True when `series` never rises after its peak by more than `slack` and
/// ends at or below `tol`.
pub fn settles(series: &[f64], tol: f64, slack: f64) -> bool {
    let Some(peak) = series
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
    else {
        return true;
    };
    series[peak..].windows(2).all(|w| w[1] <= w[0] + slack) && series.last().is_some_and(|&v| v <= tol)
}
