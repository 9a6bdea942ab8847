//! Scene description: robots, roles, controllers, drop prior and tuning.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};
use std::path::Path;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::ImpedanceParams;
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, FrameDescription, Pose, RobotDescription, RobotModel};
use crate::prior::{Aabb, GaussianComponent, MhConfig, PriorDistribution};
use crate::priority::{CollisionParams, PriorityConfig, Roles};

pub const SCENE_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Manufacturing,
    Recovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotEntry {
    pub name: String,
    pub role: Role,
    /// Key into [`SceneFile::chains`].
    pub chain: String,
    pub base: FrameDescription,
    /// Joint configuration at the start of every trial.
    pub home: Vec<f64>,
    pub mass: [f64; 3],
    pub stiffness: [f64; 3],
    /// Critical damping when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<[f64; 3]>,
    /// Manufacturing cycle, visited in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<[f64; 3]>,
}

/// Scene file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u32,
    pub name: String,
    /// Control period (s).
    pub dt: f64,
    /// Simulated time after which a trial counts as deadlocked (s).
    pub trial_timeout: f64,
    /// Distance at which a target counts as reached (m).
    pub reach_tol: f64,
    /// Proportional gain of the orientation hold (1/s).
    pub orientation_gain: f64,
    pub seed: u64,
    pub collision: CollisionParams,
    pub priority: PriorityConfig,
    pub mh: MhConfig,
    pub prior: PriorDistribution,
    pub chains: BTreeMap<String, RobotDescription>,
    pub robots: Vec<RobotEntry>,
}

/// A validated scene with everything the simulator needs precomputed.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub file: SceneFile,
    pub models: Vec<RobotModel>,
    pub roles: Roles,
    pub homes: Vec<DVector<f64>>,
    /// End-effector pose at home; its orientation is held during motion.
    pub home_poses: Vec<Pose>,
    pub impedance: Vec<ImpedanceParams>,
    pub waypoints: Vec<Vec<Vector3<f64>>>,
}

impl SceneConfig {
    pub fn from_file(file: SceneFile) -> Result<Self> {
        if file.version != SCENE_FILE_VERSION {
            return Err(Error::field(
                "version",
                format!(
                    "unsupported scene version {} (expected {SCENE_FILE_VERSION})",
                    file.version
                ),
            ));
        }
        if !(0.001..=0.02).contains(&file.dt) {
            return Err(Error::field("dt", format!("{} outside [0.001, 0.02]", file.dt)));
        }
        if !(file.trial_timeout > 0.0) {
            return Err(Error::field("trial_timeout", "must be positive"));
        }
        if !(file.reach_tol > 0.0) {
            return Err(Error::field("reach_tol", "must be positive"));
        }
        if !(file.orientation_gain >= 0.0) {
            return Err(Error::field("orientation_gain", "must be non-negative"));
        }
        file.collision.validate()?;
        file.priority.validate()?;
        file.mh.validate()?;
        file.prior.validate()?;

        let mut models = Vec::new();
        let mut homes = Vec::new();
        let mut home_poses = Vec::new();
        let mut impedance = Vec::new();
        let mut waypoints = Vec::new();
        let mut recovery = Vec::new();
        let mut manufacturing = Vec::new();
        for (i, r) in file.robots.iter().enumerate() {
            let at = |f: &str| format!("robots[{i}].{f}");
            let chain = file
                .chains
                .get(&r.chain)
                .ok_or_else(|| Error::field(at("chain"), format!("unknown chain `{}`", r.chain)))?;
            let mut model = chain.to_model(Some(r.base.to_isometry()))?;
            model.name = r.name.clone();
            if r.home.len() != model.dof() {
                return Err(Error::field(
                    at("home"),
                    format!("{} values for a {}-joint chain", r.home.len(), model.dof()),
                ));
            }
            let params = ImpedanceParams {
                mass: r.mass,
                damping: r
                    .damping
                    .unwrap_or_else(|| crate::control::critical_damping(r.mass, r.stiffness)),
                stiffness: r.stiffness,
            };
            params
                .validate()
                .map_err(|e| Error::field(at("impedance"), e.to_string()))?;
            match r.role {
                Role::Recovery => {
                    if !r.waypoints.is_empty() {
                        return Err(Error::field(
                            at("waypoints"),
                            "recovery robots take targets from the prior",
                        ));
                    }
                    recovery.push(i);
                }
                Role::Manufacturing => {
                    if r.waypoints.len() < 2 {
                        return Err(Error::field(
                            at("waypoints"),
                            "a manufacturing cycle needs at least 2 waypoints",
                        ));
                    }
                    manufacturing.push(i);
                }
            }
            home_poses.push(forward_kinematics(&model, &r.home)?);
            homes.push(DVector::from_column_slice(&r.home));
            impedance.push(params);
            waypoints.push(r.waypoints.iter().map(|w| Vector3::from(*w)).collect());
            models.push(model);
        }
        if recovery.len() != 1 {
            return Err(Error::field(
                "robots",
                format!("exactly one recovery robot required, found {}", recovery.len()),
            ));
        }
        if manufacturing.is_empty() {
            return Err(Error::field("robots", "at least one manufacturing robot required"));
        }
        let n_m = manufacturing.len();
        if !file.priority.thresholds.is_empty() && file.priority.thresholds.len() != n_m {
            return Err(Error::field(
                "priority.thresholds",
                format!(
                    "{} values for {n_m} manufacturing robots",
                    file.priority.thresholds.len()
                ),
            ));
        }
        Ok(SceneConfig {
            roles: Roles {
                recovery: recovery[0],
                manufacturing,
            },
            file,
            models,
            homes,
            home_poses,
            impedance,
            waypoints,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SceneFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SceneFile = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        Self::from_file(file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&self.file).expect("scene files always serialize")
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_toml_string().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn n_manufacturing(&self) -> usize {
        self.roles.manufacturing.len()
    }

    pub fn l_max(&self) -> f64 {
        self.file.priority.l_max
    }

    pub fn check_thresholds(&self, thresholds: &[f64]) -> Result<()> {
        if thresholds.len() != self.n_manufacturing() {
            return Err(Error::Dimension {
                expected: self.n_manufacturing(),
                actual: thresholds.len(),
                context: "thresholds",
            });
        }
        for (i, &t) in thresholds.iter().enumerate() {
            if !(0.0..=self.l_max()).contains(&t) {
                return Err(Error::Argument(format!(
                    "threshold {i} = {t} outside [0, {}]",
                    self.l_max()
                )));
            }
        }
        Ok(())
    }

    /// Three manufacturing robots facing the recovery robot.
    pub fn default_scene() -> Self {
        Self::from_file(builtin_file(3, CYCLE_RADIUS)).expect("built-in scene is valid")
    }

    /// One manufacturing robot facing the recovery robot.
    pub fn preliminary_scene() -> Self {
        Self::from_file(builtin_file(1, PRELIMINARY_CYCLE_RADIUS)).expect("built-in scene is valid")
    }
}

const LINK: f64 = 0.2;
/// Tool direction at home, measured from the vertical: pointing forward
/// and 45° down.
const TOOL_ANGLE: f64 = 3.0 * FRAC_PI_4;
const MANUFACTURING_POINT: [f64; 3] = [0.75, 0.0, 0.4];
const MANUFACTURING_BASE_RADIUS: f64 = 1.3;
const MANUFACTURING_REACH: f64 = 0.55;
const RECOVERY_REACH: f64 = 0.45;
const CYCLE_RADIUS: f64 = 0.15;
/// Half the sweep equals half of l_max, so the distance to the next
/// waypoint spans the whole threshold range.
const PRELIMINARY_CYCLE_RADIUS: f64 = 0.25;

/// Joint angles of the generic seven-joint arm that put its tool point at
/// `reach` in front of the base and `height` above it, with the tool
/// inclined by `tool_angle` from the vertical. Only the three pitch joints
/// move; the elbow is kept above the wrist-shoulder line.
pub fn planar_home(link: f64, reach: f64, height: f64, tool_angle: f64) -> Result<[f64; 7]> {
    let seg = 2.0 * link;
    let u = reach - seg * tool_angle.sin();
    let v = height - seg - seg * tool_angle.cos();
    let r = u.hypot(v);
    if r >= 2.0 * seg || r <= 1e-9 {
        return Err(Error::Argument(format!(
            "tool point ({reach}, {height}) is out of reach"
        )));
    }
    let phi = u.atan2(v);
    let beta = (r / (2.0 * seg)).acos();
    let (a1, a2) = (phi - beta, phi + beta);
    Ok([0.0, a1, 0.0, a2 - a1, 0.0, tool_angle - a2, 0.0])
}

fn yaw_frame(x: f64, y: f64, yaw: f64) -> FrameDescription {
    FrameDescription {
        translation: [x, y, 0.0],
        rpy: [0.0, 0.0, yaw],
    }
}

fn builtin_file(n_manufacturing: usize, cycle_radius: f64) -> SceneFile {
    let [mx, my, mz] = MANUFACTURING_POINT;
    let recovery_home = planar_home(LINK, RECOVERY_REACH, mz, TOOL_ANGLE).expect("recovery home reachable");
    let manufacturing_home =
        planar_home(LINK, MANUFACTURING_REACH, mz, TOOL_ANGLE).expect("manufacturing home reachable");
    let mut robots = vec![RobotEntry {
        name: "recovery".into(),
        role: Role::Recovery,
        chain: "generic7".into(),
        base: yaw_frame(0.0, 0.0, 0.0),
        home: recovery_home.to_vec(),
        mass: [1.0; 3],
        stiffness: [40.0, 40.0, 20.0],
        damping: None,
        waypoints: Vec::new(),
    }];
    // Bearing of each base seen from the recovery base, and its stiffness.
    let layout: &[(f64, [f64; 3])] = if n_manufacturing == 1 {
        &[(0.0, [15.0, 15.0, 5.0])]
    } else {
        &[
            (0.0, [7.5, 7.5, 2.5]),
            (PI / 6.0, [15.0, 15.0, 5.0]),
            (-PI / 6.0, [30.0, 30.0, 10.0]),
        ]
    };
    for (k, &(bearing, stiffness)) in layout.iter().enumerate() {
        let base_xy = if bearing == 0.0 {
            [mx + MANUFACTURING_REACH, my]
        } else {
            [
                MANUFACTURING_BASE_RADIUS * bearing.cos(),
                MANUFACTURING_BASE_RADIUS * bearing.sin(),
            ]
        };
        let yaw = (-base_xy[1]).atan2(-base_xy[0]);
        let center = Vector3::new(
            base_xy[0] + MANUFACTURING_REACH * yaw.cos(),
            base_xy[1] + MANUFACTURING_REACH * yaw.sin(),
            mz,
        );
        // Sweep sideways across the region in front of the base.
        let lateral = Vector3::new(-yaw.sin(), yaw.cos(), 0.0) * cycle_radius;
        let waypoints = [center + lateral, center - lateral]
            .iter()
            .map(|w| [w.x, w.y, w.z])
            .collect();
        robots.push(RobotEntry {
            name: format!("manufacturing{}", k + 1),
            role: Role::Manufacturing,
            chain: "generic7".into(),
            base: yaw_frame(base_xy[0], base_xy[1], yaw),
            home: manufacturing_home.to_vec(),
            mass: [1.0; 3],
            stiffness,
            damping: None,
            waypoints,
        });
    }
    let var = [0.05f64.powi(2), 0.05f64.powi(2), 0.01f64.powi(2)];
    let prior = PriorDistribution {
        components: [-0.2, 0.2]
            .iter()
            .map(|dy| GaussianComponent {
                weight: 0.5,
                mean: [mx, my + dy, mz],
                variance: var,
            })
            .collect(),
        workspace_bounds: Aabb {
            min: [mx - 0.15, my - 0.35, mz - 0.03],
            max: [mx + 0.15, my + 0.35, mz + 0.03],
        },
    };
    let mut chains = BTreeMap::new();
    chains.insert("generic7".to_string(), RobotDescription::generic7());
    SceneFile {
        version: SCENE_FILE_VERSION,
        name: if n_manufacturing == 1 {
            "preliminary".into()
        } else {
            "default".into()
        },
        dt: 0.005,
        trial_timeout: 60.0,
        reach_tol: 0.02,
        orientation_gain: 1.0,
        seed: 0,
        collision: CollisionParams::default(),
        priority: PriorityConfig::default(),
        mh: MhConfig::default(),
        prior,
        chains,
        robots,
    }
}

/// Tool-point position of robot `i` at its home configuration.
pub fn home_position(scene: &SceneConfig, i: usize) -> Vector3<f64> {
    scene.home_poses[i].position
}
