//! Serial-chain forward kinematics and geometric Jacobians.
//!
//! A chain is a list of revolute joints. Each joint carries a fixed origin
//! transform (applied before the joint rotation, URDF style) and a rotation
//! axis in its own frame. The end-effector sits at a fixed tool offset from
//! the last joint frame.

use std::path::Path;

use nalgebra::{DVector, Isometry3, Matrix6xX, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// World-frame position and axis of one joint.
type JointFrame = (Vector3<f64>, Vector3<f64>);

pub const ROBOT_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub axis: Unit<Vector3<f64>>,
    pub origin: Isometry3<f64>,
}

/// Kinematic description of one manipulator placed in the world.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub base: Isometry3<f64>,
    pub joints: Vec<Joint>,
    pub tool: Isometry3<f64>,
    pub qdot_min: Vec<f64>,
    pub qdot_max: Vec<f64>,
}

/// End-effector pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Pose {
            position: iso.translation.vector,
            orientation: iso.rotation,
        }
    }
}

/// Joint angles (or rates) of one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVector {
    pub robot_index: usize,
    pub values: DVector<f64>,
}

impl JointVector {
    pub fn new(robot_index: usize, values: impl Into<Vec<f64>>) -> Self {
        JointVector {
            robot_index,
            values: DVector::from_vec(values.into()),
        }
    }

    pub fn zeros(robot_index: usize, n: usize) -> Self {
        JointVector {
            robot_index,
            values: DVector::zeros(n),
        }
    }
}

impl RobotModel {
    pub fn new(
        name: impl Into<String>,
        base: Isometry3<f64>,
        joints: Vec<Joint>,
        tool: Isometry3<f64>,
        qdot_min: Vec<f64>,
        qdot_max: Vec<f64>,
    ) -> Result<Self> {
        let model = RobotModel {
            name: name.into(),
            base,
            joints,
            tool,
            qdot_min,
            qdot_max,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        if n == 0 {
            return Err(Error::Config(format!("robot `{}` has no joints", self.name)));
        }
        if self.qdot_min.len() != n || self.qdot_max.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: self.qdot_min.len().min(self.qdot_max.len()),
                context: "joint velocity limits",
            });
        }
        for (j, joint) in self.joints.iter().enumerate() {
            if (joint.axis.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("joint {j} axis is not a unit vector")));
            }
            if !(self.qdot_min[j] < self.qdot_max[j]) {
                return Err(Error::Config(format!(
                    "joint {j} velocity limits are not ordered: {} >= {}",
                    self.qdot_min[j], self.qdot_max[j]
                )));
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// The default seven-joint arm: alternating Z/Y axes, 0.2 m between
    /// consecutive joints and from the last joint to the tool point.
    pub fn generic7(name: impl Into<String>, base: Isometry3<f64>) -> Self {
        const LINK: f64 = 0.2;
        const QDOT_LIMIT: f64 = 2.0;
        let joints = (0..7)
            .map(|j| Joint {
                axis: if j % 2 == 0 {
                    Vector3::z_axis()
                } else {
                    Vector3::y_axis()
                },
                origin: Isometry3::translation(0.0, 0.0, LINK),
            })
            .collect();
        RobotModel {
            name: name.into(),
            base,
            joints,
            tool: Isometry3::translation(0.0, 0.0, LINK),
            qdot_min: vec![-QDOT_LIMIT; 7],
            qdot_max: vec![QDOT_LIMIT; 7],
        }
    }

    fn check_q(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::Dimension {
                expected: self.dof(),
                actual: q.len(),
                context: "joint vector",
            });
        }
        Ok(())
    }

    /// World-frame joint positions and axes plus the end-effector transform.
    fn frames(&self, q: &[f64]) -> (Vec<JointFrame>, Isometry3<f64>) {
        let mut frame = self.base;
        let mut out = Vec::with_capacity(self.joints.len());
        for (joint, &angle) in self.joints.iter().zip(q) {
            frame *= joint.origin;
            out.push((frame.translation.vector, frame.rotation * joint.axis.into_inner()));
            frame *= UnitQuaternion::from_axis_angle(&joint.axis, angle);
        }
        (out, frame * self.tool)
    }
}

pub fn forward_kinematics(model: &RobotModel, q: &[f64]) -> Result<Pose> {
    model.check_q(q)?;
    Ok(Pose::from_isometry(&model.frames(q).1))
}

/// 6×n Jacobian, translational rows first. Column j is `(z_j × (p_ee − p_j), z_j)`.
pub fn geometric_jacobian(model: &RobotModel, q: &[f64]) -> Result<Matrix6xX<f64>> {
    model.check_q(q)?;
    Ok(jacobian_unchecked(model, q).1)
}

/// Pose and Jacobian in one pass.
pub fn pose_and_jacobian(model: &RobotModel, q: &[f64]) -> Result<(Pose, Matrix6xX<f64>)> {
    model.check_q(q)?;
    Ok(jacobian_unchecked(model, q))
}

fn jacobian_unchecked(model: &RobotModel, q: &[f64]) -> (Pose, Matrix6xX<f64>) {
    let (frames, ee) = model.frames(q);
    let p_ee = ee.translation.vector;
    let mut jac = Matrix6xX::zeros(frames.len());
    for (j, (p, z)) in frames.iter().enumerate() {
        let lin = z.cross(&(p_ee - p));
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(z);
    }
    (Pose::from_isometry(&ee), jac)
}

/// Column offsets of each robot inside the stacked joint vector, plus the total.
pub fn stack_offsets(models: &[RobotModel]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(models.len());
    let mut total = 0;
    for m in models {
        offsets.push(total);
        total += m.dof();
    }
    (offsets, total)
}

/// Embed a single robot's 6×n_i Jacobian in a 6×Σn zero matrix.
pub fn embed_jacobian(jac: &Matrix6xX<f64>, offset: usize, total: usize) -> Matrix6xX<f64> {
    let mut out = Matrix6xX::zeros(total);
    out.columns_mut(offset, jac.ncols()).copy_from(jac);
    out
}

/// The sparse 6×Σn Jacobian of robot `i` acting on the stacked joint vector.
pub fn augmented_jacobian(models: &[RobotModel], q_all: &[f64], i: usize) -> Result<Matrix6xX<f64>> {
    if i >= models.len() {
        return Err(Error::Argument(format!(
            "robot index {i} out of range for {} robots",
            models.len()
        )));
    }
    let (offsets, total) = stack_offsets(models);
    if q_all.len() != total {
        return Err(Error::Dimension {
            expected: total,
            actual: q_all.len(),
            context: "stacked joint vector",
        });
    }
    let n = models[i].dof();
    let jac = geometric_jacobian(&models[i], &q_all[offsets[i]..offsets[i] + n])?;
    Ok(embed_jacobian(&jac, offsets[i], total))
}

/// On-disk frame: translation in meters, roll/pitch/yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FrameDescription {
    pub translation: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl FrameDescription {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [x, y, z] = self.translation;
        let [r, p, yw] = self.rpy;
        Isometry3::from_parts(Translation3::new(x, y, z), UnitQuaternion::from_euler_angles(r, p, yw))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDescription {
    pub axis: [f64; 3],
    pub origin: FrameDescription,
    pub qdot_min: f64,
    pub qdot_max: f64,
}

/// Robot description file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotDescription {
    #[serde(default = "robot_file_version")]
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub base: FrameDescription,
    pub joints: Vec<JointDescription>,
    #[serde(default)]
    pub tool: FrameDescription,
}

fn robot_file_version() -> u32 {
    ROBOT_FILE_VERSION
}

impl RobotDescription {
    pub fn generic7() -> Self {
        let joints = (0..7)
            .map(|j| JointDescription {
                axis: if j % 2 == 0 { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] },
                origin: FrameDescription {
                    translation: [0.0, 0.0, 0.2],
                    rpy: [0.0; 3],
                },
                qdot_min: -2.0,
                qdot_max: 2.0,
            })
            .collect();
        RobotDescription {
            version: ROBOT_FILE_VERSION,
            name: "generic7".into(),
            base: FrameDescription::default(),
            joints,
            tool: FrameDescription {
                translation: [0.0, 0.0, 0.2],
                rpy: [0.0; 3],
            },
        }
    }

    /// Build a model; `base` overrides the description's own base frame.
    pub fn to_model(&self, base: Option<Isometry3<f64>>) -> Result<RobotModel> {
        if self.version != ROBOT_FILE_VERSION {
            return Err(Error::field(
                "version",
                format!("unsupported robot file version {}", self.version),
            ));
        }
        let mut joints = Vec::with_capacity(self.joints.len());
        for (j, jd) in self.joints.iter().enumerate() {
            let axis = Vector3::from(jd.axis);
            let norm = axis.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
                return Err(Error::field(
                    format!("joints[{j}].axis"),
                    format!("must be a unit vector (norm {norm})"),
                ));
            }
            joints.push(Joint {
                axis: Unit::new_normalize(axis),
                origin: jd.origin.to_isometry(),
            });
        }
        RobotModel::new(
            self.name.clone(),
            base.unwrap_or_else(|| self.base.to_isometry()),
            joints,
            self.tool.to_isometry(),
            self.joints.iter().map(|j| j.qdot_min).collect(),
            self.joints.iter().map(|j| j.qdot_max).collect(),
        )
    }

    pub fn from_toml_str(s: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::parse(path, e))
    }
}
