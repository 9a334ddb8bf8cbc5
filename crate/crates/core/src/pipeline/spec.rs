use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::akr::GraspSpec;
use crate::kinematics::{Pose, VirtualBaseLimits};
use crate::planner::{
    ClusterParams, SolverSettings, Thresholds, DEFAULT_ACCELERATION_LIMIT, DEFAULT_DT, DEFAULT_GOAL_TOLERANCE,
    DEFAULT_HORIZON, DEFAULT_VELOCITY_LIMIT,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    /// Robot description without the virtual base.
    pub path: PathBuf,
    #[serde(default = "default_tcp")]
    pub tcp_link: String,
    #[serde(default)]
    pub base_limits: VirtualBaseLimits,
    /// Preferred base and manipulator values; seeds every IK search.
    pub home: Vec<f64>,
    /// Weights over the full AKR configuration; all ones when absent.
    #[serde(default)]
    pub joint_weights: Option<Vec<f64>>,
}

fn default_tcp() -> String {
    "tcp".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub path: PathBuf,
    #[serde(default = "one")]
    pub scale: f64,
    /// Object state every problem starts from, in the object's joint order.
    pub initial_state: Vec<f64>,
    /// World pose of the object's base link.
    pub anchor: Pose,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSpec {
    pub horizon: usize,
    pub dt: f64,
    pub voxel_size: f64,
    pub margin: f64,
    /// Sphere pitch for object links.
    pub mesh_pitch: f64,
    pub robot_sphere_pitch: f64,
    pub sphere_downscale: f64,
    pub pair_samples: usize,
    pub max_retries: usize,
    /// Random IK seeds for start configurations, per grasp.
    pub start_samples: usize,
    /// Cap on start representatives per grasp after clustering.
    pub max_starts: Option<usize>,
    /// Random IK seeds for goal configurations, per problem.
    pub goal_seeds: usize,
    pub clustering: ClusterParams,
    pub thresholds: Thresholds,
    pub goal_tolerance: f64,
    pub velocity_limit: f64,
    pub acceleration_limit: f64,
    pub solver: SolverSettings,
    pub seed: u64,
}

impl Default for GenerationSpec {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            voxel_size: 0.02,
            margin: 0.3,
            mesh_pitch: 0.05,
            robot_sphere_pitch: 0.05,
            sphere_downscale: 0.95,
            pair_samples: 100,
            max_retries: 10,
            start_samples: 100,
            max_starts: None,
            goal_seeds: 8,
            clustering: ClusterParams::default(),
            thresholds: Thresholds::default(),
            goal_tolerance: DEFAULT_GOAL_TOLERANCE,
            velocity_limit: DEFAULT_VELOCITY_LIMIT,
            acceleration_limit: DEFAULT_ACCELERATION_LIMIT,
            solver: SolverSettings::default(),
            seed: 0,
        }
    }
}

/// One planning campaign: robot, object, scene, grasps and object goals.
/// Relative paths are resolved against `base_dir`, the spec's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub robot: RobotSpec,
    pub object: ObjectSpec,
    /// Scene manifest: a JSON list of `{mesh, pose}`.
    pub scene: PathBuf,
    pub grasps: Vec<GraspSpec>,
    /// Object target states.
    pub goals: Vec<Vec<f64>>,
    #[serde(default)]
    pub generation: GenerationSpec,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub mesh: PathBuf,
    #[serde(default)]
    pub pose: Pose,
}

impl TaskSpec {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// All defaults resolved, paths as written.
    pub fn effective_config(&self) -> String {
        serde_json::to_string_pretty(self).expect("task spec serializes")
    }

    /// SHA-256 of the effective configuration, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.effective_config().as_bytes()))
    }

    /// Range and consistency checks; errors name the offending field.
    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |field: &str, msg: String| Err(PipelineError::Spec { field: field.into(), message: msg });
        let g = &self.generation;
        let positive = [
            ("object.scale", self.object.scale),
            ("generation.dt", g.dt),
            ("generation.voxel_size", g.voxel_size),
            ("generation.mesh_pitch", g.mesh_pitch),
            ("generation.robot_sphere_pitch", g.robot_sphere_pitch),
            ("generation.sphere_downscale", g.sphere_downscale),
            ("generation.goal_tolerance", g.goal_tolerance),
            ("generation.velocity_limit", g.velocity_limit),
            ("generation.acceleration_limit", g.acceleration_limit),
            ("generation.thresholds.d_max", g.thresholds.d_max),
            ("generation.thresholds.theta_max", g.thresholds.theta_max),
            ("generation.thresholds.dz_max", g.thresholds.dz_max),
            ("generation.thresholds.theta_planar_max", g.thresholds.theta_planar_max),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(field, format!("must be positive and finite, got {v}"));
            }
        }
        if !(g.margin >= 0.0) {
            return bad("generation.margin", format!("must be non-negative, got {}", g.margin));
        }
        if g.horizon < 3 {
            return bad("generation.horizon", format!("must be at least 3, got {}", g.horizon));
        }
        if g.start_samples == 0 {
            return bad("generation.start_samples", "must be positive".into());
        }
        if g.max_starts == Some(0) {
            return bad("generation.max_starts", "must be positive".into());
        }
        if let Err(e) = g.clustering.check() {
            return bad("generation.clustering", e);
        }
        let s = &g.solver;
        if s.max_outer == 0 || s.max_inner == 0 || !(s.initial_penalty > 0.0) || !(s.penalty_growth >= 1.0) {
            return bad("generation.solver", "iteration counts and penalty must be positive, growth at least 1".into());
        }
        if self.grasps.is_empty() {
            return bad("grasps", "at least one grasp is required".into());
        }
        if self.goals.is_empty() {
            return bad("goals", "at least one goal is required".into());
        }
        if let Some((i, _)) = self.goals.iter().enumerate().find(|(_, x)| x.len() != self.object.initial_state.len()) {
            return bad(
                &format!("goals[{i}]"),
                format!("must have {} values like object.initial_state", self.object.initial_state.len()),
            );
        }
        for (field, p) in [("robot.path", &self.robot.path), ("object.path", &self.object.path), ("scene", &self.scene)] {
            if !self.resolve(p).is_file() {
                return bad(field, format!("file not found: {}", self.resolve(p).display()));
            }
        }
        Ok(())
    }
}

/// Reads, parses strictly and checks a task spec. Relative paths resolve
/// against the spec file's directory.
pub fn load_task_spec(path: &Path) -> Result<TaskSpec, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let mut spec: TaskSpec = serde_json::from_str(&text).map_err(|e| PipelineError::Spec {
        field: path.display().to_string(),
        message: e.to_string(),
    })?;
    spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    spec.check()?;
    Ok(spec)
}

pub fn load_scene(path: &Path) -> Result<Vec<SceneEntry>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Spec { field: format!("scene ({})", path.display()), message: e.to_string() })
}
