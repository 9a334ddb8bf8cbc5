//! IK, clustering of IK solutions, whole-body trajectory optimization and
//! grasp switching.

mod cluster;
mod ik;
mod lbfgs;
mod optimize;
mod switch;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::akr::AkrModel;
use crate::collision::DistanceField;
use crate::kinematics::{KinematicTree, KinematicsError, Pose};

pub use cluster::{affinity_propagation, cluster_ik, kmeans, ClusterParams};
pub use ik::{solve_ik, IkRequest, IkSettings};
pub use lbfgs::{minimize, LbfgsParams, LbfgsResult};
pub use optimize::{objective, optimize_trajectory, OptimizeResult, TraceRow};
pub use switch::{plan_grasp_switch, GraspSwitchTask, SegmentKind, SwitchPlan, SwitchSegment};

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_HORIZON: usize = 30;
pub const DEFAULT_GOAL_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_VELOCITY_LIMIT: f64 = 0.5;
pub const DEFAULT_ACCELERATION_LIMIT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GoalTarget {
    /// Object joint values, in the object's configuration order.
    ObjectJointTarget { target: Vec<f64> },
    /// World pose of the object anchor link.
    ObjectSe3Pose { target: Pose },
    /// A full configuration; used for object-frozen robot reconfiguration.
    Configuration { target: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    pub target: GoalTarget,
    #[serde(default = "default_goal_tolerance")]
    pub tolerance: f64,
}

fn default_goal_tolerance() -> f64 {
    DEFAULT_GOAL_TOLERANCE
}

impl GoalSpec {
    pub fn new(target: GoalTarget) -> Self {
        Self { target, tolerance: DEFAULT_GOAL_TOLERANCE }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    StationaryAttachment,
    PlanarSe2,
    FreeFloating,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub d_max: f64,
    pub theta_max: f64,
    pub dz_max: f64,
    pub theta_planar_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { d_max: 0.01, theta_max: 0.01, dz_max: 0.01, theta_planar_max: 0.01 }
    }
}

/// Constraint on the object anchor link over the whole trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSet {
    pub kind: ConstraintKind,
    pub reference: Pose,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl ConstraintSet {
    pub fn stationary(reference: Pose) -> Self {
        Self { kind: ConstraintKind::StationaryAttachment, reference, thresholds: Thresholds::default() }
    }

    pub fn free() -> Self {
        Self { kind: ConstraintKind::FreeFloating, reference: Pose::identity(), thresholds: Thresholds::default() }
    }
}

/// Per-coordinate position bounds, velocity limits (per second) and
/// acceleration limits (per second squared).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub max_velocity: Vec<f64>,
    pub max_acceleration: Vec<f64>,
}

impl Limits {
    /// Position bounds and velocity limits from the tree; missing velocity
    /// limits and all acceleration limits take the given defaults.
    pub fn from_tree(tree: &KinematicTree, velocity: f64, acceleration: f64) -> Self {
        let joints: Vec<_> = tree.actuated_joints().collect();
        Self {
            lower: joints.iter().map(|j| j.limits.lower).collect(),
            upper: joints.iter().map(|j| j.limits.upper).collect(),
            max_velocity: joints.iter().map(|j| j.limits.velocity.unwrap_or(velocity)).collect(),
            max_acceleration: vec![acceleration; joints.len()],
        }
    }

    pub fn width(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        q.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (v, (lo, hi)) in q.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Vec<f64>>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn width(&self) -> usize {
        self.waypoints.first().map_or(0, Vec::len)
    }

    pub fn last(&self) -> &[f64] {
        self.waypoints.last().expect("trajectory is not empty")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub config: Vec<f64>,
    pub position_residual: f64,
    pub rotation_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub max_outer: usize,
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub restarts: usize,
    /// Safety distance added to sphere radii in the collision penalty.
    pub activation: f64,
    /// Fraction of each validation threshold the optimizer aims for.
    pub feasibility_margin: f64,
    /// Fraction of the velocity and acceleration limits used as penalty
    /// thresholds.
    pub limit_margin: f64,
    pub gradient_tolerance: f64,
    /// Standard deviation of the smooth perturbation applied on restarts.
    pub restart_noise: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_outer: 6,
            max_inner: 250,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            restarts: 3,
            activation: 0.02,
            feasibility_margin: 0.5,
            limit_margin: 0.95,
            gradient_tolerance: 1e-9,
            restart_noise: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryProblem {
    pub akr: Arc<AkrModel>,
    pub field: Arc<DistanceField>,
    pub start: Vec<f64>,
    pub goal: GoalSpec,
    /// Goal configurations from IK; the one nearest to `start` seeds the
    /// initial guess.
    pub goal_candidates: Vec<Vec<f64>>,
    pub constraints: ConstraintSet,
    pub limits: Limits,
    pub horizon: usize,
    pub dt: f64,
    pub w_v: Vec<f64>,
    pub w_a: Vec<f64>,
    pub seed: u64,
    pub settings: SolverSettings,
    /// Coordinates held at their start value on every waypoint.
    pub frozen: Vec<usize>,
    /// When false, object links are ignored by collision checks (the object
    /// is released and sits in the scene).
    pub object_attached: bool,
}

impl TrajectoryProblem {
    /// Problem with default horizon, step, unit weights and settings.
    pub fn new(
        akr: Arc<AkrModel>,
        field: Arc<DistanceField>,
        start: Vec<f64>,
        goal: GoalSpec,
        goal_candidates: Vec<Vec<f64>>,
        constraints: ConstraintSet,
    ) -> Self {
        let limits = Limits::from_tree(&akr.tree, DEFAULT_VELOCITY_LIMIT, DEFAULT_ACCELERATION_LIMIT);
        let w = akr.dof();
        Self {
            w_v: akr.joint_weights.clone(),
            w_a: vec![1.0; w],
            akr,
            field,
            start,
            goal,
            goal_candidates,
            constraints,
            limits,
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            seed: 0,
            settings: SolverSettings::default(),
            frozen: Vec::new(),
            object_attached: true,
        }
    }

    pub fn width(&self) -> usize {
        self.akr.dof()
    }

    pub fn check(&self) -> Result<(), PlannerError> {
        let w = self.width();
        let bad = |m: String| Err(PlannerError::InvalidProblem(m));
        if self.horizon < 3 {
            return bad(format!("horizon must be at least 3, got {}", self.horizon));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.start.len() != w {
            return bad(format!("start has {} values, expected {w}", self.start.len()));
        }
        for (name, v) in [("w_v", &self.w_v), ("w_a", &self.w_a)] {
            if v.len() != w {
                return bad(format!("{name} has {} values, expected {w}", v.len()));
            }
        }
        let l = &self.limits;
        if [l.lower.len(), l.upper.len(), l.max_velocity.len(), l.max_acceleration.len()].iter().any(|&n| n != w) {
            return bad(format!("limits must have {w} entries per kind"));
        }
        if !l.contains(&self.start) {
            return bad("start lies outside the position limits".into());
        }
        if !(self.goal.tolerance > 0.0) {
            return bad(format!("goal tolerance must be positive, got {}", self.goal.tolerance));
        }
        match &self.goal.target {
            GoalTarget::ObjectJointTarget { target } if target.len() != self.akr.layout.object.len() => {
                return bad(format!("object target has {} values, expected {}", target.len(), self.akr.layout.object.len()))
            }
            GoalTarget::Configuration { target } if target.len() != w => {
                return bad(format!("configuration target has {} values, expected {w}", target.len()))
            }
            _ => {}
        }
        if self.goal_candidates.is_empty() {
            return bad("no goal configuration candidates".into());
        }
        if self.goal_candidates.iter().any(|c| c.len() != w) {
            return bad(format!("goal candidates must have {w} values"));
        }
        if self.frozen.iter().any(|&c| c >= w) {
            return bad("frozen coordinate out of range".into());
        }
        Ok(())
    }
}

/// Largest constraint residuals of a trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub chain_position: f64,
    pub chain_rotation: f64,
    pub planar_height: f64,
    pub planar_tilt: f64,
    pub goal: f64,
    pub limit_violation: f64,
    pub collision_penetration: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Infeasibility {
    pub best: Option<Trajectory>,
    pub residuals: Residuals,
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("no IK solution: {0}")]
    IkFailed(String),
    #[error("optimizer did not reach feasibility (best residuals {:?})", .0.residuals)]
    Infeasible(Box<Infeasibility>),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Akr(#[from] crate::akr::AkrError),
}
