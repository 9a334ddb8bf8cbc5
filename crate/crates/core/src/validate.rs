//! Post-hoc trajectory checks: anchor deviation, planar deviation, joint
//! limits and collisions, plus effort statistics.

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::akr::AkrModel;
use crate::collision::{CollisionModel, CollisionReport, DistanceField};
use crate::kinematics::{JointKind, KinematicsError, Pose};
use crate::planner::{ConstraintKind, ConstraintSet, Limits, Trajectory};

/// Deviation of one waypoint; entries are absent when the constraint kind
/// does not apply.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WaypointDeviation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_planar: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    Position,
    Velocity,
    Acceleration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitViolation {
    pub waypoint: usize,
    pub coordinate: usize,
    pub kind: LimitKind,
    /// Amount by which the limit is exceeded, in the limit's units.
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointHits {
    pub waypoint: usize,
    pub report: CollisionReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    IkFailed,
    OptimizerInfeasible,
    ChainViolation,
    PlanarViolation,
    LimitViolation,
    Collision,
}

impl FailureReason {
    pub const ALL: [FailureReason; 6] = [
        FailureReason::IkFailed,
        FailureReason::OptimizerInfeasible,
        FailureReason::ChainViolation,
        FailureReason::PlanarViolation,
        FailureReason::LimitViolation,
        FailureReason::Collision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::IkFailed => "ik_failed",
            FailureReason::OptimizerInfeasible => "optimizer_infeasible",
            FailureReason::ChainViolation => "chain_violation",
            FailureReason::PlanarViolation => "planar_violation",
            FailureReason::LimitViolation => "limit_violation",
            FailureReason::Collision => "collision",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail { reason: FailureReason, detail: String },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub per_waypoint: Vec<WaypointDeviation>,
    pub limit_violations: Vec<LimitViolation>,
    pub collision_hits: Vec<WaypointHits>,
    #[serde(flatten)]
    pub verdict: Verdict,
}

impl ValidationReport {
    fn pass(per_waypoint: Vec<WaypointDeviation>) -> Self {
        Self { per_waypoint, limit_violations: Vec::new(), collision_hits: Vec::new(), verdict: Verdict::Pass }
    }

    fn fail_if(mut self, cond: Option<(FailureReason, String)>) -> Self {
        if let Some((reason, detail)) = cond {
            self.verdict = Verdict::Fail { reason, detail };
        }
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EffortStats {
    pub base_translation: f64,
    pub arm_rotation: f64,
}

/// Angle between two rotations, `arccos(2⟨r, r_ref⟩² − 1)`, evaluated in the
/// equivalent form `2·atan2(|vec(q_rel)|, |w(q_rel)|)` which keeps full
/// precision near zero.
pub fn rotation_deviation(r: &UnitQuaternion<f64>, r_ref: &UnitQuaternion<f64>) -> f64 {
    let rel = r_ref.inverse() * r;
    2.0 * rel.vector().norm().atan2(rel.w.abs())
}

/// Roll and pitch of the `Rz·Ry·Rx` decomposition.
pub fn roll_pitch(r: &UnitQuaternion<f64>) -> (f64, f64) {
    let m = r.to_rotation_matrix();
    let m = m.matrix();
    (m[(2, 1)].atan2(m[(2, 2)]), (-m[(2, 0)]).clamp(-1.0, 1.0).asin())
}

fn wrap(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    a - two_pi * ((a + std::f64::consts::PI) / two_pi).floor()
}

fn anchor_poses(traj: &Trajectory, akr: &AkrModel) -> Result<Vec<Pose>, KinematicsError> {
    let id = akr.tree.link_id(&akr.object_anchor_link)?;
    traj.waypoints.iter().map(|q| akr.tree.evaluate(q).map(|s| *s.pose(id))).collect()
}

/// Anchor position and rotation deviation from the constraint reference at
/// every waypoint.
pub fn validate_chain(traj: &Trajectory, akr: &AkrModel, constraints: &ConstraintSet) -> Result<ValidationReport, KinematicsError> {
    let reference = &constraints.reference;
    let th = &constraints.thresholds;
    let mut per = Vec::with_capacity(traj.len());
    let mut fail = None;
    for (t, pose) in anchor_poses(traj, akr)?.into_iter().enumerate() {
        let d = (pose.translation - reference.translation).norm();
        let theta = rotation_deviation(&pose.rotation, &reference.rotation);
        if fail.is_none() && (d > th.d_max || theta > th.theta_max) {
            fail = Some((FailureReason::ChainViolation, format!("waypoint {t}: d = {d:.3e} m, theta = {theta:.3e} rad")));
        }
        per.push(WaypointDeviation { d: Some(d), theta: Some(theta), ..Default::default() });
    }
    Ok(ValidationReport::pass(per).fail_if(fail))
}

/// Height and roll/pitch deviation of the anchor from the reference.
pub fn validate_planar(traj: &Trajectory, akr: &AkrModel, constraints: &ConstraintSet) -> Result<ValidationReport, KinematicsError> {
    let reference = &constraints.reference;
    let th = &constraints.thresholds;
    let (r0, p0) = roll_pitch(&reference.rotation);
    let mut per = Vec::with_capacity(traj.len());
    let mut fail = None;
    for (t, pose) in anchor_poses(traj, akr)?.into_iter().enumerate() {
        let d_z = (pose.translation.z - reference.translation.z).abs();
        let (r, p) = roll_pitch(&pose.rotation);
        let theta_planar = wrap(r - r0).hypot(wrap(p - p0));
        if fail.is_none() && (d_z > th.dz_max || theta_planar > th.theta_planar_max) {
            fail = Some((
                FailureReason::PlanarViolation,
                format!("waypoint {t}: d_z = {d_z:.3e} m, theta_planar = {theta_planar:.3e} rad"),
            ));
        }
        per.push(WaypointDeviation { d_z: Some(d_z), theta_planar: Some(theta_planar), ..Default::default() });
    }
    Ok(ValidationReport::pass(per).fail_if(fail))
}

/// Position bounds at every waypoint, velocity `(x[t+1] − x[t]) / dt` at
/// index `t`, and acceleration `(x[t+1] − 2x[t] + x[t−1]) / dt²` at index `t`.
pub fn validate_limits(traj: &Trajectory, limits: &Limits) -> ValidationReport {
    let x = &traj.waypoints;
    let dt = traj.dt;
    let mut out = Vec::new();
    for (t, row) in x.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let excess = (limits.lower[c] - v).max(v - limits.upper[c]);
            if excess > 0.0 {
                out.push(LimitViolation { waypoint: t, coordinate: c, kind: LimitKind::Position, magnitude: excess });
            }
        }
    }
    for t in 0..x.len().saturating_sub(1) {
        for c in 0..x[t].len() {
            let v = ((x[t + 1][c] - x[t][c]) / dt).abs();
            if v > limits.max_velocity[c] {
                out.push(LimitViolation {
                    waypoint: t,
                    coordinate: c,
                    kind: LimitKind::Velocity,
                    magnitude: v - limits.max_velocity[c],
                });
            }
        }
    }
    for t in 1..x.len().saturating_sub(1) {
        for c in 0..x[t].len() {
            let a = ((x[t + 1][c] - 2.0 * x[t][c] + x[t - 1][c]) / (dt * dt)).abs();
            if a > limits.max_acceleration[c] {
                out.push(LimitViolation {
                    waypoint: t,
                    coordinate: c,
                    kind: LimitKind::Acceleration,
                    magnitude: a - limits.max_acceleration[c],
                });
            }
        }
    }
    out.sort_by_key(|v| (v.kind, v.waypoint, v.coordinate));
    let fail = out.first().map(|v| {
        (FailureReason::LimitViolation, format!("{:?} limit exceeded at waypoint {}, coordinate {}", v.kind, v.waypoint, v.coordinate))
    });
    ValidationReport { per_waypoint: Vec::new(), limit_violations: out, collision_hits: Vec::new(), verdict: Verdict::Pass }
        .fail_if(fail)
}

/// Collision check at every waypoint.
pub fn validate_collisions(
    traj: &Trajectory,
    akr: &AkrModel,
    field: &DistanceField,
    activation: f64,
) -> Result<ValidationReport, KinematicsError> {
    let model = CollisionModel::new(akr);
    let mut hits = Vec::new();
    for (t, q) in traj.waypoints.iter().enumerate() {
        let state = akr.tree.evaluate(q)?;
        let report = model.check(&akr.tree, &state, field, activation);
        if !report.is_free() {
            hits.push(WaypointHits { waypoint: t, report });
        }
    }
    let fail = hits.first().map(|h| {
        (FailureReason::Collision, format!("waypoint {}: penetration {:.3e} m", h.waypoint, h.report.max_penetration()))
    });
    Ok(ValidationReport { per_waypoint: Vec::new(), limit_violations: Vec::new(), collision_hits: hits, verdict: Verdict::Pass }
        .fail_if(fail))
}

/// Full check: constraint deviations, limits, then collisions. The verdict
/// carries the first failing reason in that order.
pub fn validate_trajectory(
    traj: &Trajectory,
    akr: &AkrModel,
    constraints: &ConstraintSet,
    limits: &Limits,
    field: Option<&DistanceField>,
) -> Result<ValidationReport, KinematicsError> {
    let deviation = match constraints.kind {
        ConstraintKind::StationaryAttachment => validate_chain(traj, akr, constraints)?,
        ConstraintKind::PlanarSe2 => validate_planar(traj, akr, constraints)?,
        ConstraintKind::FreeFloating => ValidationReport::pass(vec![WaypointDeviation::default(); traj.len()]),
    };
    let lim = validate_limits(traj, limits);
    let col = match field {
        Some(f) => validate_collisions(traj, akr, f, 0.0)?,
        None => ValidationReport::pass(Vec::new()),
    };
    let verdict = [&deviation.verdict, &lim.verdict, &col.verdict]
        .into_iter()
        .find(|v| !v.passed())
        .cloned()
        .unwrap_or(Verdict::Pass);
    Ok(ValidationReport {
        per_waypoint: deviation.per_waypoint,
        limit_violations: lim.limit_violations,
        collision_hits: col.collision_hits,
        verdict,
    })
}

/// Base translation `Σ ‖Δ(x, y)‖₂` and arm rotation `Σ ‖Δq_revolute‖₁`.
pub fn compute_effort_stats(traj: &Trajectory, akr: &AkrModel) -> EffortStats {
    let revolute: Vec<usize> = akr.revolute_manipulator_coords();
    let mut stats = EffortStats::default();
    for w in traj.waypoints.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        stats.base_translation += (b[0] - a[0]).hypot(b[1] - a[1]);
        stats.arm_rotation += revolute.iter().map(|&c| (b[c] - a[c]).abs()).sum::<f64>();
    }
    stats
}

/// Whether the joint at configuration index `c` of `akr` is revolute.
pub fn is_revolute(akr: &AkrModel, c: usize) -> bool {
    akr.tree.actuated_joints().nth(c).is_some_and(|j| j.kind == JointKind::Revolute)
}
