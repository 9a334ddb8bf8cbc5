//! Single-grasp task planning and two-grasp plans joined by a robot
//! reconfiguration at an intermediate object state.

use std::sync::Arc;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ik::{solve_ik, IkRequest, IkSettings};
use super::optimize::{optimize_trajectory, OptimizeResult};
use super::{
    ConstraintSet, GoalSpec, GoalTarget, IkSolution, Limits, PlannerError, SolverSettings, Thresholds, Trajectory,
    TrajectoryProblem,
    DEFAULT_ACCELERATION_LIMIT, DEFAULT_DT, DEFAULT_HORIZON, DEFAULT_VELOCITY_LIMIT,
};
use crate::akr::{assemble_akr, scale_object_model, AkrModel, AkrOptions, GraspSpec};
use crate::collision::{mask_phase, DistanceField, Phase};
use crate::geometry::Mesh;
use crate::kinematics::{KinematicTree, Pose};

/// Everything needed to plan an articulated-object task with a set of
/// candidate grasps.
#[derive(Clone, Debug)]
pub struct GraspSwitchTask {
    /// Robot with the virtual base already inserted.
    pub robot: KinematicTree,
    /// Unscaled object model.
    pub object: KinematicTree,
    pub scale: f64,
    pub options: AkrOptions,
    /// Static scene; the object is not part of it.
    pub field: Arc<DistanceField>,
    /// World pose of the object's base link.
    pub anchor_pose: Pose,
    /// Object states in the object's configuration order.
    pub phi_start: Vec<f64>,
    pub phi_goal: Vec<f64>,
    pub grasps: Vec<GraspSpec>,
    /// Preferred robot configuration (base and manipulator); seeds IK.
    pub home: Vec<f64>,
    pub mid_samples: usize,
    pub ik: IkSettings,
    /// Random IK seeds per goal-candidate search, in addition to the start.
    pub goal_seeds: usize,
    pub horizon: usize,
    pub dt: f64,
    pub max_velocity: f64,
    pub max_acceleration: f64,
    pub settings: SolverSettings,
    pub thresholds: Thresholds,
    pub seed: u64,
}

impl GraspSwitchTask {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        robot: KinematicTree,
        object: KinematicTree,
        options: AkrOptions,
        field: Arc<DistanceField>,
        anchor_pose: Pose,
        phi_start: Vec<f64>,
        phi_goal: Vec<f64>,
        grasps: Vec<GraspSpec>,
        home: Vec<f64>,
    ) -> Self {
        Self {
            robot,
            object,
            scale: 1.0,
            options,
            field,
            anchor_pose,
            phi_start,
            phi_goal,
            grasps,
            home,
            mid_samples: 5,
            ik: IkSettings::default(),
            goal_seeds: 8,
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            max_velocity: DEFAULT_VELOCITY_LIMIT,
            max_acceleration: DEFAULT_ACCELERATION_LIMIT,
            settings: SolverSettings::default(),
            thresholds: Thresholds::default(),
            seed: 0,
        }
    }

    pub fn assemble(&self, grasp: usize) -> Result<AkrModel, PlannerError> {
        let g = self
            .grasps
            .get(grasp)
            .ok_or_else(|| PlannerError::InvalidProblem(format!("grasp index {grasp} out of range")))?;
        Ok(assemble_akr(&self.robot, &self.object, g, self.scale, &self.options)?)
    }

    pub fn limits(&self, akr: &AkrModel) -> Limits {
        Limits::from_tree(&akr.tree, self.max_velocity, self.max_acceleration)
    }

    pub fn constraints(&self) -> ConstraintSet {
        ConstraintSet { thresholds: self.thresholds, ..ConstraintSet::stationary(self.anchor_pose) }
    }

    /// `robot` (base and manipulator values) with the object block set to `phi`.
    pub fn with_object(&self, akr: &AkrModel, robot: &[f64], phi: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; akr.dof()];
        q[..robot.len()].copy_from_slice(robot);
        akr.embed_object_state(&self.object, phi, &mut q);
        q
    }

    /// Robot configurations holding the object at `phi` with the anchor in
    /// place, seeded from `first` and `extra` random draws.
    pub fn ik_solutions(
        &self,
        akr: &AkrModel,
        phi: &[f64],
        first: &[f64],
        extra: usize,
        salt: u64,
    ) -> Result<Vec<IkSolution>, PlannerError> {
        let limits = self.limits(akr);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x2545_F491_4F6C_DD1D));
        let robot_dims = akr.layout.object.start;
        let mut seeds = vec![self.with_object(akr, &first[..robot_dims], phi)];
        for _ in 0..extra {
            let r: Vec<f64> = (0..robot_dims).map(|c| rng.random_range(limits.lower[c]..=limits.upper[c])).collect();
            seeds.push(self.with_object(akr, &r, phi));
        }
        let request = IkRequest::robot_only(akr, &akr.object_anchor_link, self.anchor_pose, seeds);
        let settings = IkSettings { seed: self.seed ^ salt, ..self.ik.clone() };
        solve_ik(akr, &request, &limits, Some(&self.field), &settings)
    }

    fn ik_at(&self, akr: &AkrModel, phi: &[f64], first: &[f64], extra: usize, salt: u64) -> Result<Vec<Vec<f64>>, PlannerError> {
        Ok(self.ik_solutions(akr, phi, first, extra, salt)?.into_iter().map(|s| s.config).collect())
    }

    fn nearest(&self, akr: &AkrModel, solutions: Vec<Vec<f64>>, to: &[f64]) -> Option<Vec<f64>> {
        let d = |q: &[f64]| -> f64 { to.iter().zip(q).zip(&akr.joint_weights).map(|((a, b), w)| (w * (a - b)).powi(2)).sum() };
        let mut best: Option<(f64, Vec<f64>)> = None;
        for q in solutions {
            let v = d(&q);
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, q));
            }
        }
        best.map(|b| b.1)
    }

    /// Start configuration for grasp `akr` at `phi`, nearest to `home`.
    pub fn start_configuration(&self, akr: &AkrModel, phi: &[f64], salt: u64) -> Result<Vec<f64>, PlannerError> {
        let sols = self.ik_at(akr, phi, &self.home, self.ik.max_retries, salt)?;
        self.nearest(akr, sols, &self.with_object(akr, &self.home, phi))
            .ok_or_else(|| PlannerError::IkFailed(format!("no start configuration at object state {phi:?}")))
    }

    /// Plans one manipulation segment from `start` to object state `phi_b`.
    pub fn plan_segment(
        &self,
        akr: Arc<AkrModel>,
        start: Vec<f64>,
        phi_b: &[f64],
        salt: u64,
    ) -> Result<OptimizeResult, PlannerError> {
        let candidates = self.ik_at(&akr, phi_b, &start, self.goal_seeds, salt.wrapping_add(1))?;
        if candidates.is_empty() {
            return Err(PlannerError::IkFailed(format!("no goal configuration at object state {phi_b:?}")));
        }
        let target = self.with_object(&akr, &vec![0.0; akr.layout.object.start], phi_b)[akr.layout.object.clone()].to_vec();
        let mut problem = TrajectoryProblem::new(
            akr.clone(),
            self.field.clone(),
            start,
            GoalSpec::new(GoalTarget::ObjectJointTarget { target }),
            candidates,
            self.constraints(),
        );
        self.configure(&mut problem, &akr, salt);
        optimize_trajectory(&problem)
    }

    fn configure(&self, problem: &mut TrajectoryProblem, akr: &AkrModel, salt: u64) {
        problem.limits = self.limits(akr);
        problem.horizon = self.horizon;
        problem.dt = self.dt;
        problem.settings = self.settings.clone();
        problem.seed = self.seed ^ salt;
    }

    /// Plans the whole task with grasp `grasp` alone.
    pub fn plan_single(&self, grasp: usize, phi_goal: &[f64]) -> Result<OptimizeResult, PlannerError> {
        let akr = Arc::new(self.assemble(grasp)?);
        let start = self.start_configuration(&akr, &self.phi_start, grasp as u64)?;
        self.plan_segment(akr, start, phi_goal, grasp as u64 * 7919)
    }

    /// World-frame mesh of the scaled object at state `phi`.
    pub fn object_mesh(&self, phi: &[f64]) -> Result<Mesh, PlannerError> {
        let scaled = scale_object_model(&self.object, self.scale)?;
        let state = scaled.evaluate(phi)?;
        let parts: Vec<Mesh> = scaled
            .links()
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.mesh.as_ref().map(|m| m.transformed(&self.anchor_pose.compose(state.pose(i)))))
            .collect();
        Ok(Mesh::merge(parts.iter()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Manipulation,
    /// Robot-only motion with the object released and held still.
    Reconfiguration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchSegment {
    pub trajectory: Trajectory,
    pub grasp_index: usize,
    pub grasp: GraspSpec,
    pub kind: SegmentKind,
    pub joint_names: Vec<String>,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchPlan {
    pub segments: Vec<SwitchSegment>,
    pub total_cost: f64,
    pub final_object_state: Vec<f64>,
}

fn segment(task: &GraspSwitchTask, akr: &AkrModel, g: usize, kind: SegmentKind, r: OptimizeResult) -> SwitchSegment {
    SwitchSegment {
        trajectory: r.trajectory,
        grasp_index: g,
        grasp: task.grasps[g].clone(),
        kind,
        joint_names: akr.tree.joint_names(),
        cost: r.cost,
    }
}

/// Plans the task with one grasp if any grasp succeeds alone (lowest index
/// first). Otherwise tries evenly spaced intermediate states `φ_mid`; at each,
/// every ordered grasp pair plans `φ_0 → φ_mid` with the first grasp, a robot
/// reconfiguration with the object released at `φ_mid`, and `φ_mid → φ_T`
/// with the second. The cheapest feasible pair at the first `φ_mid` that has
/// one is returned.
pub fn plan_grasp_switch(task: &GraspSwitchTask) -> Result<SwitchPlan, PlannerError> {
    if task.grasps.len() < 2 || task.mid_samples == 0 {
        return Err(PlannerError::InvalidProblem("grasp switching needs at least two grasps and one mid sample".into()));
    }
    let akrs: Vec<Arc<AkrModel>> = (0..task.grasps.len()).map(|g| task.assemble(g).map(Arc::new)).collect::<Result<_, _>>()?;
    let starts: Vec<Option<Vec<f64>>> =
        akrs.iter().enumerate().map(|(g, akr)| task.start_configuration(akr, &task.phi_start, g as u64).ok()).collect();

    for (g, akr) in akrs.iter().enumerate() {
        let Some(start) = starts[g].clone() else { continue };
        if let Ok(r) = task.plan_segment(akr.clone(), start, &task.phi_goal, g as u64 * 7919) {
            let cost = r.cost;
            return Ok(SwitchPlan {
                segments: vec![segment(task, akr, g, SegmentKind::Manipulation, r)],
                total_cost: cost,
                final_object_state: task.phi_goal.clone(),
            });
        }
    }

    let k = task.mid_samples;
    for s in 1..=k {
        let f = s as f64 / (k + 1) as f64;
        let phi_mid: Vec<f64> = task.phi_start.iter().zip(&task.phi_goal).map(|(a, b)| a + f * (b - a)).collect();
        let salt = 1000 * s as u64;
        let first: Vec<Option<OptimizeResult>> = akrs
            .iter()
            .enumerate()
            .map(|(g, akr)| {
                let start = starts[g].clone()?;
                task.plan_segment(akr.clone(), start, &phi_mid, salt + g as u64)
                    .inspect_err(|e| debug!("grasp {g}: first segment to {phi_mid:?} failed: {e}"))
                    .ok()
            })
            .collect();
        let second_start: Vec<Option<Vec<f64>>> = akrs
            .iter()
            .enumerate()
            .map(|(g, akr)| {
                task.start_configuration(akr, &phi_mid, salt + 100 + g as u64)
                    .inspect_err(|e| debug!("grasp {g}: no start at {phi_mid:?}: {e}"))
                    .ok()
            })
            .collect();
        let second: Vec<Option<OptimizeResult>> = akrs
            .iter()
            .enumerate()
            .map(|(g, akr)| {
                let start = second_start[g].clone()?;
                task.plan_segment(akr.clone(), start, &task.phi_goal, salt + 200 + g as u64)
                    .inspect_err(|e| debug!("grasp {g}: second segment from {phi_mid:?} failed: {e}"))
                    .ok()
            })
            .collect();
        let released = Arc::new(mask_phase(&task.field, &task.object_mesh(&phi_mid)?, &Pose::identity(), Phase::Approach));
        let mut best: Option<SwitchPlan> = None;
        for g1 in 0..akrs.len() {
            let Some(seg1) = &first[g1] else { continue };
            for g2 in (0..akrs.len()).filter(|&g2| g2 != g1) {
                let (Some(seg2), Some(start2)) = (&second[g2], &second_start[g2]) else { continue };
                let reconf = reconfigure(task, &akrs[g1], &released, seg1.trajectory.last(), start2, salt + 300);
                let Ok(reconf) = reconf.inspect_err(|e| debug!("grasps {g1} -> {g2}: reconfiguration failed: {e}")) else {
                    continue;
                };
                let total = seg1.cost + reconf.cost + seg2.cost;
                if best.as_ref().is_none_or(|b| total < b.total_cost) {
                    best = Some(SwitchPlan {
                        segments: vec![
                            segment(task, &akrs[g1], g1, SegmentKind::Manipulation, seg1.clone()),
                            segment(task, &akrs[g1], g1, SegmentKind::Reconfiguration, reconf),
                            segment(task, &akrs[g2], g2, SegmentKind::Manipulation, seg2.clone()),
                        ],
                        total_cost: total,
                        final_object_state: task.phi_goal.clone(),
                    });
                }
            }
        }
        if let Some(plan) = best {
            return Ok(plan);
        }
    }
    Err(PlannerError::Infeasible(Box::new(super::Infeasibility { best: None, residuals: Default::default() })))
}

/// Robot-only motion in `akr`'s layout from `from` to the robot part of
/// `to`, with the object coordinates frozen and object links ignored; the
/// released object is an exact obstacle in `field`.
fn reconfigure(
    task: &GraspSwitchTask,
    akr: &Arc<AkrModel>,
    field: &Arc<DistanceField>,
    from: &[f64],
    to: &[f64],
    salt: u64,
) -> Result<OptimizeResult, PlannerError> {
    let robot = akr.layout.object.start;
    let mut target = from.to_vec();
    target[..robot].copy_from_slice(&to[..robot]);
    let mut problem = TrajectoryProblem::new(
        akr.clone(),
        field.clone(),
        from.to_vec(),
        GoalSpec::new(GoalTarget::Configuration { target: target.clone() }),
        vec![target],
        ConstraintSet::free(),
    );
    task.configure(&mut problem, akr, salt);
    problem.frozen = akr.layout.object.clone().collect();
    problem.object_attached = false;
    optimize_trajectory(&problem)
}
