//! Penalty-method trajectory optimization over the stacked waypoint vector.

use std::cell::Cell;
use std::io::Write;

use log::debug;
use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ik::{descend, IkSettings};
use super::lbfgs::{minimize, LbfgsParams};
use super::{
    ConstraintKind, GoalTarget, Infeasibility, PlannerError, Residuals, Trajectory, TrajectoryProblem,
};
use crate::akr::AkrModel;
use crate::collision::{mesh_distance, CollisionModel, CollisionReport};
use crate::geometry::{Sphere, SphereSet};
use crate::kinematics::{FkState, Pose};
use crate::validate::{rotation_deviation, validate_chain, validate_limits, validate_planar};

const CHAIN_POSITION_WEIGHT: f64 = 100.0;
const COLLISION_WEIGHT: f64 = 100.0;
const GOAL_POSITION_WEIGHT: f64 = 100.0;

/// One accepted inner iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub restart: usize,
    pub outer: usize,
    pub iteration: usize,
    /// Smoothness objective J.
    pub objective: f64,
    /// J plus the weighted penalty; non-increasing within one outer iteration.
    pub penalized: f64,
    /// Largest raw constraint residual at the accepted iterate.
    pub max_violation: f64,
}

impl TraceRow {
    pub fn write_csv<W: Write>(rows: &[TraceRow], mut w: W) -> std::io::Result<()> {
        writeln!(w, "restart,outer,iteration,objective,penalized,max_violation")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{:e},{:e},{:e}",
                r.restart, r.outer, r.iteration, r.objective, r.penalized, r.max_violation
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub trajectory: Trajectory,
    /// Smoothness objective of the returned trajectory.
    pub cost: f64,
    pub residuals: Residuals,
    pub restart: usize,
    pub trace: Vec<TraceRow>,
}

/// `Σ‖W_v (x[t+1] − x[t])‖² + Σ‖W_a (x[t+1] − 2x[t] + x[t−1])‖²`.
pub fn objective(waypoints: &[Vec<f64>], w_v: &[f64], w_a: &[f64]) -> f64 {
    let mut j = 0.0;
    for t in 0..waypoints.len().saturating_sub(1) {
        for c in 0..w_v.len() {
            j += (w_v[c] * (waypoints[t + 1][c] - waypoints[t][c])).powi(2);
        }
    }
    for t in 1..waypoints.len().saturating_sub(1) {
        for c in 0..w_a.len() {
            j += (w_a[c] * (waypoints[t + 1][c] - 2.0 * waypoints[t][c] + waypoints[t - 1][c])).powi(2);
        }
    }
    j
}

/// Sphere-carrying links and pairs that take part in the penalty.
struct Geometry {
    model: CollisionModel,
    local: Vec<Option<(SphereSet, Sphere)>>,
}

impl Geometry {
    fn new(akr: &AkrModel, object_attached: bool) -> Self {
        let mut model = CollisionModel::new(akr);
        if !object_attached {
            let names = akr.tree.links();
            model.world_links.retain(|&l| !akr.is_object_link(&names[l].name));
            model.pairs.retain(|(a, b, _)| !akr.is_object_link(&names[*a].name) && !akr.is_object_link(&names[*b].name));
        }
        let local = akr
            .tree
            .links()
            .iter()
            .map(|l| {
                let s = l.spheres.as_ref().filter(|s| !s.is_empty())?;
                Some((s.clone(), s.bounding_sphere()?))
            })
            .collect();
        Self { model, local }
    }

    fn spheres(&self, link: usize, pose: &Pose) -> SphereSet {
        self.local[link].as_ref().expect("sphere link").0.transformed(pose)
    }
}

/// Which entries of the `T × w` waypoint matrix are optimization variables.
struct Layout {
    t: usize,
    w: usize,
    /// Variable index of each entry, or `None` for fixed entries.
    var: Vec<Option<usize>>,
    n: usize,
}

impl Layout {
    fn new(problem: &TrajectoryProblem) -> Self {
        let (t, w) = (problem.horizon, problem.width());
        let mut fixed = vec![false; t * w];
        fixed[..w].iter_mut().for_each(|f| *f = true);
        for row in 0..t {
            for &c in &problem.frozen {
                fixed[row * w + c] = true;
            }
        }
        let last = (t - 1) * w;
        match &problem.goal.target {
            GoalTarget::Configuration { .. } => fixed[last..].iter_mut().for_each(|f| *f = true),
            GoalTarget::ObjectJointTarget { .. } => {
                for c in problem.akr.layout.object.clone() {
                    fixed[last + c] = true;
                }
            }
            GoalTarget::ObjectSe3Pose { .. } => {}
        }
        let mut n = 0;
        let var = fixed
            .iter()
            .map(|&f| {
                (!f).then(|| {
                    n += 1;
                    n - 1
                })
            })
            .collect();
        Self { t, w, var, n }
    }

    fn pack(&self, x: &[Vec<f64>]) -> Vec<f64> {
        let mut z = vec![0.0; self.n];
        for (i, v) in self.var.iter().enumerate() {
            if let Some(k) = v {
                z[*k] = x[i / self.w][i % self.w];
            }
        }
        z
    }

    fn unpack(&self, z: &[f64], x: &mut [Vec<f64>]) {
        for (i, v) in self.var.iter().enumerate() {
            if let Some(k) = v {
                x[i / self.w][i % self.w] = z[*k];
            }
        }
    }

    fn row_has_vars(&self, t: usize) -> bool {
        self.var[t * self.w..(t + 1) * self.w].iter().any(Option::is_some)
    }
}

/// Penalty value, gradient contributions and raw residuals.
struct Evaluator<'a> {
    problem: &'a TrajectoryProblem,
    geometry: Geometry,
    anchor: usize,
    activation: f64,
}

struct Terms {
    objective: f64,
    penalty: f64,
    max_violation: f64,
}

impl<'a> Evaluator<'a> {
    fn new(problem: &'a TrajectoryProblem) -> Result<Self, PlannerError> {
        let anchor = problem.akr.tree.link_id(&problem.akr.object_anchor_link)?;
        Ok(Self {
            problem,
            geometry: Geometry::new(&problem.akr, problem.object_attached),
            anchor,
            activation: problem.settings.activation,
        })
    }

    /// Evaluates `J + mu·P` for the full matrix `x`; `gj` and `gp` receive the
    /// gradients of `J` and `P`.
    fn evaluate(&self, x: &[Vec<f64>], layout: &Layout, gj: &mut [Vec<f64>], gp: &mut [Vec<f64>]) -> Terms {
        let p = self.problem;
        let (t_len, w) = (layout.t, layout.w);
        for g in gj.iter_mut().chain(gp.iter_mut()) {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut objective = 0.0;
        for t in 0..t_len - 1 {
            for c in 0..w {
                let d = x[t + 1][c] - x[t][c];
                let wv2 = p.w_v[c] * p.w_v[c];
                objective += wv2 * d * d;
                gj[t + 1][c] += 2.0 * wv2 * d;
                gj[t][c] -= 2.0 * wv2 * d;
            }
        }
        for t in 1..t_len - 1 {
            for c in 0..w {
                let d = x[t + 1][c] - 2.0 * x[t][c] + x[t - 1][c];
                let wa2 = p.w_a[c] * p.w_a[c];
                objective += wa2 * d * d;
                gj[t + 1][c] += 2.0 * wa2 * d;
                gj[t][c] -= 4.0 * wa2 * d;
                gj[t - 1][c] += 2.0 * wa2 * d;
            }
        }
        let mut penalty = 0.0;
        let mut max_violation: f64 = 0.0;
        penalty += self.limit_terms(x, gp, &mut max_violation);
        for t in 1..t_len {
            if !layout.row_has_vars(t) {
                continue;
            }
            let state = p.akr.tree.evaluate(&x[t]).expect("dimension checked");
            penalty += self.waypoint_terms(&state, t == t_len - 1, &mut gp[t], &mut max_violation);
        }
        Terms { objective, penalty, max_violation }
    }

    fn limit_terms(&self, x: &[Vec<f64>], gp: &mut [Vec<f64>], max_violation: &mut f64) -> f64 {
        let p = self.problem;
        let l = &p.limits;
        let margin = p.settings.limit_margin;
        let mut total = 0.0;
        let mut hinge = |excess: f64, scale: f64, total: &mut f64| -> f64 {
            if excess <= 0.0 {
                return 0.0;
            }
            *max_violation = max_violation.max(excess);
            let e = excess / scale;
            *total += e * e;
            2.0 * e / scale
        };
        for t in 1..x.len() {
            for c in 0..x[t].len() {
                let v = x[t][c];
                let below = hinge(l.lower[c] - v, 1.0, &mut total);
                let above = hinge(v - l.upper[c], 1.0, &mut total);
                gp[t][c] += above - below;
            }
        }
        for t in 0..x.len() - 1 {
            for c in 0..x[t].len() {
                let bound = l.max_velocity[c] * p.dt * margin;
                let d = x[t + 1][c] - x[t][c];
                let g = hinge(d.abs() - bound, bound, &mut total) * d.signum();
                gp[t + 1][c] += g;
                gp[t][c] -= g;
            }
        }
        for t in 1..x.len() - 1 {
            for c in 0..x[t].len() {
                let bound = l.max_acceleration[c] * p.dt * p.dt * margin;
                let d = x[t + 1][c] - 2.0 * x[t][c] + x[t - 1][c];
                let g = hinge(d.abs() - bound, bound, &mut total) * d.signum();
                gp[t + 1][c] += g;
                gp[t][c] -= 2.0 * g;
                gp[t - 1][c] += g;
            }
        }
        total
    }

    fn waypoint_terms(&self, state: &FkState, last: bool, g: &mut [f64], max_violation: &mut f64) -> f64 {
        let p = self.problem;
        let tree = &p.akr.tree;
        let pose = state.pose(self.anchor);
        let reference = &p.constraints.reference;
        let mut total = 0.0;
        let frame_grad = |lin: Vector3<f64>, ang: Vector3<f64>, g: &mut [f64]| {
            tree.for_each_frame_column(state, self.anchor, |c, jl, ja| g[c] += jl.dot(&lin) + ja.dot(&ang));
        };
        match p.constraints.kind {
            ConstraintKind::StationaryAttachment => {
                let (v, lin, ang, d, theta) = pose_penalty(pose, reference, CHAIN_POSITION_WEIGHT);
                total += v;
                *max_violation = max_violation.max(d).max(theta);
                frame_grad(lin, ang, g);
            }
            ConstraintKind::PlanarSe2 => {
                let dz = pose.translation.z - reference.translation.z;
                let gz = pose.rotation.inverse() * Vector3::z();
                let gz_ref = reference.rotation.inverse() * Vector3::z();
                let dg = gz - gz_ref;
                total += CHAIN_POSITION_WEIGHT * dz * dz + dg.norm_squared();
                *max_violation = max_violation.max(dz.abs()).max(dg.norm());
                let lin = Vector3::new(0.0, 0.0, 2.0 * CHAIN_POSITION_WEIGHT * dz);
                let ang = 2.0 * (pose.rotation * dg).cross(&Vector3::z());
                frame_grad(lin, ang, g);
            }
            ConstraintKind::FreeFloating => {}
        }
        if last {
            if let GoalTarget::ObjectSe3Pose { target } = &p.goal.target {
                let (v, lin, ang, _, _) = pose_penalty(pose, target, GOAL_POSITION_WEIGHT);
                total += v;
                *max_violation = max_violation.max(goal_residual(pose, target).sqrt());
                frame_grad(lin, ang, g);
            }
        }
        total + self.collision_terms(state, g, max_violation)
    }

    fn collision_terms(&self, state: &FkState, g: &mut [f64], max_violation: &mut f64) -> f64 {
        let tree = &self.problem.akr.tree;
        let field = &self.problem.field;
        let act = self.activation;
        let model = &self.geometry.model;
        let mut total = 0.0;
        let mut push = |link: usize, point: &Vector3<f64>, pen: f64, dir: Vector3<f64>, g: &mut [f64]| {
            total += COLLISION_WEIGHT * pen * pen;
            *max_violation = max_violation.max(pen);
            let gc = dir * (2.0 * COLLISION_WEIGHT * pen);
            tree.for_each_point_column(state, link, point, |c, v| g[c] += v.dot(&gc));
        };
        for &l in &model.world_links {
            for s in &self.geometry.spheres(l, state.pose(l)).spheres {
                let (d, grad) = field.distance_and_gradient(&s.center);
                let pen = s.radius + act - d;
                if pen > 0.0 {
                    push(l, &s.center, pen, -grad, g);
                }
            }
        }
        let obstacles = field.exact_obstacles();
        if !obstacles.is_empty() {
            let boxes: Vec<_> = obstacles.iter().map(|m| m.aabb()).collect();
            for &l in &model.exact_links {
                for s in &self.geometry.spheres(l, state.pose(l)).spheres {
                    for (m, bb) in obstacles.iter().zip(&boxes) {
                        if !bb.expanded(s.radius + act).contains(&s.center) {
                            continue;
                        }
                        let (d, q) = mesh_distance(&s.center, m);
                        let pen = s.radius + act - d;
                        if pen > 0.0 {
                            let diff = s.center - q;
                            let n = diff.norm();
                            if n > 0.0 {
                                push(l, &s.center, pen, -diff * (d.signum() / n), g);
                            }
                        }
                    }
                }
            }
        }
        for (a, b, _) in &model.pairs {
            let (pa, pb) = (state.pose(*a), state.pose(*b));
            let ba = self.geometry.local[*a].as_ref().expect("sphere link").1;
            let bb = self.geometry.local[*b].as_ref().expect("sphere link").1;
            let gap = (pa.transform_point(&ba.center) - pb.transform_point(&bb.center)).norm();
            if gap >= ba.radius + bb.radius + act {
                continue;
            }
            let (sa, sb) = (self.geometry.spheres(*a, pa), self.geometry.spheres(*b, pb));
            for x in &sa.spheres {
                for y in &sb.spheres {
                    let diff = x.center - y.center;
                    let dist = diff.norm();
                    let pen = x.radius + y.radius + act - dist;
                    if pen > 0.0 && dist > 0.0 {
                        let u = diff / dist;
                        push(*a, &x.center, pen, -u, g);
                        push(*b, &y.center, pen, u, g);
                    }
                }
            }
        }
        total
    }

    fn collision_report(&self, q: &[f64]) -> CollisionReport {
        let state = self.problem.akr.tree.evaluate(q).expect("dimension checked");
        self.geometry.model.check(&self.problem.akr.tree, &state, &self.problem.field, 0.0)
    }
}

/// `w‖Δp‖² + 4(1 − c²)` with `c` the scalar part of `q_ref⁻¹ q`, plus its
/// linear and angular gradients in the world frame, `d` and `θ`.
fn pose_penalty(pose: &Pose, reference: &Pose, w: f64) -> (f64, Vector3<f64>, Vector3<f64>, f64, f64) {
    let ep = pose.translation - reference.translation;
    let rel: UnitQuaternion<f64> = reference.rotation.inverse() * pose.rotation;
    let c = rel.w;
    let value = w * ep.norm_squared() + 4.0 * (1.0 - c * c);
    let lin = ep * (2.0 * w);
    let ang = reference.rotation * rel.vector().into_owned() * (4.0 * c);
    let theta = rotation_deviation(&pose.rotation, &reference.rotation);
    (value, lin, ang, ep.norm(), theta)
}

/// Squared goal residual `‖Δp‖² + θ²`.
fn goal_residual(pose: &Pose, target: &Pose) -> f64 {
    (pose.translation - target.translation).norm_squared() + rotation_deviation(&pose.rotation, &target.rotation).powi(2)
}

fn weighted_distance(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| (w * (x - y)).powi(2)).sum()
}

/// Minimizes the smoothness objective subject to the chain, goal, limit and
/// collision constraints. Returns the first iterate that passes the
/// feasibility check, clamped into the position limits.
pub fn optimize_trajectory(problem: &TrajectoryProblem) -> Result<OptimizeResult, PlannerError> {
    problem.check()?;
    let layout = Layout::new(problem);
    let eval = Evaluator::new(problem)?;
    let settings = &problem.settings;
    let (t_len, w) = (layout.t, layout.w);

    let mut candidates: Vec<&Vec<f64>> = problem.goal_candidates.iter().collect();
    candidates.sort_by(|a, b| {
        weighted_distance(a, &problem.start, &problem.w_v).total_cmp(&weighted_distance(b, &problem.start, &problem.w_v))
    });

    let mut trace = Vec::new();
    let mut best: Option<(f64, Trajectory, Residuals)> = None;
    for restart in 0..=settings.restarts {
        let mut goal = candidates[restart % candidates.len()].clone();
        match &problem.goal.target {
            GoalTarget::Configuration { target } => goal.clone_from(target),
            GoalTarget::ObjectJointTarget { target } => {
                for (c, v) in problem.akr.layout.object.clone().zip(target) {
                    goal[c] = *v;
                }
            }
            GoalTarget::ObjectSe3Pose { .. } => {}
        }
        for &c in &problem.frozen {
            goal[c] = problem.start[c];
        }
        let mut x: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                let s = t as f64 / (t_len - 1) as f64;
                problem.start.iter().zip(&goal).map(|(a, b)| a + s * (b - a)).collect()
            })
            .collect();
        let tracking = restart == 1 && problem.constraints.kind == ConstraintKind::StationaryAttachment;
        if tracking {
            track_anchor(problem, &mut x)?;
        } else if restart > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(problem.seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let normal = Normal::new(0.0, settings.restart_noise).expect("finite deviation");
            let amp: Vec<f64> = (0..w).map(|_| normal.sample(&mut rng)).collect();
            for (t, row) in x.iter_mut().enumerate() {
                let s = (std::f64::consts::PI * t as f64 / (t_len - 1) as f64).sin();
                for c in 0..w {
                    if layout.var[t * w + c].is_some() {
                        row[c] += s * amp[c];
                    }
                }
            }
        }
        for row in x.iter_mut().skip(1) {
            problem.limits.clamp(row);
        }
        let mut z = layout.pack(&x);
        let mut mu = settings.initial_penalty;
        for outer in 0..settings.max_outer {
            let mut scratch = x.clone();
            let mut gj = vec![vec![0.0; w]; t_len];
            let mut gp = vec![vec![0.0; w]; t_len];
            let last = Cell::new((0.0, 0.0));
            let f = |zv: &[f64], grad: &mut [f64]| {
                layout.unpack(zv, &mut scratch);
                let terms = eval.evaluate(&scratch, &layout, &mut gj, &mut gp);
                for (i, v) in layout.var.iter().enumerate() {
                    if let Some(k) = v {
                        let (t, c) = (i / w, i % w);
                        grad[*k] = gj[t][c] + mu * gp[t][c];
                    }
                }
                last.set((terms.objective, terms.max_violation));
                terms.objective + mu * terms.penalty
            };
            let params = LbfgsParams {
                max_iterations: settings.max_inner,
                gradient_tolerance: settings.gradient_tolerance,
                ..Default::default()
            };
            let result = minimize(f, z, &params, |iteration, value| {
                let (objective, max_violation) = last.get();
                trace.push(TraceRow { restart, outer, iteration, objective, penalized: value, max_violation });
            });
            z = result.x;
            layout.unpack(&z, &mut x);
            let mut clamped = x.clone();
            for row in clamped.iter_mut() {
                problem.limits.clamp(row);
            }
            let traj = Trajectory { waypoints: clamped, dt: problem.dt };
            let (feasible, residuals, score) = feasibility(problem, &eval, &traj)?;
            debug!("restart {restart} outer {outer}: score {score:.3e}, {residuals:?}");
            if feasible {
                let cost = objective(&traj.waypoints, &problem.w_v, &problem.w_a);
                return Ok(OptimizeResult { trajectory: traj, cost, residuals, restart, trace });
            }
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, traj, residuals));
            }
            mu *= settings.penalty_growth;
        }
    }
    let (_, traj, residuals) = best.expect("at least one outer iteration");
    Err(PlannerError::Infeasible(Box::new(Infeasibility { best: Some(traj), residuals })))
}

/// Replaces the robot coordinates of an interpolated guess by following the
/// anchor reference with IK, each waypoint seeded from the previous one.
fn track_anchor(problem: &TrajectoryProblem, x: &mut [Vec<f64>]) -> Result<(), PlannerError> {
    let akr = &problem.akr;
    let anchor = akr.tree.link_id(&akr.object_anchor_link)?;
    let free: Vec<usize> = (0..problem.width())
        .filter(|c| !akr.layout.object.contains(c) && !problem.frozen.contains(c))
        .collect();
    let settings = IkSettings::default();
    for t in 1..x.len() {
        let mut q = x[t - 1].clone();
        for c in akr.layout.object.clone() {
            q[c] = x[t][c];
        }
        x[t] = descend(akr, anchor, &problem.constraints.reference, q, &free, &problem.limits, &settings)?;
    }
    Ok(())
}

/// Checks a clamped trajectory with the validation metrics. Chain and planar
/// deviations must stay within `feasibility_margin` of the thresholds.
fn feasibility(problem: &TrajectoryProblem, eval: &Evaluator, traj: &Trajectory) -> Result<(bool, Residuals, f64), PlannerError> {
    let th = &problem.constraints.thresholds;
    let m = problem.settings.feasibility_margin;
    let mut r = Residuals::default();
    let mut score = 0.0;
    match problem.constraints.kind {
        ConstraintKind::StationaryAttachment => {
            let rep = validate_chain(traj, &problem.akr, &problem.constraints)?;
            r.chain_position = rep.per_waypoint.iter().filter_map(|w| w.d).fold(0.0, f64::max);
            r.chain_rotation = rep.per_waypoint.iter().filter_map(|w| w.theta).fold(0.0, f64::max);
            score += (r.chain_position / (m * th.d_max) - 1.0).max(0.0) + (r.chain_rotation / (m * th.theta_max) - 1.0).max(0.0);
        }
        ConstraintKind::PlanarSe2 => {
            let rep = validate_planar(traj, &problem.akr, &problem.constraints)?;
            r.planar_height = rep.per_waypoint.iter().filter_map(|w| w.d_z).fold(0.0, f64::max);
            r.planar_tilt = rep.per_waypoint.iter().filter_map(|w| w.theta_planar).fold(0.0, f64::max);
            score += (r.planar_height / (m * th.dz_max) - 1.0).max(0.0)
                + (r.planar_tilt / (m * th.theta_planar_max) - 1.0).max(0.0);
        }
        ConstraintKind::FreeFloating => {}
    }
    r.limit_violation = validate_limits(traj, &problem.limits).limit_violations.iter().map(|v| v.magnitude).fold(0.0, f64::max);
    score += r.limit_violation;
    if let GoalTarget::ObjectSe3Pose { target } = &problem.goal.target {
        let pose = problem.akr.tree.forward_kinematics(traj.last(), &problem.akr.object_anchor_link)?;
        r.goal = goal_residual(&pose, target);
        score += (r.goal / problem.goal.tolerance - 1.0).max(0.0);
    }
    r.collision_penetration = traj.waypoints.iter().map(|q| eval.collision_report(q).max_penetration()).fold(0.0, f64::max);
    score += r.collision_penetration * 100.0;
    Ok((score == 0.0, r, score))
}
