//! Damped least-squares inverse kinematics over the free coordinates of an
//! AKR configuration.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{IkSolution, Limits, PlannerError};
use crate::akr::AkrModel;
use crate::collision::{CollisionModel, DistanceField};
use crate::kinematics::Pose;
use crate::validate::rotation_deviation;

#[derive(Clone, Debug, PartialEq)]
pub struct IkSettings {
    /// Random restarts per seed after the seed itself fails.
    pub max_retries: usize,
    pub position_tolerance: f64,
    pub rotation_tolerance: f64,
    pub max_iterations: usize,
    pub damping: f64,
    /// Largest joint step per iteration.
    pub max_step: f64,
    /// Residual below which iteration stops early.
    pub convergence: f64,
    pub seed: u64,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self {
            max_retries: 10,
            position_tolerance: 0.01,
            rotation_tolerance: 0.01,
            max_iterations: 200,
            damping: 1e-3,
            max_step: 0.3,
            convergence: 1e-10,
            seed: 0,
        }
    }
}

/// Target for one link. Coordinates with `free[c] == false` keep their seed
/// value; random restarts sample free coordinates uniformly within limits.
#[derive(Clone, Debug)]
pub struct IkRequest {
    pub link: String,
    pub target: Pose,
    pub seeds: Vec<Vec<f64>>,
    pub free: Vec<bool>,
}

impl IkRequest {
    /// Request that moves base and manipulator and holds the object
    /// coordinates at their seed values.
    pub fn robot_only(akr: &AkrModel, link: &str, target: Pose, seeds: Vec<Vec<f64>>) -> Self {
        let free = (0..akr.dof()).map(|c| !akr.layout.object.contains(&c)).collect();
        Self { link: link.into(), target, seeds, free }
    }
}

fn residual(target: &Pose, pose: &Pose) -> Vector6<f64> {
    let dp = target.translation - pose.translation;
    let dr = (target.rotation * pose.rotation.inverse()).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Runs damped least squares from every seed, falling back to up to
/// `max_retries` random restarts per seed. Returns at most one solution per
/// seed; each one is within the tolerances, within `limits`, and, when a
/// field is given, collision-free.
pub fn solve_ik(
    akr: &AkrModel,
    request: &IkRequest,
    limits: &Limits,
    field: Option<&DistanceField>,
    settings: &IkSettings,
) -> Result<Vec<IkSolution>, PlannerError> {
    let link = akr.tree.link_id(&request.link)?;
    let w = akr.dof();
    if request.free.len() != w || limits.width() != w {
        return Err(PlannerError::InvalidProblem(format!("IK request must cover {w} coordinates")));
    }
    if !(settings.position_tolerance > 0.0 && settings.rotation_tolerance > 0.0) {
        return Err(PlannerError::InvalidProblem("IK tolerances must be positive".into()));
    }
    let model = field.map(|_| CollisionModel::new(akr));
    let free: Vec<usize> = (0..w).filter(|&c| request.free[c]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut out = Vec::new();
    for seed in &request.seeds {
        if seed.len() != w {
            return Err(PlannerError::InvalidProblem(format!("IK seed has {} values, expected {w}", seed.len())));
        }
        for attempt in 0..=settings.max_retries {
            let mut q = seed.clone();
            if attempt > 0 {
                for &c in &free {
                    q[c] = rng.random_range(limits.lower[c]..=limits.upper[c]);
                }
            }
            limits.clamp(&mut q);
            let q = descend(akr, link, &request.target, q, &free, limits, settings)?;
            let state = akr.tree.evaluate(&q)?;
            let pose = state.pose(link);
            let position_residual = (pose.translation - request.target.translation).norm();
            let rotation_residual = rotation_deviation(&pose.rotation, &request.target.rotation);
            if position_residual > settings.position_tolerance || rotation_residual > settings.rotation_tolerance {
                continue;
            }
            if let (Some(f), Some(m)) = (field, &model) {
                if !m.check(&akr.tree, &state, f, 0.0).is_free() {
                    continue;
                }
            }
            out.push(IkSolution { config: q, position_residual, rotation_residual });
            break;
        }
    }
    Ok(out)
}

pub(super) fn descend(
    akr: &AkrModel,
    link: usize,
    target: &Pose,
    mut q: Vec<f64>,
    free: &[usize],
    limits: &Limits,
    settings: &IkSettings,
) -> Result<Vec<f64>, PlannerError> {
    let lambda2 = settings.damping * settings.damping;
    for _ in 0..settings.max_iterations {
        let state = akr.tree.evaluate(&q)?;
        let e = residual(target, state.pose(link));
        if e.norm() < settings.convergence {
            break;
        }
        let mut jac = DMatrix::zeros(6, free.len());
        let col_of: Vec<Option<usize>> = {
            let mut v = vec![None; q.len()];
            free.iter().enumerate().for_each(|(k, &c)| v[c] = Some(k));
            v
        };
        akr.tree.for_each_frame_column(&state, link, |c, lin, ang: Vector3<f64>| {
            if let Some(k) = col_of[c] {
                jac.fixed_view_mut::<3, 1>(0, k).copy_from(&lin);
                jac.fixed_view_mut::<3, 1>(3, k).copy_from(&ang);
            }
        });
        let jjt: Matrix6<f64> = (&jac * jac.transpose()).fixed_view::<6, 6>(0, 0).into_owned() + Matrix6::identity() * lambda2;
        let Some(y) = jjt.cholesky().map(|c| c.solve(&e)) else { break };
        let mut dq: DVector<f64> = jac.transpose() * DVector::from_column_slice(y.as_slice());
        let norm = dq.amax();
        if norm > settings.max_step {
            dq *= settings.max_step / norm;
        }
        for (k, &c) in free.iter().enumerate() {
            q[c] += dq[k];
        }
        limits.clamp(&mut q);
    }
    Ok(q)
}
