//! Task specs, batch generation over a worker pool, dataset export and
//! statistics.

mod export;
mod spec;
mod stats;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::akr::{scale_object_model, AkrError, AkrModel, AkrOptions};
use crate::collision::{build_distance_field, CollisionError, FieldConfig};
use crate::geometry::{Aabb, GeometryError, Mesh};
use crate::kinematics::{insert_virtual_base, parse_robot_description, KinematicTree, KinematicsError};
use crate::akr::fit_link_spheres;
use crate::planner::{cluster_ik, GraspSwitchTask, IkSettings, PlannerError, TraceRow};
use crate::validate::{compute_effort_stats, validate_trajectory, FailureReason, ValidationReport, Verdict};

pub use export::{
    export_trajectory, read_binary, read_dataset, write_binary, BinaryTrajectory, DatasetRecord, DatasetWriter,
    ExportFormat, Provenance, BINARY_FILE, BINARY_MAGIC, BINARY_META_FILE, BINARY_VERSION, JSONL_FILE, RECORD_SCHEMA,
    RECORD_VERSION, TOOL_VERSION,
};
pub use spec::{load_scene, load_task_spec, GenerationSpec, ObjectSpec, RobotSpec, SceneEntry, TaskSpec};
pub use stats::{report_stats, write_stats_csv, BatchStats, EffortSummary, FailureRecord, MeanStd};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const STATS_CSV_FILE: &str = "stats.csv";
pub const TRACE_DIR: &str = "traces";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid task spec field '{field}': {message}")]
    Spec { field: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error(transparent)]
    Akr(#[from] AkrError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, PipelineError::Io { .. })
    }
}

/// Seed of problem `index` in a batch seeded with `seed`.
pub fn problem_seed(seed: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Salt separating start-representative searches from problem seeds.
const START_SALT: u64 = 1 << 63;

/// One (grasp, start representative, goal) combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub index: usize,
    pub grasp_index: usize,
    pub start_index: usize,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub enum Outcome {
    Valid(DatasetRecord),
    Failed(FailureRecord),
}

/// Problem result plus the optimizer trace when one was produced.
#[derive(Clone, Debug)]
pub struct Solved {
    pub outcome: Outcome,
    pub trace: Vec<TraceRow>,
}

/// Loaded models, the scene field and one AKR per grasp.
pub struct PreparedTask {
    pub spec: TaskSpec,
    pub task: GraspSwitchTask,
    pub akrs: Vec<Arc<AkrModel>>,
    pub spec_hash: String,
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn load_tree(path: &Path) -> Result<KinematicTree, PipelineError> {
    let tree = parse_robot_description(&read(path)?)?;
    Ok(tree.with_loaded_meshes(path.parent().unwrap_or(Path::new(".")))?)
}

fn posed_object_bounds(object: &KinematicTree, anchor: &crate::kinematics::Pose, phi: &[f64]) -> Result<Aabb, PipelineError> {
    let state = object.evaluate(phi)?;
    let mut bbox = Aabb::empty();
    for (i, l) in object.links().iter().enumerate() {
        if let Some(m) = &l.mesh {
            bbox = bbox.union(&m.transformed(&anchor.compose(state.pose(i))).aabb());
        }
    }
    Ok(bbox)
}

/// Builds the scene field, the robot with spheres and virtual base, and the
/// AKR of every grasp.
pub fn prepare_task(spec: &TaskSpec) -> Result<PreparedTask, PipelineError> {
    spec.check()?;
    let g = &spec.generation;
    let robot = load_tree(&spec.resolve(&spec.robot.path))?;
    let robot = fit_link_spheres(robot, g.robot_sphere_pitch, g.sphere_downscale)?;
    let robot = insert_virtual_base(&robot, spec.robot.base_limits)?;
    if spec.robot.home.len() != robot.dof() {
        return Err(PipelineError::Spec {
            field: "robot.home".into(),
            message: format!("has {} values, the robot with its base has {}", spec.robot.home.len(), robot.dof()),
        });
    }
    let object = load_tree(&spec.resolve(&spec.object.path))?;
    if spec.object.initial_state.len() != object.dof() {
        return Err(PipelineError::Spec {
            field: "object.initial_state".into(),
            message: format!("has {} values, the object has {} joints", spec.object.initial_state.len(), object.dof()),
        });
    }

    let scene_path = spec.resolve(&spec.scene);
    let scene_dir = scene_path.parent().unwrap_or(Path::new("."));
    let mut scene = Vec::new();
    for e in load_scene(&scene_path)? {
        let p = if e.mesh.is_absolute() { e.mesh.clone() } else { scene_dir.join(&e.mesh) };
        scene.push((Mesh::load_obj(&p)?, e.pose));
    }
    let scaled = scale_object_model(&object, spec.object.scale)?;
    let mut bbox = Aabb::empty();
    for phi in std::iter::once(&spec.object.initial_state).chain(&spec.goals) {
        bbox = bbox.union(&posed_object_bounds(&scaled, &spec.object.anchor, phi)?);
    }
    for (m, p) in &scene {
        bbox = bbox.union(&m.transformed(p).aabb());
    }
    let config = FieldConfig { voxel_size: g.voxel_size, margin: g.margin, ..FieldConfig::default() };
    let field = build_distance_field(&scene, &bbox, &config)?;

    let options = AkrOptions {
        joint_weights: spec.robot.joint_weights.clone(),
        sphere_pitch: g.mesh_pitch,
        sphere_downscale: g.sphere_downscale,
        pair_samples: g.pair_samples,
        pair_seed: g.seed,
        ..AkrOptions::new(&spec.robot.tcp_link)
    };
    let mut task = GraspSwitchTask::new(
        robot,
        object,
        options,
        Arc::new(field),
        spec.object.anchor,
        spec.object.initial_state.clone(),
        spec.goals[0].clone(),
        spec.grasps.clone(),
        spec.robot.home.clone(),
    );
    task.scale = spec.object.scale;
    task.ik = IkSettings { max_retries: g.max_retries, ..IkSettings::default() };
    task.goal_seeds = g.goal_seeds;
    task.horizon = g.horizon;
    task.dt = g.dt;
    task.max_velocity = g.velocity_limit;
    task.max_acceleration = g.acceleration_limit;
    task.settings = g.solver.clone();
    task.thresholds = g.thresholds;
    let akrs = (0..spec.grasps.len()).map(|i| task.assemble(i).map(Arc::new)).collect::<Result<Vec<_>, _>>()?;
    Ok(PreparedTask { spec: spec.clone(), task, akrs, spec_hash: spec.hash() })
}

impl PreparedTask {
    /// Clustered start configurations of grasp `grasp` at the initial object
    /// state.
    pub fn start_representatives(&self, grasp: usize) -> Result<Vec<Vec<f64>>, PipelineError> {
        let g = &self.spec.generation;
        let seed = problem_seed(g.seed, START_SALT | grasp as u64);
        let akr = &self.akrs[grasp];
        let sols = self.task.ik_solutions(akr, &self.spec.object.initial_state, &self.spec.robot.home, g.start_samples, seed)?;
        let mut reps: Vec<Vec<f64>> = cluster_ik(&sols, &g.clustering, seed).into_iter().map(|s| s.config).collect();
        if let Some(k) = g.max_starts {
            reps.truncate(k);
        }
        debug!("grasp {grasp}: {} start solutions, {} representatives", sols.len(), reps.len());
        Ok(reps)
    }

    /// Problems in index order: grasps, then start representatives, then goals.
    pub fn problems(&self, starts: &[Vec<Vec<f64>>]) -> Vec<Problem> {
        let mut out = Vec::new();
        for (g, reps) in starts.iter().enumerate() {
            for (s, start) in reps.iter().enumerate() {
                for goal in &self.spec.goals {
                    let index = out.len();
                    out.push(Problem {
                        index,
                        grasp_index: g,
                        start_index: s,
                        start: start.clone(),
                        goal: goal.clone(),
                        seed: problem_seed(self.spec.generation.seed, index as u64),
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self, akr: &AkrModel, traj: &crate::planner::Trajectory) -> Result<ValidationReport, KinematicsError> {
        validate_trajectory(traj, akr, &self.task.constraints(), &self.task.limits(akr), Some(&self.task.field))
    }

    /// Plans, validates and classifies one problem.
    pub fn solve(&self, p: &Problem) -> Solved {
        let akr = &self.akrs[p.grasp_index];
        let fail = |reason, detail: String| Solved {
            outcome: Outcome::Failed(FailureRecord {
                problem_index: p.index,
                grasp_index: p.grasp_index,
                start_index: p.start_index,
                goal: p.goal.clone(),
                reason,
                detail,
            }),
            trace: Vec::new(),
        };
        let result = match self.task.plan_segment(akr.clone(), p.start.clone(), &p.goal, p.seed) {
            Ok(r) => r,
            Err(PlannerError::IkFailed(m)) => return fail(FailureReason::IkFailed, m),
            Err(PlannerError::Infeasible(inf)) => {
                let detail = format!("best residuals {:?}", inf.residuals);
                let reason = inf
                    .best
                    .as_ref()
                    .and_then(|t| self.validate(akr, t).ok())
                    .and_then(|r| match r.verdict {
                        Verdict::Fail { reason, .. } => Some(reason),
                        Verdict::Pass => None,
                    })
                    .unwrap_or(FailureReason::OptimizerInfeasible);
                return fail(reason, detail);
            }
            Err(e) => return fail(FailureReason::OptimizerInfeasible, e.to_string()),
        };
        let report = match self.validate(akr, &result.trajectory) {
            Ok(r) => r,
            Err(e) => return fail(FailureReason::OptimizerInfeasible, e.to_string()),
        };
        if let Verdict::Fail { reason, detail } = &report.verdict {
            return Solved { trace: result.trace, ..fail(*reason, detail.clone()) };
        }
        let record = DatasetRecord {
            version: RECORD_VERSION,
            problem_index: p.index,
            joint_names: akr.tree.joint_names(),
            dt: result.trajectory.dt,
            effort: compute_effort_stats(&result.trajectory, akr),
            waypoints: result.trajectory.waypoints,
            grasp_index: p.grasp_index,
            start_index: p.start_index,
            goal: p.goal.clone(),
            validation: report,
            provenance: Provenance { spec_hash: self.spec_hash.clone(), seed: p.seed, tool_version: TOOL_VERSION.into() },
        };
        Solved { outcome: Outcome::Valid(record), trace: result.trace }
    }

    /// Re-runs every check on exported records. Returns the problem indices
    /// whose recomputed report is not a pass or differs from the stored one.
    pub fn revalidate(&self, records: &[DatasetRecord]) -> Result<Vec<usize>, PipelineError> {
        let mut bad = Vec::new();
        for r in records {
            let Some(akr) = self.akrs.get(r.grasp_index) else {
                bad.push(r.problem_index);
                continue;
            };
            if akr.tree.joint_names() != r.joint_names {
                bad.push(r.problem_index);
                continue;
            }
            let report = self.validate(akr, &r.trajectory())?;
            if !report.verdict.passed() || report != r.validation {
                bad.push(r.problem_index);
            }
        }
        Ok(bad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchOptions {
    pub workers: usize,
    pub out_dir: PathBuf,
    pub format: ExportFormat,
    /// Write the optimizer trace of every problem as CSV.
    pub debug_trace: bool,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|e| PipelineError::io(path, e))
}

/// Runs every problem of `spec` on `workers` threads and writes the dataset,
/// failures, statistics and effective configuration to the output
/// directory. Output files depend only on the spec, never on the worker
/// count.
pub fn run_batch(spec: &TaskSpec, options: &BatchOptions) -> Result<BatchStats, PipelineError> {
    if options.workers == 0 {
        return Err(PipelineError::Spec { field: "workers".into(), message: "must be at least 1".into() });
    }
    let out = &options.out_dir;
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    write_file(&out.join(EFFECTIVE_CONFIG_FILE), spec.effective_config().as_bytes())?;
    let mut writer = DatasetWriter::create(out, options.format)?;
    if options.debug_trace {
        let d = out.join(TRACE_DIR);
        fs::create_dir_all(&d).map_err(|e| PipelineError::io(&d, e))?;
    }

    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| PipelineError::Spec { field: "workers".into(), message: e.to_string() })?;
    let prepared = prepare_task(spec)?;
    let starts: Vec<Vec<Vec<f64>>> = pool.install(|| {
        (0..prepared.akrs.len()).into_par_iter().map(|g| prepared.start_representatives(g)).collect::<Result<_, _>>()
    })?;
    let problems = prepared.problems(&starts);
    info!("{} problems over {} grasps", problems.len(), prepared.akrs.len());
    let solved: Vec<Solved> = pool.install(|| problems.par_iter().map(|p| prepared.solve(p)).collect());
    let elapsed = started.elapsed().as_secs_f64();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (p, s) in problems.iter().zip(&solved) {
        if options.debug_trace {
            let path = out.join(TRACE_DIR).join(format!("{:06}.csv", p.index));
            let f = fs::File::create(&path).map_err(|e| PipelineError::io(&path, e))?;
            TraceRow::write_csv(&s.trace, std::io::BufWriter::new(f)).map_err(|e| PipelineError::io(&path, e))?;
        }
        match &s.outcome {
            Outcome::Valid(r) => {
                writer.write(r)?;
                records.push(r.clone());
            }
            Outcome::Failed(f) => failures.push(f.clone()),
        }
    }
    writer.finish()?;

    let failures_path = out.join(FAILURES_FILE);
    let mut text = Vec::new();
    for f in &failures {
        serde_json::to_writer(&mut text, f).expect("failure record serializes");
        text.push(b'\n');
    }
    write_file(&failures_path, &text)?;

    let reasons: Vec<FailureReason> = failures.iter().map(|f| f.reason).collect();
    let stats = report_stats(&records, &reasons, elapsed);
    write_file(&out.join(STATS_FILE), serde_json::to_string_pretty(&stats).expect("stats serialize").as_bytes())?;
    let csv_path = out.join(STATS_CSV_FILE);
    let f = fs::File::create(&csv_path).map_err(|e| PipelineError::io(&csv_path, e))?;
    write_stats_csv(&stats, &records, f)?;
    info!("{} of {} problems valid in {:.2} s", stats.valid, stats.attempted, elapsed);
    Ok(stats)
}

/// Recomputes statistics from a batch output directory. Elapsed time comes
/// from the stored stats file when present.
pub fn stats_from_dir(dir: &Path) -> Result<(BatchStats, Vec<DatasetRecord>), PipelineError> {
    let jsonl = dir.join(JSONL_FILE);
    let records = if jsonl.is_file() { read_dataset(&jsonl)? } else { read_dataset(&dir.join(BINARY_FILE))? };
    let fpath = dir.join(FAILURES_FILE);
    let mut reasons = Vec::new();
    if fpath.is_file() {
        for (i, line) in read(&fpath)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: FailureRecord = serde_json::from_str(line)
                .map_err(|e| PipelineError::Format { path: fpath.clone(), message: format!("line {}: {e}", i + 1) })?;
            reasons.push(f.reason);
        }
    }
    let spath = dir.join(STATS_FILE);
    let elapsed = if spath.is_file() {
        serde_json::from_str::<BatchStats>(&read(&spath)?)
            .map_err(|e| PipelineError::Format { path: spath.clone(), message: e.to_string() })?
            .elapsed_seconds
    } else {
        0.0
    };
    Ok((report_stats(&records, &reasons, elapsed), records))
}

/// Writes `stats` as pretty JSON followed by a newline.
pub fn write_stats_json<W: Write>(stats: &BatchStats, mut w: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut w, stats)?;
    w.write_all(b"\n")
}
