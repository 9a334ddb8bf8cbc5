//! One PASS/FAIL line per acceptance criterion. Exits non-zero when any
//! criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use momaplan::akr::{assemble_akr, invert_tree, scale_object_model, AkrOptions, GraspSpec, OBJECT_PREFIX};
use momaplan::collision::{distance_transform_sq, fit_spheres, voxelize_mesh, DistanceField, OccupancyGrid};
use momaplan::kinematics::{insert_virtual_base, Configuration, KinematicTree, VirtualBaseLimits};
use momaplan::pipeline::{
    load_task_spec, prepare_task, read_dataset, run_batch, BatchOptions, BatchStats, ExportFormat, JSONL_FILE,
};
use momaplan::planner::{
    cluster_ik, optimize_trajectory, plan_grasp_switch, ClusterParams, ConstraintSet, GoalSpec, GoalTarget, IkSolution,
    SegmentKind, TrajectoryProblem,
};
use momaplan::scenarios::{constrained_door_task, toy_door_task, toy_generation, write_toy_door_assets};
use momaplan::validate::validate_trajectory;
use nalgebra::{Matrix4, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fk_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1001);
    let (mut wt, mut wq) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = r.random_range(1..=8);
        let branching = r.random_bool(0.5);
        let tree = random_tree(&mut r, n, branching);
        let q = random_config(&mut r, &tree);
        for l in tree.links() {
            let (dt, dq) = pose_error(&tree.forward_kinematics(&q, &l.name).unwrap(), &matrix_chain_fk(&tree, &q, &l.name));
            wt = wt.max(dt);
            wq = wq.max(dq);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(wt <= 1e-9 && wq <= 1e-9 && secs < 5.0, format!("max translation {wt:.1e} m, max quaternion {wq:.1e}, {secs:.2} s"))
}

fn pairwise(a: &KinematicTree, qa: &[f64], b: &KinematicTree, qb: &[f64]) -> f64 {
    let (sa, sb) = (a.evaluate(qa).unwrap(), b.evaluate(qb).unwrap());
    let mut worst = 0.0f64;
    for x in a.links() {
        for y in a.links() {
            let pa = sa.pose(a.link_id(&x.name).unwrap()).inverse().compose(sa.pose(a.link_id(&y.name).unwrap()));
            let pb = sb.pose(b.link_id(&x.name).unwrap()).inverse().compose(sb.pose(b.link_id(&y.name).unwrap()));
            worst = worst.max(relative_pose_error(&pa, &pb));
        }
    }
    worst
}

fn inversion() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1002);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = r.random_range(2..=8);
        let tree = random_tree(&mut r, n, true);
        let inv = invert_tree(&tree, &format!("l{}", r.random_range(1..=n))).unwrap();
        for _ in 0..50 {
            let q = random_config(&mut r, &tree);
            let qi: Vec<f64> = inv.actuated_joints().map(|j| q[tree.q_index(&j.name).unwrap()]).collect();
            worst = worst.max(pairwise(&tree, &q, &inv, &qi));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-9 && secs < 30.0, format!("max pairwise error {worst:.1e}, {secs:.2} s"))
}

fn to_matrix(p: &momaplan::kinematics::Pose) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(p.rotation.to_rotation_matrix().matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
    m
}

fn closure() -> Outcome {
    let mut r = rng(1003);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(1..=6);
        let robot = insert_virtual_base(&random_tree(&mut r, n, false), VirtualBaseLimits::default()).unwrap();
        let tcp = format!("l{n}");
        let m = r.random_range(0..=5);
        let object = random_tree(&mut r, m, true);
        let scale = r.random_range(0.5..1.5);
        let scaled = scale_object_model(&object, scale).unwrap();
        let grasp = GraspSpec {
            tcp_pose_in_object_base: random_pose(&mut r, 0.5),
            grasp_link: format!("l{}", r.random_range(0..=m)),
            object_state_at_grasp: Configuration(random_config(&mut r, &scaled)),
        };
        let akr = assemble_akr(&robot, &object, &grasp, scale, &AkrOptions::new(&tcp)).unwrap();
        let q_robot = random_config(&mut r, &robot);
        let phi = grasp.object_state_at_grasp.0.clone();
        let mut q = vec![0.0; akr.dof()];
        for (j, v) in robot.actuated_joints().zip(&q_robot) {
            q[akr.tree.q_index(&j.name).unwrap()] = *v;
        }
        for (j, v) in object.actuated_joints().zip(&phi) {
            q[akr.tree.q_index(&format!("{OBJECT_PREFIX}{}", j.name)).unwrap()] = *v;
        }
        // At the grasp state the object base sits at tcp · grasp⁻¹.
        let oracle = matrix_chain_fk(&robot, &q_robot, &tcp) * to_matrix(&grasp.tcp_pose_in_object_base).try_inverse().unwrap();
        let anchor = akr.tree.forward_kinematics(&q, &akr.object_anchor_link).unwrap();
        let (dt, dq) = pose_error(&anchor, &oracle);
        worst = worst.max(dt).max(dq);
    }
    outcome(worst <= 1e-9, format!("max closure error {worst:.1e} over 100 triples"))
}

fn jacobian() -> Outcome {
    let mut r = rng(1004);
    let mut worst = 0.0f64;
    let h = 1e-6;
    for _ in 0..500 {
        let n = r.random_range(1..=8);
        let branching = r.random_bool(0.5);
        let tree = random_tree(&mut r, n, branching);
        let q = random_config(&mut r, &tree);
        let link = format!("l{}", r.random_range(0..=n));
        let j = tree.jacobian(&q, &link).unwrap();
        for c in 0..q.len() {
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp[c] += h;
            qm[c] -= h;
            let (a, b) = (tree.forward_kinematics(&qp, &link).unwrap(), tree.forward_kinematics(&qm, &link).unwrap());
            let lin = (a.translation - b.translation) / (2.0 * h);
            let ang = (a.rotation * b.rotation.inverse()).scaled_axis() / (2.0 * h);
            for k in 0..3 {
                worst = worst.max((j[(k, c)] - lin[k]).abs()).max((j[(k + 3, c)] - ang[k]).abs());
            }
        }
    }
    outcome(worst < 1e-5, format!("max |J − J_fd| = {worst:.1e} over 500 draws"))
}

fn distance_transform() -> Outcome {
    let mut r = rng(1005);
    let mut mismatches = 0usize;
    let mut cells_checked = 0usize;
    for round in 0..100 {
        let dims = if round < 5 { [32, 32, 32] } else { [0, 1, 2].map(|_| r.random_range(1..=32)) };
        let n: usize = dims.iter().product();
        let mut cells = vec![false; n];
        for _ in 0..r.random_range(0..=n.min(150)) {
            cells[r.random_range(0..n)] = true;
        }
        let grid = OccupancyGrid { origin: Vector3::zeros(), pitch: 0.02, dims, cells: cells.clone() };
        let sites: Vec<[i64; 3]> =
            (0..n).filter(|&i| cells[i]).map(|i| grid.coords(i).map(|v| v as i64)).collect();
        let sq = distance_transform_sq(&cells, dims);
        let field = DistanceField::from_occupancy(grid.clone(), f64::INFINITY);
        for i in 0..n {
            let p = grid.coords(i).map(|v| v as i64);
            let brute = sites
                .iter()
                .map(|s| (0..3).map(|a| (s[a] - p[a]).pow(2)).sum::<i64>())
                .min()
                .map_or(f64::INFINITY, |d| d as f64);
            cells_checked += 1;
            if sq[i] != brute || (!cells[i] && field.values()[i] != brute.sqrt() * 0.02) {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over {cells_checked} cells"))
}

fn sphere_fit() -> Outcome {
    let mut r = rng(1006);
    let (mut uncovered, mut worst_centroid, mut total) = (0usize, 0.0f64, 0usize);
    for _ in 0..50 {
        let mesh = random_convex_mesh(&mut r);
        let s = fit_spheres(&mesh, 0.05, 1.0).unwrap();
        for c in voxelize_mesh(&mesh, 0.05).unwrap().occupied_centers() {
            total += 1;
            if !s.spheres.iter().any(|x| (x.center - c).norm() <= x.radius) {
                uncovered += 1;
            }
        }
        worst_centroid = worst_centroid.max((s.centroid() - mesh.vertex_centroid()).norm());
    }
    outcome(
        uncovered == 0 && worst_centroid <= 1e-9,
        format!("{uncovered} of {total} voxel centres uncovered, centroid error {worst_centroid:.1e}"),
    )
}

fn toy_door() -> Outcome {
    let mut r = rng(1007);
    let (mut passed, mut slowest) = (0usize, 0.0f64);
    for seed in 0..50 {
        let goal = r.random_range(0.3..=0.6);
        let task = toy_door_task(goal, seed);
        let start = Instant::now();
        let result = task.plan_single(0, &[goal]);
        let secs = start.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        let Ok(result) = result else { continue };
        let akr = task.assemble(0).unwrap();
        let report =
            validate_trajectory(&result.trajectory, &akr, &task.constraints(), &task.limits(&akr), Some(&task.field)).unwrap();
        if report.verdict.passed() && secs < 5.0 {
            passed += 1;
        }
    }
    outcome(passed >= 45, format!("{passed}/50 valid, slowest solve {slowest:.2} s"))
}

fn smoothness_optimum() -> Outcome {
    let (akr, field) = point_akr();
    let goal = vec![1.0, 0.0, 0.0];
    let mut p = TrajectoryProblem::new(
        Arc::new(akr),
        Arc::new(field),
        vec![0.0; 3],
        GoalSpec::new(GoalTarget::Configuration { target: goal.clone() }),
        vec![goal],
        ConstraintSet::free(),
    );
    p.frozen = vec![1, 2];
    p.w_a = vec![0.0; 3];
    let r = optimize_trajectory(&p).unwrap();
    let t = r.trajectory.len();
    let worst = r
        .trajectory
        .waypoints
        .iter()
        .enumerate()
        .map(|(i, w)| (w[0] - i as f64 / (t - 1) as f64).abs())
        .fold(0.0, f64::max);
    outcome(worst <= 1e-4, format!("max deviation from linear interpolation {worst:.1e} over {t} waypoints"))
}

fn clustering() -> Outcome {
    let params = ClusterParams::default();
    let mut r = rng(1009);
    let mut bounds_ok = true;
    for _ in 0..40 {
        let n = r.random_range(1..=300);
        let dim = r.random_range(1..=8);
        let sols: Vec<IkSolution> = (0..n)
            .map(|_| IkSolution {
                config: (0..dim).map(|_| r.random_range(-3.0..3.0)).collect(),
                position_residual: 0.0,
                rotation_residual: 0.0,
            })
            .collect();
        let k = cluster_ik(&sols, &params, r.random()).len();
        bounds_ok &= k >= params.ap_lower.min(n) && k <= params.ap_upper;
    }
    let centers = [[0.0, 0.0, 0.0], [1.2, 0.0, 0.0], [0.0, 1.5, -0.5]];
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut sols = Vec::new();
    for c in &centers {
        for _ in 0..100 {
            sols.push(IkSolution {
                config: c.iter().map(|v| v + noise.sample(&mut r)).collect(),
                position_residual: 0.0,
                rotation_residual: 0.0,
            });
        }
    }
    let reps = cluster_ik(&sols, &params, 9);
    let mut seen = [false; 3];
    let mut own = true;
    for rep in &reps {
        let i = sols.iter().position(|s| s == rep).unwrap();
        let d = |k: usize| rep.config.iter().zip(&centers[k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let nearest = (0..3).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap();
        own &= nearest == i / 100;
        seen[i / 100] = true;
    }
    let blobs = seen.iter().all(|&s| s) && own;
    outcome(bounds_ok && blobs, format!("bounds held on 40 inputs: {bounds_ok}; 3-blob recovery with {} representatives: {blobs}", reps.len()))
}

fn grasp_switch() -> Outcome {
    let goal = 1.5;
    let task = constrained_door_task(goal);
    let feasible = |g: usize, phi: f64| -> bool {
        let Ok(r) = task.plan_single(g, &[phi]) else { return false };
        let akr = task.assemble(g).unwrap();
        validate_trajectory(&r.trajectory, &akr, &task.constraints(), &task.limits(&akr), Some(&task.field))
            .is_ok_and(|v| v.verdict.passed())
    };
    let mut single_max = 0.0f64;
    for g in 0..task.grasps.len() {
        if feasible(g, goal) {
            single_max = goal;
            break;
        }
        let (mut lo, mut hi) = (0.05f64, goal);
        if !feasible(g, 0.05) {
            continue;
        }
        for _ in 0..10 {
            let mid = 0.5 * (lo + hi);
            if feasible(g, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        single_max = single_max.max(lo);
    }
    let plan = plan_grasp_switch(&task);
    let (reached, segments_valid) = match &plan {
        Ok(p) => {
            let valid = p.segments.iter().filter(|s| s.kind == SegmentKind::Manipulation).all(|s| {
                let akr = task.assemble(s.grasp_index).unwrap();
                validate_trajectory(&s.trajectory, &akr, &task.constraints(), &task.limits(&akr), Some(&task.field))
                    .is_ok_and(|v| v.verdict.passed())
            });
            (p.final_object_state[0], valid)
        }
        Err(_) => (f64::NEG_INFINITY, false),
    };
    outcome(
        reached > single_max && segments_valid,
        format!(
            "single-grasp max {single_max:.3} rad, switch plan reaches {reached:.3} rad in {} segments",
            plan.as_ref().map_or(0, |p| p.segments.len())
        ),
    )
}

fn batch(spec: &Path, workers: usize, out: &Path) -> BatchStats {
    let spec = load_task_spec(spec).unwrap();
    run_batch(&spec, &BatchOptions { workers, out_dir: out.into(), format: ExportFormat::Jsonl, debug_trace: false }).unwrap()
}

fn goals(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.3 + 0.3 * i as f64 / (n - 1) as f64).collect()
}

fn determinism_and_scaling() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut g = toy_generation(11);
    g.max_starts = Some(8);
    let spec = write_toy_door_assets(dir.path(), &goals(8), g).unwrap();
    let (a, b) = (dir.path().join("w1"), dir.path().join("w4"));
    let t1 = Instant::now();
    let s1 = batch(&spec, 1, &a);
    let e1 = t1.elapsed().as_secs_f64();
    let t4 = Instant::now();
    let s4 = batch(&spec, 4, &b);
    let e4 = t4.elapsed().as_secs_f64();
    let identical = [JSONL_FILE, "failures.jsonl", "effective_config.json"]
        .iter()
        .all(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap());
    let speedup = e1 / e4;
    outcome(
        s1.attempted == 64 && identical && speedup >= 3.0,
        format!(
            "{} problems, outputs identical: {identical}, {e1:.1} s vs {e4:.1} s, speedup {speedup:.2}x on {} hardware threads",
            s1.attempted.max(s4.attempted),
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    )
}

fn dataset_smoke() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut g = toy_generation(12);
    g.max_starts = Some(10);
    let spec_path = write_toy_door_assets(dir.path(), &goals(120), g).unwrap();
    let out = dir.path().join("out");
    let start = Instant::now();
    let stats = batch(&spec_path, 1, &out);
    let secs = start.elapsed().as_secs_f64();
    let records = read_dataset(&out.join(JSONL_FILE)).unwrap();
    let prepared = prepare_task(&load_task_spec(&spec_path).unwrap()).unwrap();
    let bad = prepared.revalidate(&records).unwrap();
    outcome(
        records.len() >= 1000 && records.len() == stats.valid && bad.is_empty(),
        format!(
            "{} of {} problems valid, {} re-imported, {} discrepancies, {secs:.0} s",
            stats.valid,
            stats.attempted,
            records.len(),
            bad.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("FK oracle equivalence", fk_oracle),
        ("inversion preservation", inversion),
        ("assembly closure", closure),
        ("Jacobian check", jacobian),
        ("distance-transform exactness", distance_transform),
        ("sphere-fit conservativeness", sphere_fit),
        ("toy door task", toy_door),
        ("smoothness optimum", smoothness_optimum),
        ("clustering bounds", clustering),
        ("grasp-switch superiority", grasp_switch),
        ("batch determinism and scaling", determinism_and_scaling),
        ("dataset smoke test", dataset_smoke),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {}", i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
