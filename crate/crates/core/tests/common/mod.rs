#![allow(dead_code)]

use std::f64::consts::PI;

use momaplan::geometry::Mesh;
use momaplan::kinematics::{Joint, JointKind, KinematicTree, Link, Pose};
use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_pose(rng: &mut impl Rng, reach: f64) -> Pose {
    Pose::from_xyz_rpy(
        [rng.random_range(-reach..reach), rng.random_range(-reach..reach), rng.random_range(-reach..reach)],
        [rng.random_range(-PI..PI), rng.random_range(-PI / 2.0..PI / 2.0), rng.random_range(-PI..PI)],
    )
}

/// Tree with `joints` joints of mixed kinds. With `branching`, each new link
/// hangs off a uniformly chosen earlier link; otherwise the tree is a chain.
pub fn random_tree(rng: &mut impl Rng, joints: usize, branching: bool) -> KinematicTree {
    let mut links = vec![Link::new("l0")];
    let mut js = Vec::new();
    for i in 1..=joints {
        let parent = if branching { rng.random_range(0..i) } else { i - 1 };
        let (p, c) = (format!("l{parent}"), format!("l{i}"));
        let origin = random_pose(rng, 0.8);
        let name = format!("j{i}");
        let j = match rng.random_range(0..3) {
            0 => Joint::revolute(&name, &p, &c, origin, random_unit(rng), (-PI, PI)),
            1 => Joint::prismatic(&name, &p, &c, origin, random_unit(rng), (-0.7, 0.7)),
            _ => Joint::fixed(&name, &p, &c, origin),
        };
        links.push(Link::new(&c));
        js.push(j);
    }
    KinematicTree::new(links, js).expect("random tree is valid")
}

pub fn random_config(rng: &mut impl Rng, tree: &KinematicTree) -> Vec<f64> {
    tree.actuated_joints().map(|j| rng.random_range(j.limits.lower..=j.limits.upper)).collect()
}

fn quat_matrix(q: &UnitQuaternion<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn homogeneous(r: Matrix3<f64>, t: Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

/// Rodrigues' formula.
fn axis_angle_matrix(k: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Joint transform as a 4×4 matrix at displacement `v`.
pub fn joint_matrix(j: &Joint, v: f64) -> Matrix4<f64> {
    let origin = homogeneous(quat_matrix(&j.origin.rotation), j.origin.translation);
    let motion = match (j.kind, j.axis) {
        (JointKind::Revolute, Some(a)) => homogeneous(axis_angle_matrix(&a, v), Vector3::zeros()),
        (JointKind::Prismatic, Some(a)) => homogeneous(Matrix3::identity(), a.into_inner() * v),
        _ => Matrix4::identity(),
    };
    origin * motion
}

/// Root-to-`link` transform as a product of 4×4 joint matrices.
pub fn matrix_chain_fk(tree: &KinematicTree, q: &[f64], link: &str) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    let mut current = link.to_string();
    loop {
        let Some(j) = tree.joints().iter().find(|j| j.child == current) else { break };
        let v = tree.q_index(&j.name).map_or(0.0, |i| q[i]);
        m = joint_matrix(j, v) * m;
        current = j.parent.clone();
    }
    m
}

/// Translation and quaternion error of `pose` against the 4×4 matrix `m`,
/// with the quaternion sign aligned.
pub fn pose_error(pose: &Pose, m: &Matrix4<f64>) -> (f64, f64) {
    let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    let r = nalgebra::Rotation3::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned());
    let q = UnitQuaternion::from_rotation_matrix(&r);
    let a = pose.rotation.coords;
    let b = if a.dot(&q.coords) < 0.0 { -q.coords } else { q.coords };
    ((pose.translation - t).norm(), (a - b).amax())
}

pub fn relative_pose_error(a: &Pose, b: &Pose) -> f64 {
    let d = a.inverse().compose(b);
    d.translation.norm().max(d.rotation.angle())
}

/// UV ellipsoid with semi-axes `radii`, `stacks` × `slices` resolution.
pub fn ellipsoid(radii: Vector3<f64>, stacks: usize, slices: usize) -> Mesh {
    let mut v = vec![Vector3::new(0.0, 0.0, radii.z)];
    for i in 1..stacks {
        let phi = PI * i as f64 / stacks as f64;
        for k in 0..slices {
            let th = 2.0 * PI * k as f64 / slices as f64;
            v.push(Vector3::new(radii.x * phi.sin() * th.cos(), radii.y * phi.sin() * th.sin(), radii.z * phi.cos()));
        }
    }
    v.push(Vector3::new(0.0, 0.0, -radii.z));
    let bottom = v.len() - 1;
    let ring = |i: usize, k: usize| 1 + (i - 1) * slices + k % slices;
    let mut t = Vec::new();
    for k in 0..slices {
        t.push([0, ring(1, k), ring(1, k + 1)]);
        t.push([bottom, ring(stacks - 1, k + 1), ring(stacks - 1, k)]);
    }
    for i in 1..stacks - 1 {
        for k in 0..slices {
            t.push([ring(i, k), ring(i + 1, k), ring(i + 1, k + 1)]);
            t.push([ring(i, k), ring(i + 1, k + 1), ring(i, k + 1)]);
        }
    }
    Mesh::new(v, t).expect("ellipsoid is valid")
}

/// Random convex mesh: an ellipsoid or a box, randomly posed.
pub fn random_convex_mesh(rng: &mut impl Rng) -> Mesh {
    let pose = random_pose(rng, 0.3);
    let size = Vector3::new(rng.random_range(0.08..0.3), rng.random_range(0.08..0.3), rng.random_range(0.08..0.3));
    let m = if rng.random_bool(0.5) { ellipsoid(size * 0.5, 8, 12) } else { Mesh::cuboid(-size * 0.5, size * 0.5) };
    m.transformed(&pose)
}

/// AKR of a bare virtual base (x, y, yaw) holding a geometry-free rigid
/// object, with an empty field around it.
pub fn point_akr() -> (momaplan::akr::AkrModel, momaplan::collision::DistanceField) {
    use momaplan::akr::{assemble_akr, AkrOptions, GraspSpec};
    use momaplan::collision::{build_distance_field, FieldConfig};
    use momaplan::geometry::Aabb;
    use momaplan::kinematics::{insert_virtual_base, Configuration, VirtualBaseLimits};

    let body = KinematicTree::new(vec![Link::new("tcp")], vec![]).expect("single link");
    let robot = insert_virtual_base(&body, VirtualBaseLimits::default()).expect("fresh names");
    let object = KinematicTree::new(vec![Link::new("token")], vec![]).expect("single link");
    let grasp = GraspSpec {
        tcp_pose_in_object_base: Pose::identity(),
        grasp_link: "token".into(),
        object_state_at_grasp: Configuration(vec![]),
    };
    let options = AkrOptions { robot_pairs: Some(Default::default()), ..AkrOptions::new("tcp") };
    let akr = assemble_akr(&robot, &object, &grasp, 1.0, &options).expect("point AKR assembles");
    let bbox = Aabb::new(Vector3::repeat(-1.0), Vector3::repeat(2.0));
    let field = build_distance_field(&[], &bbox, &FieldConfig { voxel_size: 0.1, margin: 0.0, ..Default::default() })
        .expect("small field");
    (akr, field)
}
