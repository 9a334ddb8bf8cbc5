mod common;

use std::f64::consts::PI;

use common::*;
use momaplan::kinematics::{
    insert_virtual_base, parse_robot_description, Joint, KinematicTree, Link, Pose, VirtualBaseLimits,
};
use nalgebra::{Matrix4, Vector3};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn fk_matches_matrix_chain_on_random_chains() {
    let mut r = rng(11);
    for _ in 0..1000 {
        let tree = random_tree(&mut r, 5, false);
        let q = random_config(&mut r, &tree);
        let fk = tree.forward_kinematics(&q, "l5").unwrap();
        let (dt, dq) = pose_error(&fk, &matrix_chain_fk(&tree, &q, "l5"));
        assert!(dt < 1e-9 && dq < 1e-9, "{dt} {dq}");
    }
}

#[test]
fn seven_joint_arm_zero_configuration() {
    let mut doc = String::from("<robot name=\"arm\">\n<link name=\"base\"/>\n");
    let origins = [
        ("0 0 0.34", "0 0 0", "0 0 1"),
        ("0 0 0", "-1.5707963267948966 0 0", "0 0 1"),
        ("0 -0.316 0", "1.5707963267948966 0 0", "0 0 1"),
        ("0.0825 0 0", "1.5707963267948966 0 0", "0 0 1"),
        ("-0.0825 0.384 0", "-1.5707963267948966 0 0", "0 0 1"),
        ("0 0 0", "1.5707963267948966 0 0", "0 0 1"),
        ("0.088 0 0", "1.5707963267948966 0 0.3", "0 0 1"),
    ];
    let mut parent = "base".to_string();
    for (i, (xyz, rpy, axis)) in origins.iter().enumerate() {
        let child = format!("link{}", i + 1);
        doc += &format!(
            "<link name=\"{child}\"/>\n<joint name=\"j{}\" type=\"revolute\"><parent link=\"{parent}\"/><child link=\"{child}\"/>\
             <origin xyz=\"{xyz}\" rpy=\"{rpy}\"/><axis xyz=\"{axis}\"/><limit lower=\"-2.9\" upper=\"2.9\"/></joint>\n",
            i + 1
        );
        parent = child;
    }
    doc += "</robot>";
    let tree = parse_robot_description(&doc).unwrap();
    assert_eq!(tree.dof(), 7);

    // Hand-built chain: each origin is translate(xyz) · Rz(yaw) · Ry(pitch) · Rx(roll).
    let rot = |axis: usize, a: f64| {
        let (c, s) = (a.cos(), a.sin());
        let mut m = Matrix4::identity();
        let (i, k) = match axis {
            0 => (1, 2),
            1 => (2, 0),
            _ => (0, 1),
        };
        m[(i, i)] = c;
        m[(i, k)] = -s;
        m[(k, i)] = s;
        m[(k, k)] = c;
        m
    };
    let parse3 = |s: &str| -> Vec<f64> { s.split_whitespace().map(|v| v.parse().unwrap()).collect() };
    let mut oracle = Matrix4::identity();
    for (xyz, rpy, _) in origins {
        let t = parse3(xyz);
        let a = parse3(rpy);
        let mut tr = Matrix4::identity();
        tr[(0, 3)] = t[0];
        tr[(1, 3)] = t[1];
        tr[(2, 3)] = t[2];
        oracle = oracle * tr * rot(2, a[2]) * rot(1, a[1]) * rot(0, a[0]);
    }
    let fk = tree.forward_kinematics(&[0.0; 7], "link7").unwrap();
    let (dt, dq) = pose_error(&fk, &oracle);
    assert!(dt < 1e-9 && dq < 1e-9, "{dt} {dq}");
}

#[test]
fn virtual_base_with_one_joint_arm() {
    let arm = KinematicTree::new(
        vec![Link::new("base"), Link::new("ee")],
        vec![Joint::revolute("shoulder", "base", "ee", Pose::from_translation(0.5, 0.0, 0.3), Vector3::y(), (-2.0, 2.0))],
    )
    .unwrap();
    let tree = insert_virtual_base(&arm, VirtualBaseLimits::default()).unwrap();
    let q = [0.3, -0.4, PI / 4.0, 0.2];
    let fk = tree.forward_kinematics(&q, "ee").unwrap();
    let (dt, dq) = pose_error(&fk, &matrix_chain_fk(&tree, &q, "ee"));
    assert!(dt < 1e-9 && dq < 1e-9);

    // Independent decomposition: translate(q1, q2, 0) · yaw(q3) · arm.
    let mut base = Matrix4::identity();
    base[(0, 3)] = 0.3;
    base[(1, 3)] = -0.4;
    let (c, s) = ((PI / 4.0).cos(), (PI / 4.0).sin());
    let mut yaw = Matrix4::identity();
    yaw[(0, 0)] = c;
    yaw[(0, 1)] = -s;
    yaw[(1, 0)] = s;
    yaw[(1, 1)] = c;
    let oracle = base * yaw * joint_matrix(arm.joint("shoulder").unwrap(), 0.2);
    let (dt, dq) = pose_error(&fk, &oracle);
    assert!(dt < 1e-9 && dq < 1e-9);
}

fn fd_jacobian(tree: &KinematicTree, q: &[f64], link: &str, h: f64) -> nalgebra::DMatrix<f64> {
    let n = q.len();
    let mut j = nalgebra::DMatrix::zeros(6, n);
    for c in 0..n {
        let (mut qp, mut qm) = (q.to_vec(), q.to_vec());
        qp[c] += h;
        qm[c] -= h;
        let (a, b) = (tree.forward_kinematics(&qp, link).unwrap(), tree.forward_kinematics(&qm, link).unwrap());
        let lin = (a.translation - b.translation) / (2.0 * h);
        // Angular velocity from the world-frame rotation difference.
        let w = (a.rotation * b.rotation.inverse()).scaled_axis() / (2.0 * h);
        j.fixed_view_mut::<3, 1>(0, c).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, c).copy_from(&w);
    }
    j
}

#[test]
fn jacobian_matches_central_differences_on_six_joint_chains() {
    let mut r = rng(5);
    for _ in 0..200 {
        let tree = random_tree(&mut r, 6, false);
        let q = random_config(&mut r, &tree);
        let j = tree.jacobian(&q, "l6").unwrap();
        let fd = fd_jacobian(&tree, &q, "l6", 1e-6);
        assert!((j - fd).amax() < 1e-5);
    }
}

#[test]
fn fk_locality() {
    let mut r = rng(8);
    for _ in 0..200 {
        let tree = random_tree(&mut r, 7, true);
        if tree.dof() == 0 {
            continue;
        }
        let q = random_config(&mut r, &tree);
        let c = r.random_range(0..tree.dof());
        let name = tree.actuated_joints().nth(c).unwrap().name.clone();
        let mut q2 = q.clone();
        q2[c] += 0.3;
        let (a, b) = (tree.evaluate(&q).unwrap(), tree.evaluate(&q2).unwrap());
        for i in 0..tree.links().len() {
            if !tree.is_moved_by(i, &name) {
                assert_eq!(a.pose(i), b.pose(i));
            }
        }
    }
}

#[test]
fn fk_is_deterministic() {
    let mut r = rng(9);
    let tree = random_tree(&mut r, 8, true);
    let q = random_config(&mut r, &tree);
    let a = tree.forward_kinematics(&q, "l8").unwrap();
    let b = tree.clone().forward_kinematics(&q, "l8").unwrap();
    assert_eq!(a.translation.map(f64::to_bits), b.translation.map(f64::to_bits));
    assert_eq!(a.rotation.coords.map(f64::to_bits), b.rotation.coords.map(f64::to_bits));
}

proptest! {
    #[test]
    fn composition_is_associative_and_normalized(
        s in any::<u64>(),
    ) {
        let mut r = rng(s);
        let (a, b, c) = (random_pose(&mut r, 2.0), random_pose(&mut r, 2.0), random_pose(&mut r, 2.0));
        let l = a.compose(&b).compose(&c);
        let rr = a.compose(&b.compose(&c));
        prop_assert!((l.translation - rr.translation).norm() < 1e-9);
        prop_assert!(relative_pose_error(&l, &rr) < 1e-9);
        prop_assert!((l.rotation.coords.norm() - 1.0).abs() < 1e-9);
        let id = a.compose(&a.inverse());
        prop_assert!(id.translation.norm() < 1e-9 && id.rotation.angle() < 1e-9);
    }

    #[test]
    fn random_branching_trees_match_oracle(s in any::<u64>(), n in 1usize..=8) {
        let mut r = rng(s);
        let tree = random_tree(&mut r, n, true);
        let q = random_config(&mut r, &tree);
        for l in tree.links() {
            let fk = tree.forward_kinematics(&q, &l.name).unwrap();
            let (dt, dq) = pose_error(&fk, &matrix_chain_fk(&tree, &q, &l.name));
            prop_assert!(dt < 1e-9 && dq < 1e-9);
        }
    }
}
