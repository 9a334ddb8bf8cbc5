use std::collections::{BTreeSet, HashSet};

use log::warn;

use super::{
    compute_attachment, derive_collision_pairs, invert_tree, robot_collision_pairs, scale_object_model, AkrError,
    AkrModel, ConfigLayout, GraspSpec, LinkPair,
};
use crate::collision::fit_spheres;
use crate::kinematics::{Joint, KinematicTree, KinematicsError, Link, VIRTUAL_BASE_JOINTS};

pub const OBJECT_PREFIX: &str = "obj/";
pub const ATTACH_JOINT: &str = "tcp_object_attach";

/// Parameters of the assembly that are not part of the grasp itself.
#[derive(Clone, Debug)]
pub struct AkrOptions {
    pub tcp_link: String,
    /// Joint weights over the full configuration; all ones when absent.
    pub joint_weights: Option<Vec<f64>>,
    pub sphere_pitch: f64,
    pub sphere_downscale: f64,
    pub pair_samples: usize,
    pub pair_seed: u64,
    /// Robot-robot pairs; derived from the robot alone when absent.
    pub robot_pairs: Option<BTreeSet<LinkPair>>,
}

impl AkrOptions {
    pub fn new(tcp_link: &str) -> Self {
        Self {
            tcp_link: tcp_link.into(),
            joint_weights: None,
            sphere_pitch: 0.05,
            sphere_downscale: 0.95,
            pair_samples: 100,
            pair_seed: 0,
            robot_pairs: None,
        }
    }
}

/// Builds the augmented chain: scale, evaluate the grasp link at the grasp
/// state, compute the attachment, re-root the object at the grasp link and
/// hang it off the tool frame with a fixed joint.
///
/// `robot` must already carry the virtual base. The grasp pose is read in the
/// scaled object's base frame.
pub fn assemble_akr(
    robot: &KinematicTree,
    object: &KinematicTree,
    grasp: &GraspSpec,
    scale: f64,
    options: &AkrOptions,
) -> Result<AkrModel, AkrError> {
    let names: Vec<String> = robot.actuated_joints().take(3).map(|j| j.name.clone()).collect();
    if names != VIRTUAL_BASE_JOINTS {
        return Err(AkrError::Layout(format!("robot must start with the virtual base joints, found {names:?}")));
    }
    let tcp = robot.link_id(&options.tcp_link)?;

    let scaled = fit_link_spheres(scale_object_model(object, scale)?, options.sphere_pitch, options.sphere_downscale)?;
    scaled.link_id(&grasp.grasp_link)?;
    let q_init = if grasp.object_state_at_grasp.is_empty() {
        vec![0.0; scaled.dof()]
    } else {
        grasp.object_state_at_grasp.0.clone()
    };
    let tip = scaled.forward_kinematics(&q_init, &grasp.grasp_link)?;
    let attach = compute_attachment(&grasp.tcp_pose_in_object_base, &tip);
    let inverted = invert_tree(&scaled, &grasp.grasp_link)?;

    let prefixed = |n: &str| format!("{OBJECT_PREFIX}{n}");
    let (obj_links, obj_joints) = inverted.into_parts();
    let (robot_links, _) = robot.clone().into_parts();
    let mut links = robot_links;
    let robot_names: HashSet<String> = links.iter().map(|l| l.name.clone()).collect();
    for l in obj_links {
        let name = prefixed(&l.name);
        if robot_names.contains(&name) {
            return Err(KinematicsError::Naming(format!("object link '{name}' collides with a robot link")).into());
        }
        links.push(Link { name, ..l });
    }

    let mut joints = tcp_path_last(robot, tcp);
    let robot_joint_names: HashSet<String> = joints.iter().map(|j| j.name.clone()).collect();
    joints.push(Joint::fixed(ATTACH_JOINT, &options.tcp_link, &prefixed(&grasp.grasp_link), attach));
    for j in obj_joints {
        let name = prefixed(&j.name);
        if robot_joint_names.contains(&name) || name == ATTACH_JOINT {
            return Err(KinematicsError::Naming(format!("object joint '{name}' collides with a robot joint")).into());
        }
        joints.push(Joint { name, parent: prefixed(&j.parent), child: prefixed(&j.child), ..j });
    }
    let tree = KinematicTree::new(links, joints)?;

    let n = robot.dof() - 3;
    let m = scaled.dof();
    let layout = ConfigLayout::new(n, m);
    for (i, j) in tree.actuated_joints().enumerate() {
        if layout.object.contains(&i) != j.name.starts_with(OBJECT_PREFIX) {
            return Err(AkrError::Layout(format!("joint '{}' falls outside its block", j.name)));
        }
    }
    let joint_weights = match &options.joint_weights {
        Some(w) if w.len() != n + m + 3 => return Err(AkrError::WeightCount { expected: n + m + 3, got: w.len() }),
        Some(w) => w.clone(),
        None => vec![1.0; n + m + 3],
    };
    let base_pairs = match &options.robot_pairs {
        Some(p) => p.clone(),
        None => robot_collision_pairs(robot, options.pair_samples, options.pair_seed)?,
    };
    let mut model = AkrModel {
        tree,
        layout,
        joint_weights,
        collision_pairs: BTreeSet::new(),
        tcp_link: options.tcp_link.clone(),
        object_anchor_link: prefixed(object.root_name()),
        grasp_link: prefixed(&grasp.grasp_link),
    };
    let derived = derive_collision_pairs(&model, options.pair_samples, &base_pairs, options.pair_seed)?;
    for w in &derived.warnings {
        warn!("{w}");
    }
    model.collision_pairs = derived.pairs;
    model.check()?;
    Ok(model)
}

/// Replaces the sphere set of every link that carries a mesh with a fresh fit.
pub fn fit_link_spheres(tree: KinematicTree, pitch: f64, downscale: f64) -> Result<KinematicTree, AkrError> {
    let (mut links, joints) = tree.into_parts();
    for link in &mut links {
        if let Some(mesh) = link.mesh.as_ref().filter(|m| m.has_area()) {
            link.spheres = Some(fit_spheres(mesh, pitch, downscale)?);
        }
    }
    Ok(KinematicTree::new(links, joints)?)
}

/// Robot joints in depth-first order with the branch leading to the tool
/// frame visited last among siblings, so the object block ends the
/// configuration.
fn tcp_path_last(robot: &KinematicTree, tcp: usize) -> Vec<Joint> {
    let path: HashSet<usize> = robot.path_from_root(tcp).into_iter().collect();
    let mut out = Vec::with_capacity(robot.joints().len());
    dfs_emit(robot, robot.root_index(), &path, &mut out);
    out
}

fn dfs_emit(robot: &KinematicTree, link: usize, path: &HashSet<usize>, out: &mut Vec<Joint>) {
    let mut children: Vec<&Joint> = robot.child_joints(link).collect();
    children.sort_by_key(|j| path.contains(&robot.link_id(&j.child).expect("child exists")));
    for j in children {
        out.push(j.clone());
        dfs_emit(robot, robot.link_id(&j.child).expect("child exists"), path, out);
    }
}
