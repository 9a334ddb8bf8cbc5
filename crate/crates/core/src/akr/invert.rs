use nalgebra::Unit;

use super::AkrError;
use crate::kinematics::{Joint, JointKind, KinematicTree, Pose};

/// Below this lever arm a reversed revolute axis is treated as passing through
/// the new child frame's origin.
const COAXIAL_EPS: f64 = 1e-14;

/// Re-roots `object` at `new_root`.
///
/// Joints on the path from the old root to `new_root` are reversed so that
/// every configuration (matched by joint name) yields the same relative pose
/// between any two links. Link frames are unchanged; off-path branches keep
/// their joints as-is.
///
/// Reversal rules for a joint `parent -> child` with origin `O = (R, t)`:
/// - fixed: `child -> parent`, origin `O⁻¹`;
/// - prismatic: `child -> parent`, origin `O⁻¹`, axis `-R·a`;
/// - revolute with `t ∥ R·a`: as prismatic;
/// - revolute otherwise: the rotation happens about the old child frame, so
///   the reversed joint drives an auxiliary frame `<joint>__inv_frame`
///   (identity origin, axis `-a`) which carries `parent` through a fixed
///   joint `<joint>__inv_offset` with origin `O⁻¹`.
///
/// Limits are kept: with the axis negated, the same value reproduces the same
/// displacement.
pub fn invert_tree(object: &KinematicTree, new_root: &str) -> Result<KinematicTree, AkrError> {
    let target = object.link_id(new_root)?;
    if target == object.root_index() {
        return Ok(object.clone());
    }
    let path = object.path_from_root(target);
    let on_path: Vec<String> = path
        .iter()
        .skip(1)
        .map(|&l| object.parent_joint(l).expect("non-root link has a parent joint").name.clone())
        .collect();

    let (mut links, joints) = object.clone().into_parts();
    let mut out = Vec::with_capacity(joints.len() + on_path.len());
    for joint in joints {
        if !on_path.contains(&joint.name) {
            out.push(joint);
            continue;
        }
        let inv = joint.origin.inverse();
        let r_axis = joint.axis.map(|a| Unit::new_normalize(-(joint.origin.rotation * a.into_inner())));
        match joint.kind {
            JointKind::Fixed => out.push(Joint { origin: inv, parent: joint.child.clone(), child: joint.parent.clone(), ..joint }),
            JointKind::Prismatic => out.push(Joint {
                origin: inv,
                axis: r_axis,
                parent: joint.child.clone(),
                child: joint.parent.clone(),
                ..joint
            }),
            JointKind::Revolute => {
                let axis = joint.axis.expect("revolute joint has an axis");
                let lever = joint.origin.translation.cross(&(joint.origin.rotation * axis.into_inner()));
                if lever.norm() <= COAXIAL_EPS {
                    out.push(Joint {
                        origin: inv,
                        axis: r_axis,
                        parent: joint.child.clone(),
                        child: joint.parent.clone(),
                        ..joint
                    });
                } else {
                    let frame = format!("{}__inv_frame", joint.name);
                    let offset = format!("{}__inv_offset", joint.name);
                    if object.has_link(&frame) || object.joint_id(&offset).is_some() {
                        return Err(crate::kinematics::KinematicsError::Naming(format!(
                            "auxiliary frame '{frame}' collides with an existing name"
                        ))
                        .into());
                    }
                    links.push(crate::kinematics::Link::new(&frame));
                    let old_parent = joint.parent.clone();
                    out.push(Joint {
                        origin: Pose::identity(),
                        axis: Some(Unit::new_normalize(-axis.into_inner())),
                        parent: joint.child.clone(),
                        child: frame.clone(),
                        ..joint
                    });
                    out.push(Joint::fixed(&offset, &frame, &old_parent, inv));
                }
            }
        }
    }
    Ok(KinematicTree::new(links, out)?)
}
