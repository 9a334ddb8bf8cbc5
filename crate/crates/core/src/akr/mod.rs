//! Augmented kinematic chains: the object tree is scaled, re-rooted at the
//! grasped link and attached to the robot's tool frame with a fixed joint.

mod assemble;
mod invert;
mod pairs;

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{Configuration, JointKind, KinematicTree, KinematicsError, Pose};

pub use assemble::{assemble_akr, fit_link_spheres, AkrOptions, ATTACH_JOINT, OBJECT_PREFIX};
pub use invert::invert_tree;
pub use pairs::{adjacent_pairs, derive_collision_pairs, robot_collision_pairs, sample_configurations, PairDerivation};

#[derive(Debug, Error)]
pub enum AkrError {
    #[error("scale factor must be positive, got {0}")]
    InvalidScale(f64),
    #[error("expected {expected} joint weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Collision(#[from] crate::collision::CollisionError),
}

/// Unordered pair of link names, stored sorted.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkPair(pub String, pub String);

impl LinkPair {
    pub fn new(a: &str, b: &str) -> Self {
        if a <= b {
            Self(a.into(), b.into())
        } else {
            Self(b.into(), a.into())
        }
    }

    pub fn contains(&self, link: &str) -> bool {
        self.0 == link || self.1 == link
    }
}

/// Grasp annotation: the tool frame relative to the object's base link, the
/// grasped link, and the object state the annotation was made at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraspRepr", into = "GraspRepr")]
pub struct GraspSpec {
    pub tcp_pose_in_object_base: Pose,
    pub grasp_link: String,
    pub object_state_at_grasp: Configuration,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraspRepr {
    translation: [f64; 3],
    quaternion: [f64; 4],
    grasp_link: String,
    #[serde(default)]
    object_state: Vec<f64>,
}

impl TryFrom<GraspRepr> for GraspSpec {
    type Error = String;
    fn try_from(r: GraspRepr) -> Result<Self, String> {
        let pose = Pose::from_wxyz(r.translation, r.quaternion)
            .ok_or_else(|| "grasp quaternion must be finite and non-zero".to_string())?;
        Ok(GraspSpec {
            tcp_pose_in_object_base: pose,
            grasp_link: r.grasp_link,
            object_state_at_grasp: Configuration(r.object_state),
        })
    }
}

impl From<GraspSpec> for GraspRepr {
    fn from(g: GraspSpec) -> Self {
        GraspRepr {
            translation: g.tcp_pose_in_object_base.translation.into(),
            quaternion: g.tcp_pose_in_object_base.wxyz(),
            grasp_link: g.grasp_link,
            object_state: g.object_state_at_grasp.0,
        }
    }
}

/// Index ranges of the base / manipulator / object blocks of a configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigLayout {
    pub base: Range<usize>,
    pub manipulator: Range<usize>,
    pub object: Range<usize>,
}

impl ConfigLayout {
    pub fn new(n: usize, m: usize) -> Self {
        Self { base: 0..3, manipulator: 3..3 + n, object: 3 + n..3 + n + m }
    }

    pub fn width(&self) -> usize {
        self.object.end
    }
}

#[derive(Clone, Debug)]
pub struct AkrModel {
    pub tree: KinematicTree,
    pub layout: ConfigLayout,
    pub joint_weights: Vec<f64>,
    pub collision_pairs: BTreeSet<LinkPair>,
    pub tcp_link: String,
    /// Terminal link of the chain: the object's original base.
    pub object_anchor_link: String,
    /// Grasped object link (prefixed), directly under the tool frame.
    pub grasp_link: String,
}

impl AkrModel {
    pub fn dof(&self) -> usize {
        self.tree.dof()
    }

    pub fn is_object_link(&self, name: &str) -> bool {
        name.starts_with(OBJECT_PREFIX)
    }

    /// Manipulator coordinates driven by revolute joints.
    pub fn revolute_manipulator_coords(&self) -> Vec<usize> {
        self.tree
            .actuated_joints()
            .enumerate()
            .filter(|(i, j)| self.layout.manipulator.contains(i) && j.kind == JointKind::Revolute)
            .map(|(i, _)| i)
            .collect()
    }

    /// Writes an object state, given in `object`'s configuration order, into
    /// the object block of `q`. Joints are matched by name.
    pub fn embed_object_state(&self, object: &KinematicTree, phi: &[f64], q: &mut [f64]) {
        for (i, j) in self.tree.actuated_joints().enumerate().filter(|(i, _)| self.layout.object.contains(i)) {
            if let Some(k) = j.name.strip_prefix(OBJECT_PREFIX).and_then(|n| object.q_index(n)) {
                q[i] = phi[k];
            }
        }
    }

    /// Object block of `q` in `object`'s configuration order.
    pub fn object_state(&self, object: &KinematicTree, q: &[f64]) -> Vec<f64> {
        object
            .actuated_joints()
            .map(|j| self.tree.q_index(&format!("{OBJECT_PREFIX}{}", j.name)).map_or(0.0, |i| q[i]))
            .collect()
    }

    pub(crate) fn check(&self) -> Result<(), AkrError> {
        let l = &self.layout;
        if l.base.start != 0 || l.base.end != l.manipulator.start || l.manipulator.end != l.object.start {
            return Err(AkrError::Layout(format!("ranges are not contiguous: {l:?}")));
        }
        if l.base.len() != 3 || l.width() != self.tree.dof() {
            return Err(AkrError::Layout(format!("layout {l:?} does not cover {} joints", self.tree.dof())));
        }
        if self.joint_weights.len() != self.tree.dof() {
            return Err(AkrError::WeightCount { expected: self.tree.dof(), got: self.joint_weights.len() });
        }
        for pair in &self.collision_pairs {
            let a = self.tree.link_id(&pair.0)?;
            let b = self.tree.link_id(&pair.1)?;
            if self.tree.parent_link(a) == Some(b) || self.tree.parent_link(b) == Some(a) {
                return Err(AkrError::Layout(format!("collision pair {pair:?} is joint-connected")));
            }
        }
        Ok(())
    }
}

/// Uniformly scales an object model: joint-origin translations, prismatic
/// limits, merged link meshes, mesh references and sphere sets.
pub fn scale_object_model(object: &KinematicTree, factor: f64) -> Result<KinematicTree, AkrError> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(AkrError::InvalidScale(factor));
    }
    let (mut links, mut joints) = object.clone().into_parts();
    for link in &mut links {
        link.mesh = link.mesh.take().map(|m| m.scaled(&nalgebra::Vector3::repeat(factor)));
        link.spheres = link.spheres.take().map(|s| s.scaled(factor));
        for r in link.visual.iter_mut().chain(link.collision.iter_mut()) {
            r.scale *= factor;
            r.origin = r.origin.with_scaled_translation(factor);
        }
    }
    for joint in &mut joints {
        joint.origin = joint.origin.with_scaled_translation(factor);
        if joint.kind == JointKind::Prismatic {
            joint.limits.lower *= factor;
            joint.limits.upper *= factor;
            joint.limits.velocity = joint.limits.velocity.map(|v| v * factor);
        }
    }
    Ok(KinematicTree::new(links, joints)?)
}

/// `T_tcp_tip = T_base_tcp⁻¹ · T_base_tip`.
pub fn compute_attachment(grasp_pose: &Pose, fk_tip_pose: &Pose) -> Pose {
    grasp_pose.inverse().compose(fk_tip_pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Joint, Link};
    use nalgebra::Vector3;

    fn slider() -> KinematicTree {
        KinematicTree::new(
            vec![Link::new("a"), Link::new("b")],
            vec![Joint::prismatic("p", "a", "b", Pose::from_translation(0.2, 0.0, 0.0), Vector3::x(), (-0.5, 0.5))],
        )
        .unwrap()
    }

    #[test]
    fn unit_scale_is_identity() {
        let t = slider();
        assert_eq!(scale_object_model(&t, 1.0).unwrap(), t);
    }

    #[test]
    fn half_scale_halves_translations() {
        let t = slider();
        let s = scale_object_model(&t, 0.5).unwrap();
        let j = s.joint("p").unwrap();
        assert!((j.origin.translation - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!((j.limits.lower, j.limits.upper), (-0.25, 0.25));
        for q in [-0.5, 0.0, 0.3] {
            let full = t.forward_kinematics(&[q], "b").unwrap();
            let half = s.forward_kinematics(&[q * 0.5], "b").unwrap();
            assert!((half.translation - full.translation * 0.5).norm() < 1e-15);
        }
    }

    #[test]
    fn nonpositive_scale_rejected() {
        assert!(matches!(scale_object_model(&slider(), 0.0), Err(AkrError::InvalidScale(_))));
        assert!(matches!(scale_object_model(&slider(), -2.0), Err(AkrError::InvalidScale(_))));
    }

    #[test]
    fn attachment_cases() {
        let id = compute_attachment(&Pose::identity(), &Pose::identity());
        assert_eq!(id, Pose::identity());
        let p = Pose::from_xyz_rpy([0.3, -0.2, 1.0], [0.1, 0.5, -2.0]);
        let self_cancel = compute_attachment(&p, &p);
        assert!(self_cancel.translation.norm() < 1e-12 && self_cancel.rotation.angle() < 1e-9);
        let t = compute_attachment(&Pose::from_translation(0.1, 0.0, 0.0), &Pose::from_translation(0.3, 0.0, 0.0));
        assert!((t.translation - Vector3::new(0.2, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn grasp_json_shape() {
        let js = r#"{"translation":[0.1,0,0],"quaternion":[1,0,0,0],"grasp_link":"handle","object_state":[0.0]}"#;
        let g: GraspSpec = serde_json::from_str(js).unwrap();
        assert_eq!(g.grasp_link, "handle");
        assert_eq!(g.object_state_at_grasp.0, vec![0.0]);
        let back = serde_json::to_value(&g).unwrap();
        assert_eq!(back["grasp_link"], "handle");
        assert!(serde_json::from_str::<GraspSpec>(r#"{"translation":[0,0,0],"quaternion":[1,0,0,0],"grasp_link":"h","oops":1}"#).is_err());
    }
}
