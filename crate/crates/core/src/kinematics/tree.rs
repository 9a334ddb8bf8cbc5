use std::collections::HashMap;
use std::ops::{Deref, DerefMut};
use std::path::Path;

use nalgebra::{DMatrix, Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::{KinematicsError, Pose};
use crate::geometry::{Mesh, SphereSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

impl JointKind {
    pub fn is_actuated(self) -> bool {
        !matches!(self, JointKind::Fixed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JointKind::Revolute => "revolute",
            JointKind::Prismatic => "prismatic",
            JointKind::Fixed => "fixed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
    /// Per-step displacement bound, when the description provides one.
    pub velocity: Option<f64>,
}

impl JointLimits {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper, velocity: None }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Child frame relative to the parent frame at zero displacement.
    pub origin: Pose,
    /// Motion axis in the child frame; `None` for fixed joints.
    pub axis: Option<Unit<Vector3<f64>>>,
    pub limits: JointLimits,
    pub parent: String,
    pub child: String,
}

impl Joint {
    pub fn fixed(name: &str, parent: &str, child: &str, origin: Pose) -> Self {
        Self {
            name: name.into(),
            kind: JointKind::Fixed,
            origin,
            axis: None,
            limits: JointLimits::new(0.0, 0.0),
            parent: parent.into(),
            child: child.into(),
        }
    }

    pub fn revolute(
        name: &str,
        parent: &str,
        child: &str,
        origin: Pose,
        axis: Vector3<f64>,
        limits: (f64, f64),
    ) -> Self {
        Self {
            name: name.into(),
            kind: JointKind::Revolute,
            origin,
            axis: Some(Unit::new_normalize(axis)),
            limits: JointLimits::new(limits.0, limits.1),
            parent: parent.into(),
            child: child.into(),
        }
    }

    pub fn prismatic(
        name: &str,
        parent: &str,
        child: &str,
        origin: Pose,
        axis: Vector3<f64>,
        limits: (f64, f64),
    ) -> Self {
        Self {
            kind: JointKind::Prismatic,
            ..Self::revolute(name, parent, child, origin, axis, limits)
        }
    }

    /// Parent-to-child transform at displacement `value`.
    pub fn transform(&self, value: f64) -> Pose {
        match (self.kind, &self.axis) {
            (JointKind::Revolute, Some(axis)) => self.origin.compose(&Pose::from_axis_angle(axis, value)),
            (JointKind::Prismatic, Some(axis)) => {
                let a = axis.into_inner() * value;
                self.origin.compose(&Pose::from_translation(a.x, a.y, a.z))
            }
            _ => self.origin,
        }
    }
}

/// Mesh reference as found in a robot description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshRef {
    pub filename: String,
    pub scale: Vector3<f64>,
    pub origin: Pose,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub visual: Vec<MeshRef>,
    pub collision: Vec<MeshRef>,
    /// All geometry of the link merged into one mesh in the link frame.
    pub mesh: Option<Mesh>,
    pub spheres: Option<SphereSet>,
}

impl Link {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), ..Default::default() }
    }

    pub fn with_mesh(mut self, mesh: Mesh) -> Self {
        self.mesh = Some(mesh);
        self
    }

    pub fn has_spheres(&self) -> bool {
        self.spheres.as_ref().is_some_and(|s| !s.is_empty())
    }
}

/// Joint displacements, one per actuated joint, in tree order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(pub Vec<f64>);

impl Configuration {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }
}

impl Deref for Configuration {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl DerefMut for Configuration {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

impl From<Vec<f64>> for Configuration {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Link poses and world-frame joint axes for one configuration.
#[derive(Clone, Debug)]
pub struct FkState {
    pub poses: Vec<Pose>,
    /// Per joint: world position of the joint frame and world motion axis.
    axes: Vec<Option<(Vector3<f64>, Vector3<f64>)>>,
}

impl FkState {
    pub fn pose(&self, link: usize) -> &Pose {
        &self.poses[link]
    }
}

/// Named links connected by typed joints, rooted at a single link.
///
/// Immutable after construction. The configuration layout is the depth-first
/// order of actuated joints from the root, siblings in document order.
#[derive(Clone, Debug)]
pub struct KinematicTree {
    links: Vec<Link>,
    link_index: HashMap<String, usize>,
    joints: Vec<Joint>,
    joint_index: HashMap<String, usize>,
    root: usize,
    parent_joint: Vec<Option<usize>>,
    child_joints: Vec<Vec<usize>>,
    /// Joints in depth-first order.
    dfs: Vec<usize>,
    actuated: Vec<usize>,
    q_index: Vec<Option<usize>>,
    /// Per link: actuated joints on the root path, root first.
    chain: Vec<Vec<usize>>,
}

impl KinematicTree {
    pub fn new(links: Vec<Link>, joints: Vec<Joint>) -> Result<Self, KinematicsError> {
        let mut link_index = HashMap::with_capacity(links.len());
        for (i, l) in links.iter().enumerate() {
            if link_index.insert(l.name.clone(), i).is_some() {
                return Err(KinematicsError::Structure(format!("duplicate link name '{}'", l.name)));
            }
        }
        if links.is_empty() {
            return Err(KinematicsError::Structure("tree has no links".into()));
        }
        let mut joint_index = HashMap::with_capacity(joints.len());
        let mut parent_joint: Vec<Option<usize>> = vec![None; links.len()];
        let mut child_joints = vec![Vec::new(); links.len()];
        for (j, joint) in joints.iter().enumerate() {
            if joint_index.insert(joint.name.clone(), j).is_some() {
                return Err(KinematicsError::Structure(format!("duplicate joint name '{}'", joint.name)));
            }
            let p = *link_index.get(&joint.parent).ok_or_else(|| {
                KinematicsError::Structure(format!("joint '{}' references unknown parent link '{}'", joint.name, joint.parent))
            })?;
            let c = *link_index.get(&joint.child).ok_or_else(|| {
                KinematicsError::Structure(format!("joint '{}' references unknown child link '{}'", joint.name, joint.child))
            })?;
            if let Some(prev) = parent_joint[c] {
                return Err(KinematicsError::Structure(format!(
                    "link '{}' has two parent joints ('{}' and '{}')",
                    joint.child, joints[prev].name, joint.name
                )));
            }
            if joint.limits.lower > joint.limits.upper || joint.limits.lower.is_nan() || joint.limits.upper.is_nan() {
                return Err(KinematicsError::InvalidJoint(format!(
                    "joint '{}' has lower limit {} above upper limit {}",
                    joint.name, joint.limits.lower, joint.limits.upper
                )));
            }
            match (joint.kind.is_actuated(), &joint.axis) {
                (true, None) => {
                    return Err(KinematicsError::InvalidJoint(format!("joint '{}' needs an axis", joint.name)))
                }
                (true, Some(a)) if (a.norm() - 1.0).abs() > 1e-9 => {
                    return Err(KinematicsError::InvalidJoint(format!("joint '{}' axis is not unit length", joint.name)))
                }
                _ => {}
            }
            parent_joint[c] = Some(j);
            child_joints[p].push(j);
        }
        let roots: Vec<usize> = (0..links.len()).filter(|&l| parent_joint[l].is_none()).collect();
        if roots.len() != 1 {
            let names: Vec<&str> = roots.iter().map(|&r| links[r].name.as_str()).collect();
            return Err(KinematicsError::Structure(format!(
                "expected exactly one root link, found {}: [{}]",
                roots.len(),
                names.join(", ")
            )));
        }
        let root = roots[0];

        let mut dfs = Vec::with_capacity(joints.len());
        let mut visited = vec![false; links.len()];
        visited[root] = true;
        // Children pushed in reverse so document order is preserved.
        let mut pending: Vec<usize> = child_joints[root].iter().rev().copied().collect();
        while let Some(j) = pending.pop() {
            let c = link_index[&joints[j].child];
            if visited[c] {
                return Err(KinematicsError::Structure(format!("cycle through link '{}'", links[c].name)));
            }
            visited[c] = true;
            dfs.push(j);
            for &k in child_joints[c].iter().rev() {
                pending.push(k);
            }
        }
        if let Some(l) = visited.iter().position(|v| !v) {
            return Err(KinematicsError::Structure(format!(
                "link '{}' is not reachable from root '{}' (cycle or disconnected)",
                links[l].name, links[root].name
            )));
        }

        let actuated: Vec<usize> = dfs.iter().copied().filter(|&j| joints[j].kind.is_actuated()).collect();
        let mut q_index = vec![None; joints.len()];
        for (i, &j) in actuated.iter().enumerate() {
            q_index[j] = Some(i);
        }
        let mut chain = vec![Vec::new(); links.len()];
        for &j in &dfs {
            let p = link_index[&joints[j].parent];
            let c = link_index[&joints[j].child];
            let mut path = chain[p].clone();
            if joints[j].kind.is_actuated() {
                path.push(j);
            }
            chain[c] = path;
        }

        Ok(Self {
            links,
            link_index,
            joints,
            joint_index,
            root,
            parent_joint,
            child_joints,
            dfs,
            actuated,
            q_index,
            chain,
        })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn into_parts(self) -> (Vec<Link>, Vec<Joint>) {
        (self.links, self.joints)
    }

    pub fn root(&self) -> &Link {
        &self.links[self.root]
    }

    pub fn root_name(&self) -> &str {
        &self.links[self.root].name
    }

    pub fn root_index(&self) -> usize {
        self.root
    }

    pub fn dof(&self) -> usize {
        self.actuated.len()
    }

    pub fn link_id(&self, name: &str) -> Result<usize, KinematicsError> {
        self.link_index.get(name).copied().ok_or_else(|| KinematicsError::UnknownLink(name.into()))
    }

    pub fn link(&self, name: &str) -> Result<&Link, KinematicsError> {
        Ok(&self.links[self.link_id(name)?])
    }

    pub fn has_link(&self, name: &str) -> bool {
        self.link_index.contains_key(name)
    }

    pub fn joint(&self, name: &str) -> Result<&Joint, KinematicsError> {
        self.joint_index
            .get(name)
            .map(|&j| &self.joints[j])
            .ok_or_else(|| KinematicsError::UnknownJoint(name.into()))
    }

    pub fn joint_id(&self, name: &str) -> Option<usize> {
        self.joint_index.get(name).copied()
    }

    pub fn parent_joint(&self, link: usize) -> Option<&Joint> {
        self.parent_joint[link].map(|j| &self.joints[j])
    }

    pub fn parent_link(&self, link: usize) -> Option<usize> {
        self.parent_joint(link).map(|j| self.link_index[&j.parent])
    }

    pub fn child_joints(&self, link: usize) -> impl Iterator<Item = &Joint> {
        self.child_joints[link].iter().map(move |&j| &self.joints[j])
    }

    /// Actuated joints in configuration order.
    pub fn actuated_joints(&self) -> impl Iterator<Item = &Joint> {
        self.actuated.iter().map(move |&j| &self.joints[j])
    }

    /// Joints in depth-first order from the root.
    pub fn joints_depth_first(&self) -> impl Iterator<Item = &Joint> {
        self.dfs.iter().map(move |&j| &self.joints[j])
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.actuated_joints().map(|j| j.name.clone()).collect()
    }

    /// Configuration index of an actuated joint.
    pub fn q_index(&self, joint_name: &str) -> Option<usize> {
        self.joint_index.get(joint_name).and_then(|&j| self.q_index[j])
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.actuated_joints().map(|j| j.limits.lower).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.actuated_joints().map(|j| j.limits.upper).collect()
    }

    /// True if `link` lies in the subtree moved by joint `joint_name`.
    pub fn is_moved_by(&self, link: usize, joint_name: &str) -> bool {
        let Some(j) = self.joint_id(joint_name) else { return false };
        let mut cur = link;
        while let Some(pj) = self.parent_joint[cur] {
            if pj == j {
                return true;
            }
            cur = self.link_index[&self.joints[pj].parent];
        }
        false
    }

    /// Links on the path from the root to `link`, root first.
    pub fn path_from_root(&self, link: usize) -> Vec<usize> {
        let mut path = vec![link];
        let mut cur = link;
        while let Some(p) = self.parent_link(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    fn check_dim(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::Dimension { expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    /// Evaluates every link pose relative to the root, plus world joint axes.
    pub fn evaluate(&self, q: &[f64]) -> Result<FkState, KinematicsError> {
        self.check_dim(q)?;
        let mut poses = vec![Pose::identity(); self.links.len()];
        let mut axes = vec![None; self.joints.len()];
        for &j in &self.dfs {
            let joint = &self.joints[j];
            let p = self.link_index[&joint.parent];
            let c = self.link_index[&joint.child];
            let value = self.q_index[j].map_or(0.0, |i| q[i]);
            if let Some(axis) = &joint.axis {
                if joint.kind.is_actuated() {
                    let frame = poses[p].compose(&joint.origin);
                    axes[j] = Some((frame.translation, frame.rotation * axis.into_inner()));
                }
            }
            poses[c] = poses[p].compose(&joint.transform(value));
        }
        Ok(FkState { poses, axes })
    }

    pub fn forward_kinematics(&self, q: &[f64], target: &str) -> Result<Pose, KinematicsError> {
        let id = self.link_id(target)?;
        Ok(self.evaluate(q)?.poses[id])
    }

    /// Linear-velocity Jacobian (3 × dof) of a point rigidly attached to `link`,
    /// given in root coordinates.
    pub fn point_jacobian(&self, state: &FkState, link: usize, point: &Vector3<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(3, self.dof());
        self.for_each_point_column(state, link, point, |col, v| {
            jac.fixed_view_mut::<3, 1>(0, col).copy_from(&v);
        });
        jac
    }

    /// Calls `f(q_index, dp/dq)` for each actuated joint that moves `link`.
    pub fn for_each_point_column(
        &self,
        state: &FkState,
        link: usize,
        point: &Vector3<f64>,
        mut f: impl FnMut(usize, Vector3<f64>),
    ) {
        for &j in &self.chain[link] {
            let (origin, axis) = state.axes[j].expect("actuated joint axis");
            let col = self.q_index[j].expect("actuated joint index");
            let v = match self.joints[j].kind {
                JointKind::Revolute => axis.cross(&(point - origin)),
                _ => axis,
            };
            f(col, v);
        }
    }

    /// Calls `f(q_index, linear, angular)` for each actuated joint that moves `link`'s frame.
    pub fn for_each_frame_column(
        &self,
        state: &FkState,
        link: usize,
        mut f: impl FnMut(usize, Vector3<f64>, Vector3<f64>),
    ) {
        let p = state.poses[link].translation;
        for &j in &self.chain[link] {
            let (origin, axis) = state.axes[j].expect("actuated joint axis");
            let col = self.q_index[j].expect("actuated joint index");
            match self.joints[j].kind {
                JointKind::Revolute => f(col, axis.cross(&(p - origin)), axis),
                _ => f(col, axis, Vector3::zeros()),
            }
        }
    }

    /// Geometric Jacobian (6 × dof) of `link`'s frame: linear rows first,
    /// angular rows second, both in root coordinates.
    pub fn link_jacobian(&self, state: &FkState, link: usize) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(6, self.dof());
        self.for_each_frame_column(state, link, |col, lin, ang| {
            jac.fixed_view_mut::<3, 1>(0, col).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, col).copy_from(&ang);
        });
        jac
    }

    pub fn jacobian(&self, q: &[f64], target: &str) -> Result<DMatrix<f64>, KinematicsError> {
        let id = self.link_id(target)?;
        let state = self.evaluate(q)?;
        Ok(self.link_jacobian(&state, id))
    }

    /// Re-expresses `q` (laid out for `self`) in `other`'s layout, matching
    /// joints by name. Joints absent from `self` take `fill`.
    pub fn remap_configuration(&self, other: &KinematicTree, q: &[f64], fill: f64) -> Vec<f64> {
        other
            .actuated_joints()
            .map(|j| self.q_index(&j.name).map_or(fill, |i| q[i]))
            .collect()
    }

    /// Clamps a configuration into the joint limits.
    pub fn clamp(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(self.actuated_joints()) {
            *v = j.limits.clamp(*v);
        }
    }

    /// Loads referenced OBJ meshes (relative to `base_dir`) and stores the
    /// merged result on each link. Collision geometry wins over visual.
    pub fn with_loaded_meshes(self, base_dir: &Path) -> Result<Self, KinematicsError> {
        let (mut links, joints) = self.into_parts();
        for link in &mut links {
            let refs = if link.collision.is_empty() { &link.visual } else { &link.collision };
            if refs.is_empty() || link.mesh.is_some() {
                continue;
            }
            let mut parts = Vec::with_capacity(refs.len());
            for r in refs {
                let mesh = Mesh::load_obj(&base_dir.join(&r.filename))?;
                parts.push(mesh.scaled(&r.scale).transformed(&r.origin));
            }
            link.mesh = Some(Mesh::merge(parts.iter()));
        }
        KinematicTree::new(links, joints)
    }
}

impl PartialEq for KinematicTree {
    fn eq(&self, other: &Self) -> bool {
        self.links == other.links && self.joints == other.joints
    }
}

pub const WORLD_LINK: &str = "world";
pub const VIRTUAL_BASE_JOINTS: [&str; 3] = ["virtual_base_x", "virtual_base_y", "virtual_base_yaw"];
const VIRTUAL_BASE_LINKS: [&str; 2] = ["virtual_base_x_link", "virtual_base_y_link"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualBaseLimits {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub yaw: (f64, f64),
}

impl Default for VirtualBaseLimits {
    fn default() -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        Self { x: (-5.0, 5.0), y: (-5.0, 5.0), yaw: (-two_pi, two_pi) }
    }
}

/// Prepends a planar base (prismatic x, prismatic y, revolute z) between a new
/// world root and the robot's root link.
pub fn insert_virtual_base(robot: &KinematicTree, limits: VirtualBaseLimits) -> Result<KinematicTree, KinematicsError> {
    for name in [WORLD_LINK, VIRTUAL_BASE_LINKS[0], VIRTUAL_BASE_LINKS[1]] {
        if robot.has_link(name) {
            return Err(KinematicsError::Naming(format!("robot already has a link named '{name}'")));
        }
    }
    for name in VIRTUAL_BASE_JOINTS {
        if robot.joint_id(name).is_some() {
            return Err(KinematicsError::Naming(format!("robot already has a joint named '{name}'")));
        }
    }
    let old_root = robot.root_name().to_string();
    let (links, joints) = robot.clone().into_parts();
    let mut all_links = vec![Link::new(WORLD_LINK), Link::new(VIRTUAL_BASE_LINKS[0]), Link::new(VIRTUAL_BASE_LINKS[1])];
    all_links.extend(links);
    let mut all_joints = vec![
        Joint::prismatic(VIRTUAL_BASE_JOINTS[0], WORLD_LINK, VIRTUAL_BASE_LINKS[0], Pose::identity(), Vector3::x(), limits.x),
        Joint::prismatic(
            VIRTUAL_BASE_JOINTS[1],
            VIRTUAL_BASE_LINKS[0],
            VIRTUAL_BASE_LINKS[1],
            Pose::identity(),
            Vector3::y(),
            limits.y,
        ),
        Joint::revolute(VIRTUAL_BASE_JOINTS[2], VIRTUAL_BASE_LINKS[1], &old_root, Pose::identity(), Vector3::z(), limits.yaw),
    ];
    all_joints.extend(joints);
    KinematicTree::new(all_links, all_joints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn chain2() -> KinematicTree {
        KinematicTree::new(
            vec![Link::new("base"), Link::new("tip")],
            vec![Joint::revolute(
                "j1",
                "base",
                "tip",
                Pose::from_translation(1.0, 0.0, 0.0),
                Vector3::z(),
                (-3.0, 3.0),
            )],
        )
        .unwrap()
    }

    #[test]
    fn fixed_identity_gives_identity() {
        let t = KinematicTree::new(
            vec![Link::new("a"), Link::new("b")],
            vec![Joint::fixed("f", "a", "b", Pose::identity())],
        )
        .unwrap();
        let p = t.forward_kinematics(&[], "b").unwrap();
        assert_eq!(p, Pose::identity());
    }

    #[test]
    fn prismatic_slides_along_axis() {
        let t = KinematicTree::new(
            vec![Link::new("a"), Link::new("b")],
            vec![Joint::prismatic("p", "a", "b", Pose::identity(), Vector3::z(), (-1.0, 1.0))],
        )
        .unwrap();
        let p = t.forward_kinematics(&[0.5], "b").unwrap();
        assert!((p.translation - Vector3::new(0.0, 0.0, 0.5)).norm() < 1e-15);
        assert!(p.rotation.angle() < 1e-15);
        let jac = t.jacobian(&[0.5], "b").unwrap();
        assert_eq!(jac.column(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn revolute_unit_lever_arm_jacobian() {
        let t = KinematicTree::new(
            vec![Link::new("a"), Link::new("b"), Link::new("c")],
            vec![
                Joint::revolute("r", "a", "b", Pose::identity(), Vector3::z(), (-3.0, 3.0)),
                Joint::fixed("f", "b", "c", Pose::from_translation(1.0, 0.0, 0.0)),
            ],
        )
        .unwrap();
        let jac = t.jacobian(&[0.0], "c").unwrap();
        let col: Vec<f64> = jac.column(0).iter().copied().collect();
        let expected = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in col.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn structure_errors() {
        let two_roots = KinematicTree::new(vec![Link::new("a"), Link::new("b")], vec![]);
        assert!(matches!(two_roots, Err(KinematicsError::Structure(_))));
        let cycle = KinematicTree::new(
            vec![Link::new("r"), Link::new("a"), Link::new("b")],
            vec![
                Joint::fixed("1", "a", "b", Pose::identity()),
                Joint::fixed("2", "b", "a", Pose::identity()),
            ],
        );
        assert!(matches!(cycle, Err(KinematicsError::Structure(_))));
        let dangling = KinematicTree::new(vec![Link::new("a")], vec![Joint::fixed("x", "a", "zz", Pose::identity())]);
        assert!(matches!(dangling, Err(KinematicsError::Structure(_))));
    }

    #[test]
    fn lookup_and_dimension_errors() {
        let t = chain2();
        assert!(matches!(t.forward_kinematics(&[0.0], "nope"), Err(KinematicsError::UnknownLink(_))));
        assert!(matches!(
            t.forward_kinematics(&[0.0, 1.0], "tip"),
            Err(KinematicsError::Dimension { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn virtual_base_translation_and_yaw() {
        let robot = KinematicTree::new(vec![Link::new("base")], vec![]).unwrap();
        let t = insert_virtual_base(&robot, VirtualBaseLimits::default()).unwrap();
        assert_eq!(t.dof(), 3);
        assert_eq!(t.root_name(), WORLD_LINK);
        let p = t.forward_kinematics(&[1.0, 2.0, 0.0], "base").unwrap();
        assert!((p.translation - Vector3::new(1.0, 2.0, 0.0)).norm() < 1e-15);
        let p = t.forward_kinematics(&[0.0, 0.0, FRAC_PI_2], "base").unwrap();
        assert!(p.translation.norm() < 1e-15);
        assert!(p.rotation.angle_to(&Pose::yaw(FRAC_PI_2).rotation) < 1e-12);
    }

    #[test]
    fn virtual_base_is_translate_then_yaw() {
        let robot = chain2();
        let t = insert_virtual_base(&robot, VirtualBaseLimits::default()).unwrap();
        let q = [0.3, -0.4, FRAC_PI_4, 0.2];
        let got = t.forward_kinematics(&q, "tip").unwrap();
        let expected = Pose::from_translation(0.3, -0.4, 0.0) * Pose::yaw(FRAC_PI_4) * robot.forward_kinematics(&[0.2], "tip").unwrap();
        assert!((got.translation - expected.translation).norm() < 1e-12);
        assert!(got.rotation.angle_to(&expected.rotation) < 1e-9);
    }

    #[test]
    fn virtual_base_name_collision() {
        let robot = KinematicTree::new(vec![Link::new("world")], vec![]).unwrap();
        assert!(matches!(
            insert_virtual_base(&robot, VirtualBaseLimits::default()),
            Err(KinematicsError::Naming(_))
        ));
    }

    #[test]
    fn ordering_is_depth_first_document_order() {
        // root has children A (doc first) and B; A has child A2.
        let t = KinematicTree::new(
            vec![Link::new("r"), Link::new("a"), Link::new("b"), Link::new("a2")],
            vec![
                Joint::revolute("ja", "r", "a", Pose::identity(), Vector3::z(), (-1.0, 1.0)),
                Joint::revolute("jb", "r", "b", Pose::identity(), Vector3::z(), (-1.0, 1.0)),
                Joint::revolute("ja2", "a", "a2", Pose::identity(), Vector3::z(), (-1.0, 1.0)),
            ],
        )
        .unwrap();
        assert_eq!(t.joint_names(), vec!["ja", "ja2", "jb"]);
    }
}
