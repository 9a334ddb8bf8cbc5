use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{point_in_mesh, DistanceField};
use crate::akr::{AkrModel, LinkPair};
use crate::geometry::Mesh;
use crate::kinematics::{FkState, JointKind, KinematicTree, KinematicsError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldHit {
    pub link: String,
    pub sphere: usize,
    pub penetration: f64,
    /// True when the hit came from an exact obstacle mesh rather than the grid.
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfHit {
    pub pair: LinkPair,
    pub penetration: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub world: Vec<WorldHit>,
    pub self_hits: Vec<SelfHit>,
}

impl CollisionReport {
    pub fn is_free(&self) -> bool {
        self.world.is_empty() && self.self_hits.is_empty()
    }

    pub fn max_penetration(&self) -> f64 {
        self.world
            .iter()
            .map(|h| h.penetration)
            .chain(self.self_hits.iter().map(|h| h.penetration))
            .fold(0.0, f64::max)
    }
}

/// Which sphere-carrying links take part in which checks.
#[derive(Clone, Debug)]
pub struct CollisionModel {
    /// Links checked against the distance field. Object links rigidly tied to
    /// the anchor never move and sit in the static scene, so they are left out.
    pub world_links: Vec<usize>,
    /// Robot links checked against exact obstacle meshes; the link carrying
    /// the tool frame is left out since it touches the object by design.
    pub exact_links: Vec<usize>,
    pub pairs: Vec<(usize, usize, LinkPair)>,
}

impl CollisionModel {
    pub fn new(akr: &AkrModel) -> Self {
        let tree = &akr.tree;
        let has = |i: usize| tree.links()[i].has_spheres();
        let anchor_rigid = anchor_component(tree, &akr.object_anchor_link);
        let world_links = (0..tree.links().len()).filter(|&i| has(i) && !anchor_rigid.contains(&i)).collect();
        let gripper = tree.link_id(&akr.tcp_link).ok().and_then(|mut cur| loop {
            if has(cur) {
                break Some(cur);
            }
            cur = tree.parent_link(cur)?;
        });
        let exact_links = (0..tree.links().len())
            .filter(|&i| has(i) && !akr.is_object_link(&tree.links()[i].name) && Some(i) != gripper)
            .collect();
        let pairs = akr
            .collision_pairs
            .iter()
            .filter_map(|p| {
                let a = tree.link_id(&p.0).ok()?;
                let b = tree.link_id(&p.1).ok()?;
                (has(a) && has(b)).then(|| (a, b, p.clone()))
            })
            .collect();
        Self { world_links, exact_links, pairs }
    }

    pub fn check(&self, tree: &KinematicTree, state: &FkState, field: &DistanceField, activation: f64) -> CollisionReport {
        let mut report = CollisionReport::default();
        let spheres = |i: usize| tree.links()[i].spheres.as_ref().expect("filtered to sphere links").transformed(state.pose(i));
        for &l in &self.world_links {
            for (s, sp) in spheres(l).spheres.iter().enumerate() {
                let pen = sp.radius + activation - field.distance(&sp.center);
                if pen > 0.0 {
                    report.world.push(WorldHit { link: tree.links()[l].name.clone(), sphere: s, penetration: pen, exact: false });
                }
            }
        }
        if !field.exact_obstacles().is_empty() {
            for &l in &self.exact_links {
                for (s, sp) in spheres(l).spheres.iter().enumerate() {
                    let d = field
                        .exact_obstacles()
                        .iter()
                        .map(|m| mesh_distance(&sp.center, m).0)
                        .fold(f64::INFINITY, f64::min);
                    let pen = sp.radius + activation - d;
                    if pen > 0.0 {
                        report.world.push(WorldHit { link: tree.links()[l].name.clone(), sphere: s, penetration: pen, exact: true });
                    }
                }
            }
        }
        for (a, b, pair) in &self.pairs {
            let (sa, sb) = (spheres(*a), spheres(*b));
            let mut worst = f64::NEG_INFINITY;
            for x in &sa.spheres {
                for y in &sb.spheres {
                    worst = worst.max(x.radius + y.radius + activation - (x.center - y.center).norm());
                }
            }
            if worst > 0.0 {
                report.self_hits.push(SelfHit { pair: pair.clone(), penetration: worst });
            }
        }
        report
    }
}

/// Object links connected to the anchor through fixed joints only.
fn anchor_component(tree: &KinematicTree, anchor: &str) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let Ok(start) = tree.link_id(anchor) else { return out };
    let mut stack = vec![start];
    while let Some(l) = stack.pop() {
        if !out.insert(l) {
            continue;
        }
        if let Some(pj) = tree.parent_joint(l) {
            if pj.kind == JointKind::Fixed && pj.name.starts_with(crate::akr::OBJECT_PREFIX) {
                stack.push(tree.parent_link(l).expect("joint has a parent"));
            }
        }
        for j in tree.child_joints(l) {
            if j.kind == JointKind::Fixed {
                stack.push(tree.link_id(&j.child).expect("child exists"));
            }
        }
    }
    out
}

/// Collision report for `akr` at `q`. World hits: a sphere whose field
/// distance is below `radius + activation`; self hits: an unmasked pair with
/// two spheres closer than the sum of radii plus `activation`.
pub fn check_collision(
    akr: &AkrModel,
    q: &[f64],
    field: &DistanceField,
    activation: f64,
) -> Result<CollisionReport, KinematicsError> {
    let state = akr.tree.evaluate(q)?;
    Ok(CollisionModel::new(akr).check(&akr.tree, &state, field, activation))
}

/// Closest point to `p` on triangle `abc`.
pub fn closest_point_on_triangle(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Signed distance from `p` to a closed mesh (negative inside) and the
/// closest surface point.
pub fn mesh_distance(p: &Vector3<f64>, mesh: &Mesh) -> (f64, Vector3<f64>) {
    let mut best = (f64::INFINITY, *p);
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(t);
        let q = closest_point_on_triangle(p, &a, &b, &c);
        let d = (p - q).norm();
        if d < best.0 {
            best = (d, q);
        }
    }
    if point_in_mesh(mesh, p) {
        best.0 = -best.0;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Vector3::zeros(), Vector3::x(), Vector3::y());
        let q = closest_point_on_triangle(&Vector3::new(0.2, 0.2, 1.0), &a, &b, &c);
        assert!((q - Vector3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        assert_eq!(closest_point_on_triangle(&Vector3::new(-1.0, -1.0, 0.0), &a, &b, &c), a);
        assert_eq!(closest_point_on_triangle(&Vector3::new(0.5, -1.0, 0.0), &a, &b, &c), Vector3::new(0.5, 0.0, 0.0));
        let q = closest_point_on_triangle(&Vector3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Vector3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn signed_mesh_distance() {
        let m = Mesh::centered_box([1.0, 1.0, 1.0]);
        let (d, _) = mesh_distance(&Vector3::new(0.0, 0.0, 1.0), &m);
        assert!((d - 0.5).abs() < 1e-12);
        let (d, _) = mesh_distance(&Vector3::new(0.1, 0.0, 0.0), &m);
        assert!((d + 0.4).abs() < 1e-12);
    }
}
