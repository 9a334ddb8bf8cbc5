use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AkrError, AkrModel, LinkPair};
use crate::geometry::SphereSet;
use crate::kinematics::{KinematicTree, KinematicsError};

#[derive(Clone, Debug, Default)]
pub struct PairDerivation {
    pub pairs: BTreeSet<LinkPair>,
    pub warnings: Vec<String>,
}

/// `n` configurations drawn uniformly within the joint limits. The sequence
/// for a given seed is prefix-stable: asking for more samples only appends.
pub fn sample_configurations(tree: &KinematicTree, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds: Vec<(f64, f64)> = tree.actuated_joints().map(|j| (j.limits.lower, j.limits.upper)).collect();
    (0..n)
        .map(|_| bounds.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect())
        .collect()
}

/// Pairs of sphere-carrying links that are joint-connected, looking through
/// intermediate links that carry no spheres.
pub fn adjacent_pairs(tree: &KinematicTree) -> HashSet<LinkPair> {
    let mut out = HashSet::new();
    for (i, link) in tree.links().iter().enumerate() {
        if !link.has_spheres() {
            continue;
        }
        let mut cur = i;
        while let Some(p) = tree.parent_link(cur) {
            let parent = &tree.links()[p];
            if parent.has_spheres() {
                out.insert(LinkPair::new(&link.name, &parent.name));
                break;
            }
            cur = p;
        }
    }
    out
}

/// Robot-robot pairs: every non-adjacent pair of sphere-carrying links that
/// is not in contact across all sampled configurations.
pub fn robot_collision_pairs(robot: &KinematicTree, n_samples: usize, seed: u64) -> Result<BTreeSet<LinkPair>, AkrError> {
    let links: Vec<usize> = (0..robot.links().len()).filter(|&i| robot.links()[i].has_spheres()).collect();
    let mut candidates = Vec::new();
    for (k, &a) in links.iter().enumerate() {
        for &b in &links[k + 1..] {
            candidates.push((a, b));
        }
    }
    keep_non_permanent(robot, candidates, n_samples, seed)
}

/// Extends `base_pairs` with pairs involving at least one object link.
///
/// Adjacent pairs are always excluded; a remaining pair is masked when the
/// links' spheres intersect in every sampled configuration.
pub fn derive_collision_pairs(
    akr: &AkrModel,
    n_samples: usize,
    base_pairs: &BTreeSet<LinkPair>,
    seed: u64,
) -> Result<PairDerivation, AkrError> {
    let tree = &akr.tree;
    for pair in base_pairs {
        tree.link_id(&pair.0)?;
        tree.link_id(&pair.1)?;
    }
    if n_samples == 0 {
        return Err(AkrError::Layout("n_samples must be at least 1".into()));
    }
    let mut warnings = Vec::new();
    for link in tree.links() {
        let has_geometry = link.mesh.is_some() || !link.visual.is_empty() || !link.collision.is_empty();
        if akr.is_object_link(&link.name) && has_geometry && !link.has_spheres() {
            warnings.push(format!("link '{}' has geometry but no collision spheres; it is excluded from all pairs", link.name));
        }
    }
    let links: Vec<usize> = (0..tree.links().len()).filter(|&i| tree.links()[i].has_spheres()).collect();
    let mut candidates = Vec::new();
    for (k, &a) in links.iter().enumerate() {
        for &b in &links[k + 1..] {
            if akr.is_object_link(&tree.links()[a].name) || akr.is_object_link(&tree.links()[b].name) {
                candidates.push((a, b));
            }
        }
    }
    let mut pairs = base_pairs.clone();
    pairs.extend(keep_non_permanent(tree, candidates, n_samples, seed)?);
    Ok(PairDerivation { pairs, warnings })
}

fn keep_non_permanent(
    tree: &KinematicTree,
    candidates: Vec<(usize, usize)>,
    n_samples: usize,
    seed: u64,
) -> Result<BTreeSet<LinkPair>, AkrError> {
    let adjacent = adjacent_pairs(tree);
    let name = |i: usize| tree.links()[i].name.as_str();
    let mut open: Vec<(usize, usize)> =
        candidates.into_iter().filter(|&(a, b)| !adjacent.contains(&LinkPair::new(name(a), name(b)))).collect();
    let mut touching = vec![true; open.len()];
    for q in sample_configurations(tree, n_samples, seed) {
        let state = tree.evaluate(&q).map_err(|e: KinematicsError| AkrError::Kinematics(e))?;
        let world = |i: usize| -> SphereSet {
            tree.links()[i].spheres.as_ref().expect("filtered to sphere links").transformed(state.pose(i))
        };
        for (k, &(a, b)) in open.iter().enumerate() {
            if touching[k] && !spheres_intersect(&world(a), &world(b)) {
                touching[k] = false;
            }
        }
    }
    let mut out = BTreeSet::new();
    for (k, (a, b)) in open.drain(..).enumerate() {
        if !touching[k] {
            out.insert(LinkPair::new(name(a), name(b)));
        }
    }
    Ok(out)
}

fn spheres_intersect(a: &SphereSet, b: &SphereSet) -> bool {
    if let (Some(ba), Some(bb)) = (a.bounding_sphere(), b.bounding_sphere()) {
        if (ba.center - bb.center).norm() >= ba.radius + bb.radius {
            return false;
        }
    }
    a.spheres
        .iter()
        .any(|sa| b.spheres.iter().any(|sb| (sa.center - sb.center).norm() < sa.radius + sb.radius))
}
