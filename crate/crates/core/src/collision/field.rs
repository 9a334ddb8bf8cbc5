use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{voxelize_into, CollisionError, OccupancyGrid};
use crate::geometry::{Aabb, Mesh};
use crate::kinematics::Pose;

/// Sentinel for "no site on this line" inside the distance transform.
const FAR: f64 = 1e30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub voxel_size: f64,
    pub margin: f64,
    pub max_cells: usize,
    /// Distance reported for free space beyond any obstacle or outside the
    /// field.
    pub clamp_distance: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { voxel_size: 0.02, margin: 0.3, max_cells: 20_000_000, clamp_distance: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    Manipulation,
}

/// Signed distance grid sampled at cell centres.
///
/// Free cells hold the Euclidean distance to the nearest occupied cell
/// centre. Occupied cells hold `-(e - voxel_size)` where `e` is the distance
/// to the nearest free cell centre, so the boundary layer reads zero and the
/// field stays 1-Lipschitz across the surface.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    origin: Vector3<f64>,
    voxel_size: f64,
    dims: [usize; 3],
    values: Vec<f64>,
    occupancy: OccupancyGrid,
    exact_obstacles: Vec<Mesh>,
    clamp: f64,
}

impl DistanceField {
    pub fn from_occupancy(occupancy: OccupancyGrid, clamp: f64) -> Self {
        let dims = occupancy.dims;
        let v = occupancy.pitch;
        let to_occ = distance_transform_sq(&occupancy.cells, dims);
        let free: Vec<bool> = occupancy.cells.iter().map(|c| !c).collect();
        let to_free = distance_transform_sq(&free, dims);
        let values = occupancy
            .cells
            .iter()
            .enumerate()
            .map(|(i, &occ)| {
                if occ {
                    (-(to_free[i].sqrt() * v - v)).max(-clamp)
                } else {
                    (to_occ[i].sqrt() * v).min(clamp)
                }
            })
            .collect();
        Self { origin: occupancy.origin, voxel_size: v, dims, values, occupancy, exact_obstacles: Vec::new(), clamp }
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.occupancy.index(i, j, k)]
    }

    pub fn occupancy(&self) -> &OccupancyGrid {
        &self.occupancy
    }

    /// Meshes checked exactly instead of through the grid.
    pub fn exact_obstacles(&self) -> &[Mesh] {
        &self.exact_obstacles
    }

    pub fn clamp_distance(&self) -> f64 {
        self.clamp
    }

    pub fn bounds(&self) -> Aabb {
        self.occupancy.bounds()
    }

    /// Trilinear distance at `p`; the clamp distance outside the field.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.distance_and_gradient(p).0
    }

    /// Trilinear distance and its spatial gradient. Between the outermost
    /// cell centres and the field boundary the value is held constant along
    /// the clamped axis.
    pub fn distance_and_gradient(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        let mut live = [false; 3];
        for a in 0..3 {
            let u = (p[a] - self.origin[a]) / self.voxel_size;
            if !(0.0..=self.dims[a] as f64).contains(&u) {
                return (self.clamp, Vector3::zeros());
            }
            let n = self.dims[a];
            let g = u - 0.5;
            if n == 1 || g <= 0.0 {
                base[a] = 0;
            } else if g >= (n - 1) as f64 {
                base[a] = n - 2;
                t[a] = 1.0;
            } else {
                let i = (g.floor() as usize).min(n - 2);
                base[a] = i;
                t[a] = g - i as f64;
                live[a] = true;
            }
        }
        let at = |dx: usize, dy: usize, dz: usize| {
            let i = (base[0] + dx).min(self.dims[0] - 1);
            let j = (base[1] + dy).min(self.dims[1] - 1);
            let k = (base[2] + dz).min(self.dims[2] - 1);
            self.value(i, j, k)
        };
        let mut c = [[[0.0; 2]; 2]; 2];
        for (dx, plane) in c.iter_mut().enumerate() {
            for (dy, row) in plane.iter_mut().enumerate() {
                for (dz, v) in row.iter_mut().enumerate() {
                    *v = at(dx, dy, dz);
                }
            }
        }
        let lerp = |a: f64, b: f64, s: f64| a + (b - a) * s;
        let [tx, ty, tz] = t;
        let cx = |dy: usize, dz: usize| lerp(c[0][dy][dz], c[1][dy][dz], tx);
        let cxy = |dz: usize| lerp(cx(0, dz), cx(1, dz), ty);
        let value = lerp(cxy(0), cxy(1), tz);

        let mut grad = Vector3::zeros();
        if live[0] {
            let d = |dy: usize, dz: usize| c[1][dy][dz] - c[0][dy][dz];
            grad.x = lerp(lerp(d(0, 0), d(1, 0), ty), lerp(d(0, 1), d(1, 1), ty), tz);
        }
        if live[1] {
            grad.y = lerp(cx(1, 0) - cx(0, 0), cx(1, 1) - cx(0, 1), tz);
        }
        if live[2] {
            grad.z = cxy(1) - cxy(0);
        }
        (value, grad / self.voxel_size)
    }

    /// Flat little-endian dump: three u64 dims, f64 voxel size, three f64
    /// origin components, then f32 values x-fastest.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for d in self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&self.voxel_size.to_le_bytes())?;
        for a in 0..3 {
            w.write_all(&self.origin[a].to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }
}

/// Contents of a field dump.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDump {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: Vector3<f64>,
    pub values: Vec<f32>,
}

pub fn read_field_dump<R: Read>(mut r: R) -> Result<FieldDump, CollisionError> {
    let mut b8 = [0u8; 8];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        r.read_exact(&mut b8)?;
        *d = usize::try_from(u64::from_le_bytes(b8)).map_err(|_| CollisionError::Dump("dimension overflow".into()))?;
    }
    r.read_exact(&mut b8)?;
    let voxel_size = f64::from_le_bytes(b8);
    let mut origin = Vector3::zeros();
    for a in 0..3 {
        r.read_exact(&mut b8)?;
        origin[a] = f64::from_le_bytes(b8);
    }
    let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| CollisionError::Dump("size overflow".into()))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != n * 4 {
        return Err(CollisionError::Dump(format!("expected {} value bytes, found {}", n * 4, raw.len())));
    }
    let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(FieldDump { dims, voxel_size, origin, values })
}

/// Exact squared distance (in cell units) from every cell to the nearest
/// `true` cell; infinite when there is none. Separable lower-envelope passes.
pub fn distance_transform_sq(sites: &[bool], dims: [usize; 3]) -> Vec<f64> {
    let mut f: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let longest = dims.iter().copied().max().unwrap_or(0);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut scratch = Envelope::new(longest);
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis];
        let stride = strides[axis];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for b in 0..dims[others[1]] {
            for a in 0..dims[others[0]] {
                let start = a * strides[others[0]] + b * strides[others[1]];
                for q in 0..n {
                    line[q] = f[start + q * stride];
                }
                scratch.run(&line[..n], &mut out[..n]);
                for q in 0..n {
                    f[start + q * stride] = out[q];
                }
            }
        }
    }
    for v in &mut f {
        if *v >= FAR {
            *v = f64::INFINITY;
        }
    }
    f
}

struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Self { v: vec![0; n], z: vec![0.0; n + 1] }
    }

    /// 1D squared-distance transform of the sampled function `f`.
    fn run(&mut self, f: &[f64], out: &mut [f64]) {
        let sq = |x: usize| (x * x) as f64;
        let mut k: Option<usize> = None;
        for q in 0..f.len() {
            if f[q] >= FAR {
                continue;
            }
            let mut s = f64::NEG_INFINITY;
            while let Some(kk) = k {
                let p = self.v[kk];
                s = ((f[q] + sq(q)) - (f[p] + sq(p))) / (2.0 * (q as f64 - p as f64));
                if s <= self.z[kk] {
                    k = kk.checked_sub(1);
                    s = f64::NEG_INFINITY;
                } else {
                    break;
                }
            }
            let kk = k.map_or(0, |kk| kk + 1);
            self.v[kk] = q;
            self.z[kk] = s;
            self.z[kk + 1] = f64::INFINITY;
            k = Some(kk);
        }
        let Some(_) = k else {
            out.fill(FAR);
            return;
        };
        let mut j = 0;
        for (q, o) in out.iter_mut().enumerate() {
            while self.z[j + 1] < q as f64 {
                j += 1;
            }
            let p = self.v[j];
            let d = q as f64 - p as f64;
            *o = d * d + f[p];
        }
    }
}

fn overlaps(a: &Aabb, b: &Aabb) -> bool {
    (0..3).all(|i| a.min[i] <= b.max[i] && b.min[i] <= a.max[i])
}

/// Voxelizes the posed scene meshes into a field covering `bbox` grown by the
/// configured margin on every side.
pub fn build_distance_field(
    scene: &[(Mesh, Pose)],
    bbox: &Aabb,
    config: &FieldConfig,
) -> Result<DistanceField, CollisionError> {
    let v = config.voxel_size;
    if !(v > 0.0) || !v.is_finite() {
        return Err(CollisionError::InvalidParameter(format!("voxel_size must be positive, got {v}")));
    }
    if !(config.margin >= 0.0) {
        return Err(CollisionError::InvalidParameter(format!("margin must be non-negative, got {}", config.margin)));
    }
    if bbox.is_empty() || !(0..3).all(|a| bbox.min[a].is_finite() && bbox.max[a].is_finite()) {
        return Err(CollisionError::InvalidParameter("bounding box is empty or not finite".into()));
    }
    let region = bbox.expanded(config.margin);
    let ext = region.extent();
    let dims = [0, 1, 2].map(|a| ((ext[a] / v - 1e-9).ceil() as usize).max(1));
    let cells = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).unwrap_or(usize::MAX);
    if cells > config.max_cells {
        return Err(CollisionError::CellBudget { cells, budget: config.max_cells });
    }
    let mut grid = OccupancyGrid::empty(region.min, v, dims);
    let bounds = grid.bounds();
    for (mesh, pose) in scene {
        let posed = mesh.transformed(pose);
        if !posed.is_empty() && overlaps(&posed.aabb(), &bounds) {
            voxelize_into(&posed, &mut grid);
        }
    }
    Ok(DistanceField::from_occupancy(grid, config.clamp_distance))
}

/// Clears the cells occupied by the object at `object_pose` and recomputes
/// distances. In the approach phase the posed object mesh is additionally
/// kept as an exact obstacle.
pub fn mask_phase(field: &DistanceField, object_mesh: &Mesh, object_pose: &Pose, phase: Phase) -> DistanceField {
    let posed = object_mesh.transformed(object_pose);
    if posed.is_empty() || !overlaps(&posed.aabb(), &field.bounds()) {
        return field.clone();
    }
    let mut object = OccupancyGrid::empty(field.origin, field.voxel_size, field.dims);
    voxelize_into(&posed, &mut object);
    let mut occupancy = field.occupancy.clone();
    let mut cleared = 0usize;
    for (cell, &obj) in occupancy.cells.iter_mut().zip(&object.cells) {
        if obj && *cell {
            *cell = false;
            cleared += 1;
        }
    }
    let mut out = if cleared == 0 { field.clone() } else { DistanceField::from_occupancy(occupancy, field.clamp) };
    out.exact_obstacles = field.exact_obstacles.clone();
    if phase == Phase::Approach {
        out.exact_obstacles.push(posed);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(sites: &[bool], dims: [usize; 3]) -> Vec<f64> {
        let idx = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
        let mut out = vec![f64::INFINITY; sites.len()];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    for c in 0..dims[2] {
                        for b in 0..dims[1] {
                            for a in 0..dims[0] {
                                if sites[idx(a, b, c)] {
                                    let d = [i as f64 - a as f64, j as f64 - b as f64, k as f64 - c as f64];
                                    let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                                    let o = &mut out[idx(i, j, k)];
                                    *o = o.min(d2);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn transform_matches_brute_force_small() {
        let dims = [5, 4, 3];
        let mut sites = vec![false; 60];
        sites[7] = true;
        sites[41] = true;
        assert_eq!(distance_transform_sq(&sites, dims), brute(&sites, dims));
        assert!(distance_transform_sq(&[false; 8], [2, 2, 2]).iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn empty_scene_reads_clamp() {
        let bb = Aabb::new(Vector3::zeros(), Vector3::repeat(0.2));
        let f = build_distance_field(&[], &bb, &FieldConfig { margin: 0.1, voxel_size: 0.05, ..Default::default() }).unwrap();
        assert_eq!(f.dims(), [8, 8, 8]);
        assert!(f.values().iter().all(|&v| v == 10.0));
        assert_eq!(f.distance(&Vector3::repeat(0.1)), 10.0);
        assert_eq!(f.distance(&Vector3::repeat(50.0)), 10.0);
    }

    #[test]
    fn cube_distance_above_face() {
        let cube = Mesh::centered_box([1.0, 1.0, 1.0]);
        let bb = Aabb::new(Vector3::repeat(-0.6), Vector3::new(0.6, 0.6, 1.2));
        let cfg = FieldConfig { margin: 0.1, ..Default::default() };
        let f = build_distance_field(&[(cube, Pose::identity())], &bb, &cfg).unwrap();
        let d = f.distance(&Vector3::new(0.0, 0.0, 1.0));
        assert!((d - 0.5).abs() <= 0.02, "{d}");
        assert!(f.distance(&Vector3::zeros()) < 0.0);
    }

    #[test]
    fn budget_enforced() {
        let bb = Aabb::new(Vector3::zeros(), Vector3::repeat(5.0));
        let cfg = FieldConfig { voxel_size: 0.01, max_cells: 1_000_000, ..Default::default() };
        assert!(matches!(build_distance_field(&[], &bb, &cfg), Err(CollisionError::CellBudget { .. })));
    }

    #[test]
    fn dump_roundtrip() {
        let cube = Mesh::centered_box([0.2, 0.2, 0.2]);
        let bb = Aabb::new(Vector3::repeat(-0.1), Vector3::repeat(0.1));
        let cfg = FieldConfig { voxel_size: 0.05, margin: 0.05, ..Default::default() };
        let f = build_distance_field(&[(cube, Pose::identity())], &bb, &cfg).unwrap();
        let mut buf = Vec::new();
        f.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 56 + 4 * f.values().len());
        let d = read_field_dump(&buf[..]).unwrap();
        assert_eq!(d.dims, f.dims());
        assert_eq!(d.voxel_size, 0.05);
        assert_eq!(d.values[5], f.values()[5] as f32);
        assert!(read_field_dump(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let cube = Mesh::centered_box([0.4, 0.4, 0.4]);
        let bb = Aabb::new(Vector3::repeat(-0.5), Vector3::repeat(0.5));
        let cfg = FieldConfig { voxel_size: 0.05, margin: 0.0, ..Default::default() };
        let f = build_distance_field(&[(cube, Pose::identity())], &bb, &cfg).unwrap();
        let p = Vector3::new(0.331, -0.127, 0.052);
        let (_, g) = f.distance_and_gradient(&p);
        let h = 1e-6;
        for a in 0..3 {
            let mut e = Vector3::zeros();
            e[a] = h;
            let fd = (f.distance(&(p + e)) - f.distance(&(p - e))) / (2.0 * h);
            assert!((fd - g[a]).abs() < 1e-6, "axis {a}: {fd} vs {}", g[a]);
        }
    }
}
