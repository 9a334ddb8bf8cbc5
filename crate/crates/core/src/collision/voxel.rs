use nalgebra::Vector3;

use super::CollisionError;
use crate::geometry::{Aabb, Mesh};

/// Boolean grid of cubic cells; cell `(i, j, k)` spans
/// `origin + [i, i+1]·pitch` etc. and is stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub origin: Vector3<f64>,
    pub pitch: f64,
    pub dims: [usize; 3],
    pub cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(origin: Vector3<f64>, pitch: f64, dims: [usize; 3]) -> Self {
        Self { origin, pitch, dims, cells: vec![false; dims[0] * dims[1] * dims[2]] }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        [i, j, idx / (self.dims[0] * self.dims[1])]
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.cells[self.index(i, j, k)]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.pitch
    }

    pub fn count_occupied(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn occupied_centers(&self) -> Vec<Vector3<f64>> {
        (0..self.cells.len())
            .filter(|&idx| self.cells[idx])
            .map(|idx| {
                let [i, j, k] = self.coords(idx);
                self.center(i, j, k)
            })
            .collect()
    }

    pub fn bounds(&self) -> Aabb {
        let size = Vector3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.pitch;
        Aabb::new(self.origin, self.origin + size)
    }
}

/// Voxelizes a mesh on a tight grid centred on its bounding box.
///
/// A cell is occupied if it touches a triangle or its centre lies inside the
/// mesh (ray parity along +x).
pub fn voxelize_mesh(mesh: &Mesh, pitch: f64) -> Result<OccupancyGrid, CollisionError> {
    if !(pitch > 0.0) || !pitch.is_finite() {
        return Err(CollisionError::InvalidParameter(format!("pitch must be positive, got {pitch}")));
    }
    if !mesh.has_area() {
        return Err(CollisionError::DegenerateMesh);
    }
    let bb = mesh.aabb();
    let ext = bb.extent();
    let dims = [0, 1, 2].map(|a| ((ext[a] / pitch - 1e-9).ceil() as usize).max(1));
    let size = Vector3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * pitch;
    let origin = (bb.min + bb.max) * 0.5 - size * 0.5;
    let mut grid = OccupancyGrid::empty(origin, pitch, dims);
    voxelize_into(mesh, &mut grid);
    Ok(grid)
}

/// Marks every cell of `grid` that the mesh occupies; cells outside the grid
/// are ignored.
pub fn voxelize_into(mesh: &Mesh, grid: &mut OccupancyGrid) {
    mark_surface(mesh, grid);
    mark_interior(mesh, grid);
}

/// Cells along `axis` that may touch `[lo, hi]`, padded by one so the exact
/// overlap test has the final say on boundary contacts.
fn cell_range(grid: &OccupancyGrid, lo: f64, hi: f64, axis: usize) -> Option<(usize, usize)> {
    let n = grid.dims[axis] as f64;
    let a = ((lo - grid.origin[axis]) / grid.pitch).floor() - 1.0;
    let b = ((hi - grid.origin[axis]) / grid.pitch).floor() + 1.0;
    let (a, b) = (a.max(0.0), b.min(n - 1.0));
    if a > b {
        return None;
    }
    Some((a as usize, b as usize))
}

fn mark_surface(mesh: &Mesh, grid: &mut OccupancyGrid) {
    let half = Vector3::repeat(grid.pitch * 0.5);
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangle(t);
        let mut bb = Aabb::empty();
        for v in &tri {
            bb.include_point(v);
        }
        let ranges: Vec<_> = (0..3).map(|a| cell_range(grid, bb.min[a], bb.max[a], a)).collect();
        let (Some(rx), Some(ry), Some(rz)) = (ranges[0], ranges[1], ranges[2]) else { continue };
        for k in rz.0..=rz.1 {
            for j in ry.0..=ry.1 {
                for i in rx.0..=rx.1 {
                    let idx = grid.index(i, j, k);
                    if !grid.cells[idx] && triangle_box_overlap(&tri, &grid.center(i, j, k), &half) {
                        grid.cells[idx] = true;
                    }
                }
            }
        }
    }
}

fn mark_interior(mesh: &Mesh, grid: &mut OccupancyGrid) {
    let [nx, ny, nz] = grid.dims;
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); ny * nz];
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangle(t);
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for v in &tri {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let rows_in = |a: usize| {
            let first = ((lo[a] - grid.origin[a]) / grid.pitch - 0.5).ceil().max(0.0);
            let last = ((hi[a] - grid.origin[a]) / grid.pitch - 0.5).floor().min(grid.dims[a] as f64 - 1.0);
            (first as usize, last)
        };
        let (j0, j1) = rows_in(1);
        let (k0, k1) = rows_in(2);
        if j1 < 0.0 || k1 < 0.0 {
            continue;
        }
        for k in k0..=k1 as usize {
            for j in j0..=j1 as usize {
                rows[j + ny * k].push(t);
            }
        }
    }
    let mut hits = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            let tris = &rows[j + ny * k];
            if tris.is_empty() {
                continue;
            }
            let c = grid.center(0, j, k);
            hits.clear();
            hits.extend(tris.iter().filter_map(|&t| ray_x_hit(&mesh.triangle(t), c.y, c.z)));
            if hits.is_empty() {
                continue;
            }
            hits.sort_by(f64::total_cmp);
            // Walk cells left to right, tracking how many hits lie beyond.
            let mut next = 0;
            for i in 0..nx {
                let x = grid.center(i, j, k).x;
                while next < hits.len() && hits[next] <= x {
                    next += 1;
                }
                if (hits.len() - next) % 2 == 1 {
                    let idx = grid.index(i, j, k);
                    grid.cells[idx] = true;
                }
            }
        }
    }
}

/// Orientation of `p` against the edge `u -> v` in the yz-plane, with `p`
/// symbolically perturbed by `(ε, ε²)` so that the result is never zero.
/// Endpoints are put in a canonical order first, so a shared edge is
/// evaluated with identical rounding from both triangles.
fn edge_side(u: (f64, f64), v: (f64, f64), p: (f64, f64)) -> f64 {
    let (a, b, flip) = if u <= v { (u, v, 1.0) } else { (v, u, -1.0) };
    let (dy, dz) = (b.0 - a.0, b.1 - a.1);
    let o = dy * (p.1 - a.1) - dz * (p.0 - a.0);
    let s = if o != 0.0 {
        o.signum()
    } else if dz != 0.0 {
        -dz.signum()
    } else {
        dy.signum()
    };
    flip * s
}

/// x-coordinate where the +x line through `(y, z)` crosses the triangle.
pub(crate) fn ray_x_hit(tri: &[Vector3<f64>; 3], y: f64, z: f64) -> Option<f64> {
    let p = (y, z);
    let q = tri.map(|v| (v.y, v.z));
    let area = (q[1].0 - q[0].0) * (q[2].1 - q[0].1) - (q[1].1 - q[0].1) * (q[2].0 - q[0].0);
    if area == 0.0 {
        return None;
    }
    let s0 = edge_side(q[1], q[2], p);
    let s1 = edge_side(q[2], q[0], p);
    let s2 = edge_side(q[0], q[1], p);
    if !(s0 == s1 && s1 == s2) {
        return None;
    }
    // Barycentric weights from signed sub-areas.
    let sub = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let (w0, w1, w2) = (sub(q[1], q[2]) / area, sub(q[2], q[0]) / area, sub(q[0], q[1]) / area);
    Some(w0 * tri[0].x + w1 * tri[1].x + w2 * tri[2].x)
}

/// Ray-parity inside test for a single point.
pub fn point_in_mesh(mesh: &Mesh, p: &Vector3<f64>) -> bool {
    let crossings = (0..mesh.triangles.len())
        .filter_map(|t| ray_x_hit(&mesh.triangle(t), p.y, p.z))
        .filter(|&x| x > p.x)
        .count();
    crossings % 2 == 1
}

/// Separating-axis test between a triangle and an axis-aligned box; touching
/// counts as overlap.
pub fn triangle_box_overlap(tri: &[Vector3<f64>; 3], center: &Vector3<f64>, half: &Vector3<f64>) -> bool {
    let v = tri.map(|p| p - center);
    let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let separated = |axis: &Vector3<f64>| {
        if axis.norm_squared() == 0.0 {
            return false;
        }
        let p = v.map(|x| x.dot(axis));
        let r = half.x * axis.x.abs() + half.y * axis.y.abs() + half.z * axis.z.abs();
        let (lo, hi) = (p[0].min(p[1]).min(p[2]), p[0].max(p[1]).max(p[2]));
        lo > r || hi < -r
    };
    for a in 0..3 {
        let mut axis = Vector3::zeros();
        axis[a] = 1.0;
        for edge in &e {
            if separated(&axis.cross(edge)) {
                return false;
            }
        }
        if separated(&axis) {
            return false;
        }
    }
    !separated(&e[0].cross(&e[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_single_voxel() {
        let g = voxelize_mesh(&Mesh::cuboid(Vector3::zeros(), Vector3::repeat(1.0)), 1.0).unwrap();
        assert_eq!(g.dims, [1, 1, 1]);
        assert_eq!(g.count_occupied(), 1);
    }

    #[test]
    fn box_tiles_exactly() {
        let g = voxelize_mesh(&Mesh::cuboid(Vector3::zeros(), Vector3::new(0.1, 0.1, 0.2)), 0.05).unwrap();
        assert_eq!(g.dims, [2, 2, 4]);
        assert_eq!(g.count_occupied(), 16);
    }

    #[test]
    fn interior_filled_for_large_box() {
        let g = voxelize_mesh(&Mesh::cuboid(Vector3::zeros(), Vector3::repeat(1.0)), 0.1).unwrap();
        assert_eq!(g.count_occupied(), 1000);
        let hollow = g.cells.iter().filter(|c| !**c).count();
        assert_eq!(hollow, 0);
    }

    #[test]
    fn parity_inside_points() {
        let m = Mesh::cuboid(Vector3::zeros(), Vector3::repeat(1.0));
        assert!(point_in_mesh(&m, &Vector3::new(0.5, 0.5, 0.5)));
        // On the diagonal shared by two triangles of a face.
        assert!(point_in_mesh(&m, &Vector3::new(0.3, 0.5, 0.5)));
        assert!(point_in_mesh(&m, &Vector3::new(0.2, 0.25, 0.25)));
        assert!(!point_in_mesh(&m, &Vector3::new(1.5, 0.5, 0.5)));
        assert!(!point_in_mesh(&m, &Vector3::new(-0.5, 2.0, 0.5)));
    }

    #[test]
    fn degenerate_mesh_rejected() {
        let flat = Mesh::new(vec![Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(voxelize_mesh(&flat, 0.1), Err(CollisionError::DegenerateMesh)));
        let cube = Mesh::cuboid(Vector3::zeros(), Vector3::repeat(1.0));
        assert!(voxelize_mesh(&cube, 0.0).is_err());
    }

    #[test]
    fn sat_cases() {
        let tri = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)];
        let h = Vector3::repeat(0.1);
        assert!(triangle_box_overlap(&tri, &Vector3::new(0.2, 0.2, 0.05), &h));
        assert!(triangle_box_overlap(&tri, &Vector3::new(0.2, 0.2, 0.1), &h));
        assert!(!triangle_box_overlap(&tri, &Vector3::new(0.2, 0.2, 0.2), &h));
        assert!(!triangle_box_overlap(&tri, &Vector3::new(0.8, 0.8, 0.0), &h));
    }
}
