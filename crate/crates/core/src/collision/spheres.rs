use super::{voxelize_mesh, CollisionError};
use crate::geometry::{Mesh, Sphere, SphereSet};

/// Conservative sphere approximation of a mesh.
///
/// The mesh is shrunk by `downscale` about its vertex centroid and voxelized
/// at `pitch`; every occupied voxel becomes a sphere of radius `pitch / 2` at
/// its centre. The cloud is then shifted so its centroid matches the
/// original vertex centroid.
pub fn fit_spheres(mesh: &Mesh, pitch: f64, downscale: f64) -> Result<SphereSet, CollisionError> {
    if !(downscale > 0.0 && downscale <= 1.0) {
        return Err(CollisionError::InvalidParameter(format!("downscale must lie in (0, 1], got {downscale}")));
    }
    let centroid = mesh.vertex_centroid();
    let shrunk = mesh.scaled_about(downscale, &centroid);
    let grid = voxelize_mesh(&shrunk, pitch)?;
    let centers = grid.occupied_centers();
    let cloud = centers.iter().sum::<nalgebra::Vector3<f64>>() / centers.len() as f64;
    let shift = centroid - cloud;
    let spheres = centers.into_iter().map(|c| Sphere { center: c + shift, radius: pitch * 0.5 }).collect();
    Ok(SphereSet::new(spheres).expect("radius is positive"))
}
