//! Sphere approximations, voxel distance fields and collision queries.

mod check;
mod field;
mod spheres;
mod voxel;

use thiserror::Error;

pub use check::{
    check_collision, closest_point_on_triangle, mesh_distance, CollisionModel, CollisionReport, SelfHit, WorldHit,
};
pub use field::{
    build_distance_field, distance_transform_sq, mask_phase, read_field_dump, DistanceField, FieldConfig, FieldDump, Phase,
};
pub use spheres::fit_spheres;
pub use voxel::{point_in_mesh, triangle_box_overlap, voxelize_into, voxelize_mesh, OccupancyGrid};

#[derive(Debug, Error)]
pub enum CollisionError {
    #[error("mesh has no triangle with non-zero area")]
    DegenerateMesh,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("distance field needs {cells} cells, over the budget of {budget}; use a larger voxel_size")]
    CellBudget { cells: usize, budget: usize },
    #[error("malformed field dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
