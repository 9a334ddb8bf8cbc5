//! Kinematic trees: parsing, forward kinematics and geometric Jacobians.

mod pose;
mod tree;
mod urdf;

use thiserror::Error;

pub use pose::Pose;
pub use tree::{
    insert_virtual_base, Configuration, FkState, Joint, JointKind, JointLimits, KinematicTree, Link, MeshRef,
    VirtualBaseLimits, VIRTUAL_BASE_JOINTS, WORLD_LINK,
};
pub use urdf::{parse_robot_description, write_robot_description};

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("parse error at line {line} in <{element}>: {message}")]
    Parse { line: usize, element: String, message: String },
    #[error("invalid tree structure: {0}")]
    Structure(String),
    #[error("unsupported feature: {0}")]
    Unsupported(String),
    #[error("invalid joint: {0}")]
    InvalidJoint(String),
    #[error("unknown link '{0}'")]
    UnknownLink(String),
    #[error("unknown joint '{0}'")]
    UnknownJoint(String),
    #[error("configuration has {got} values, tree has {expected} actuated joints")]
    Dimension { expected: usize, got: usize },
    #[error("naming conflict: {0}")]
    Naming(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
