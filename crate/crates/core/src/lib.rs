//! Whole-body mobile manipulation trajectory generation.
//!
//! A mobile base, manipulator and manipulated object are fused into one
//! serial kinematic chain (the augmented kinematic representation, AKR):
//! a virtual planar base feeds the robot, and the object's kinematic tree is
//! re-rooted at its grasp link and hung off the tool frame. Trajectories are
//! optimized over that chain against a voxel distance field and filtered by
//! post-hoc constraint checks before being exported as a dataset.
//!
//! Module map:
//! - [`kinematics`]: trees, URDF subset, forward kinematics, Jacobians
//! - [`akr`]: object scaling, tree inversion, assembly, collision-pair masks
//! - [`collision`]: voxelization, sphere fitting, distance fields, queries
//! - [`planner`]: IK, clustering, trajectory optimization, grasp switching
//! - [`validate`]: deviation metrics, limit checks, effort statistics
//! - [`pipeline`]: task specs, batch generation, export, statistics

pub mod akr;
pub mod collision;
pub mod geometry;
pub mod kinematics;
pub mod pipeline;
pub mod planner;
pub mod scenarios;
pub mod validate;
