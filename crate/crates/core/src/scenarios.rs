//! Small hand-built tasks: a planar mobile manipulator opening a hinged door.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};

use crate::akr::{fit_link_spheres, AkrOptions, GraspSpec};
use crate::collision::{build_distance_field, DistanceField, FieldConfig};
use crate::geometry::{Aabb, Mesh};
use crate::kinematics::{
    insert_virtual_base, write_robot_description, Configuration, Joint, KinematicTree, Link, MeshRef, Pose,
    VirtualBaseLimits,
};
use crate::pipeline::{GenerationSpec, ObjectSpec, RobotSpec, SceneEntry, TaskSpec};
use crate::planner::GraspSwitchTask;

pub const ARM_HEIGHT: f64 = 0.8;
pub const TCP_LINK: &str = "tcp";
pub const ROBOT_SPHERE_PITCH: f64 = 0.1;
pub const OBJECT_SPHERE_PITCH: f64 = 0.05;
/// Acceleration limit of the toy tasks, per second squared.
pub const TOY_ACCELERATION: f64 = 2.0;
pub const TOY_ARM: [f64; 2] = [0.5, 0.4];
pub const TOY_ELBOW: (f64, f64) = (-2.6, 2.6);
pub const TOY_BASE: VirtualBaseLimits = VirtualBaseLimits { x: (-0.5, 1.0), y: (-1.5, 0.8), yaw: (-PI, PI) };
pub const TOY_HOME: [f64; 5] = [0.45, -0.3, 0.0, -0.6, 1.2];

fn cuboid(min: [f64; 3], max: [f64; 3]) -> Mesh {
    Mesh::cuboid(Vector3::from(min), Vector3::from(max))
}

/// Planar arm on a box base: revolute z joints at height `ARM_HEIGHT`, one
/// per entry of `lengths`, ending in the `tcp` frame.
pub fn toy_arm(lengths: &[f64], elbow: (f64, f64)) -> KinematicTree {
    let mut links = vec![Link::new("base_link").with_mesh(cuboid([-0.2, -0.2, 0.0], [0.2, 0.2, 0.3]))];
    let mut joints = Vec::new();
    let mut parent = "base_link".to_string();
    for (i, &len) in lengths.iter().enumerate() {
        let name = format!("link{}", i + 1);
        links.push(Link::new(&name).with_mesh(cuboid([0.0, -0.03, -0.03], [len, 0.03, 0.03])));
        let (origin, limits) = if i == 0 {
            (Pose::from_translation(0.0, 0.0, ARM_HEIGHT), (-PI, PI))
        } else {
            (Pose::from_translation(lengths[i - 1], 0.0, 0.0), elbow)
        };
        joints.push(Joint::revolute(&format!("joint{}", i + 1), &parent, &name, origin, Vector3::z(), limits));
        parent = name;
    }
    links.push(Link::new(TCP_LINK));
    joints.push(Joint::fixed("tcp_joint", &parent, TCP_LINK, Pose::from_translation(lengths[lengths.len() - 1], 0.0, 0.0)));
    KinematicTree::new(links, joints).expect("toy robot is a valid tree")
}

/// [`toy_arm`] with fitted link spheres and the virtual base.
pub fn toy_robot(lengths: &[f64], base: VirtualBaseLimits, elbow: (f64, f64)) -> KinematicTree {
    let robot = fit_link_spheres(toy_arm(lengths, elbow), ROBOT_SPHERE_PITCH, 0.95).expect("toy robot meshes are valid");
    insert_virtual_base(&robot, base).expect("toy robot has no virtual base yet")
}

/// Door with a frame, a panel on a hinge (axis −z, so positive angles swing
/// the free edge toward the frame's −y side) and a handle 0.12 m off the panel.
pub fn toy_door() -> KinematicTree {
    let links = vec![
        Link::new("door_frame"),
        Link::new("door_panel").with_mesh(cuboid([0.02, -0.02, 0.5], [0.8, 0.02, 1.1])),
        Link::new("handle").with_mesh(cuboid([-0.02, -0.02, -0.05], [0.02, 0.02, 0.05])),
    ];
    let joints = vec![
        Joint::revolute("hinge", "door_frame", "door_panel", Pose::identity(), -Vector3::z(), (0.0, 1.6)),
        Joint::fixed("handle_joint", "door_panel", "handle", Pose::from_translation(0.7, -0.12, ARM_HEIGHT)),
    ];
    KinematicTree::new(links, joints).expect("toy door is a valid tree")
}

/// World pose of the door frame: hinge at (1.2, 0.4), panel hanging toward −y.
pub fn door_anchor() -> Pose {
    Pose::new(Vector3::new(1.2, 0.4, 0.0), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -FRAC_PI_2))
}

/// Tool frame at `(x, −0.12, ARM_HEIGHT)` in the door frame at the closed
/// state, pointing at the panel.
pub fn door_grasp(link: &str, x: f64) -> GraspSpec {
    GraspSpec {
        tcp_pose_in_object_base: Pose::new(
            Vector3::new(x, -0.12, ARM_HEIGHT),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
        ),
        grasp_link: link.into(),
        object_state_at_grasp: Configuration(vec![0.0]),
    }
}

pub fn toy_obstacles() -> Vec<(Mesh, Pose)> {
    vec![(Mesh::centered_box([0.2, 0.2, 0.6]), Pose::from_translation(0.9, -0.6, 0.3))]
}

/// Field over the door swept between `phi_lo` and `phi_hi` and the obstacles.
pub fn door_field(scene: &[(Mesh, Pose)], phi_lo: f64, phi_hi: f64, config: &FieldConfig) -> DistanceField {
    let door = toy_door();
    let anchor = door_anchor();
    let mut bbox = Aabb::empty();
    for k in 0..=8 {
        let phi = phi_lo + (phi_hi - phi_lo) * k as f64 / 8.0;
        let state = door.evaluate(&[phi]).expect("door has one joint");
        for (i, l) in door.links().iter().enumerate() {
            if let Some(m) = &l.mesh {
                bbox = bbox.union(&m.transformed(&anchor.compose(state.pose(i))).aabb());
            }
        }
    }
    for (m, p) in scene {
        bbox = bbox.union(&m.transformed(p).aabb());
    }
    build_distance_field(scene, &bbox, config).expect("toy field fits the cell budget")
}

fn options() -> AkrOptions {
    AkrOptions { sphere_pitch: OBJECT_SPHERE_PITCH, pair_samples: 50, ..AkrOptions::new(TCP_LINK) }
}

/// Two-link arm (0.5 m, 0.4 m) opening the door from closed to `phi_goal`
/// with the handle grasp, one box obstacle near the swing.
pub fn toy_door_task(phi_goal: f64, seed: u64) -> GraspSwitchTask {
    let robot = toy_robot(&TOY_ARM, TOY_BASE, TOY_ELBOW);
    let field = door_field(&toy_obstacles(), 0.0, phi_goal, &FieldConfig::default());
    let mut task = GraspSwitchTask::new(
        robot,
        toy_door(),
        options(),
        Arc::new(field),
        door_anchor(),
        vec![0.0],
        vec![phi_goal],
        vec![door_grasp("handle", 0.7)],
        TOY_HOME.to_vec(),
    );
    task.max_acceleration = TOY_ACCELERATION;
    task.seed = seed;
    task
}

/// Base confined beyond the hinge with a three-link arm. The handle is out of
/// reach while the door is nearly closed, and a grasp on the panel close to
/// the hinge folds the arm past its elbow limits at wide angles.
pub fn constrained_door_task(phi_goal: f64) -> GraspSwitchTask {
    let base = VirtualBaseLimits { x: (0.75, 0.85), y: (0.65, 0.75), yaw: (-PI, PI) };
    let robot = toy_robot(&[0.35, 0.3, 0.15], base, (-2.6, 2.6));
    let field = door_field(&[], 0.0, phi_goal, &FieldConfig::default());
    let mut task = GraspSwitchTask::new(
        robot,
        toy_door(),
        options(),
        Arc::new(field),
        door_anchor(),
        vec![0.0],
        vec![phi_goal],
        vec![door_grasp("handle", 0.7), door_grasp("door_panel", 0.35)],
        vec![0.8, 0.7, 0.0, 0.3, 0.3, 0.3],
    );
    task.max_velocity = 1.0;
    task.max_acceleration = TOY_ACCELERATION;
    task
}

/// Replaces in-memory link meshes with OBJ files under `dir/meshes` so the
/// tree can be written as a robot description.
fn externalize_meshes(tree: &KinematicTree, dir: &Path, prefix: &str) -> std::io::Result<KinematicTree> {
    let (mut links, joints) = tree.clone().into_parts();
    for link in &mut links {
        if let Some(mesh) = link.mesh.take() {
            let file = format!("meshes/{prefix}_{}.obj", link.name);
            fs::write(dir.join(&file), mesh.to_obj_string())?;
            link.collision = vec![MeshRef { filename: file, scale: Vector3::repeat(1.0), origin: Pose::identity() }];
        }
        link.spheres = None;
    }
    Ok(KinematicTree::new(links, joints).expect("parts come from a valid tree"))
}

/// Writes the toy door task as files (robot and door descriptions, OBJ
/// meshes, scene manifest, task spec) into `dir` and returns the spec path.
pub fn write_toy_door_assets(dir: &Path, goals: &[f64], generation: GenerationSpec) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir.join("meshes"))?;
    let robot = externalize_meshes(&toy_arm(&TOY_ARM, TOY_ELBOW), dir, "robot")?;
    fs::write(dir.join("robot.urdf"), write_robot_description(&robot, "toy_robot"))?;
    let door = externalize_meshes(&toy_door(), dir, "door")?;
    fs::write(dir.join("door.urdf"), write_robot_description(&door, "toy_door"))?;
    let mut scene = Vec::new();
    for (i, (mesh, pose)) in toy_obstacles().into_iter().enumerate() {
        let file = format!("meshes/obstacle_{i}.obj");
        fs::write(dir.join(&file), mesh.to_obj_string())?;
        scene.push(SceneEntry { mesh: file.into(), pose });
    }
    fs::write(dir.join("scene.json"), serde_json::to_string_pretty(&scene)?)?;
    let spec = TaskSpec {
        robot: RobotSpec {
            path: "robot.urdf".into(),
            tcp_link: TCP_LINK.into(),
            base_limits: TOY_BASE,
            home: TOY_HOME.to_vec(),
            joint_weights: None,
        },
        object: ObjectSpec { path: "door.urdf".into(), scale: 1.0, initial_state: vec![0.0], anchor: door_anchor() },
        scene: "scene.json".into(),
        grasps: vec![door_grasp("handle", 0.7)],
        goals: goals.iter().map(|&g| vec![g]).collect(),
        generation,
        base_dir: PathBuf::new(),
    };
    let path = dir.join("task.json");
    fs::write(&path, spec.effective_config())?;
    Ok(path)
}

/// Generation settings matching [`toy_door_task`].
pub fn toy_generation(seed: u64) -> GenerationSpec {
    GenerationSpec {
        robot_sphere_pitch: ROBOT_SPHERE_PITCH,
        mesh_pitch: OBJECT_SPHERE_PITCH,
        pair_samples: 50,
        acceleration_limit: TOY_ACCELERATION,
        seed,
        ..GenerationSpec::default()
    }
}
