//! Reader and writer for the supported URDF subset: `link`, `joint`,
//! `origin` (xyz, rpy), `axis`, `limit`, and `mesh` (filename, scale).

use std::fmt::Write as _;

use nalgebra::{Unit, Vector3};
use roxmltree::{Document, Node};

use super::tree::{Joint, JointKind, JointLimits, KinematicTree, Link, MeshRef};
use super::{KinematicsError, Pose};

pub fn parse_robot_description(text: &str) -> Result<KinematicTree, KinematicsError> {
    let doc = Document::parse(text).map_err(|e| KinematicsError::Parse {
        line: e.pos().row as usize,
        element: "document".into(),
        message: e.to_string(),
    })?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(parse_err(&doc, robot, "root element must be <robot>"));
    }
    let mut links = Vec::new();
    let mut joints = Vec::new();
    for node in robot.children().filter(Node::is_element) {
        match node.tag_name().name() {
            "link" => links.push(parse_link(&doc, node)?),
            "joint" => joints.push(parse_joint(&doc, node)?),
            "material" | "gazebo" | "transmission" => {}
            other => log::warn!("ignoring <{other}> at line {}", line_of(&doc, node)),
        }
    }
    KinematicTree::new(links, joints)
}

fn line_of(doc: &Document, node: Node) -> usize {
    doc.text_pos_at(node.range().start).row as usize
}

fn parse_err(doc: &Document, node: Node, message: impl Into<String>) -> KinematicsError {
    KinematicsError::Parse {
        line: line_of(doc, node),
        element: node.tag_name().name().to_string(),
        message: message.into(),
    }
}

fn required_attr<'a>(doc: &Document, node: Node<'a, 'a>, name: &str) -> Result<&'a str, KinematicsError> {
    node.attribute(name)
        .ok_or_else(|| parse_err(doc, node, format!("missing attribute '{name}'")))
}

fn parse_f64(doc: &Document, node: Node, attr: &str, s: &str) -> Result<f64, KinematicsError> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(doc, node, format!("attribute '{attr}': '{s}' is not a finite number")))
}

fn parse_vec3(doc: &Document, node: Node, attr: &str, default: [f64; 3]) -> Result<[f64; 3], KinematicsError> {
    let Some(s) = node.attribute(attr) else { return Ok(default) };
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(parse_err(doc, node, format!("attribute '{attr}' needs 3 numbers, got '{s}'")));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_f64(doc, node, attr, p)?;
    }
    Ok(out)
}

fn parse_origin(doc: &Document, parent: Node) -> Result<Pose, KinematicsError> {
    match child(parent, "origin") {
        Some(o) => Ok(Pose::from_xyz_rpy(parse_vec3(doc, o, "xyz", [0.0; 3])?, parse_vec3(doc, o, "rpy", [0.0; 3])?)),
        None => Ok(Pose::identity()),
    }
}

fn child<'a>(node: Node<'a, 'a>, name: &str) -> Option<Node<'a, 'a>> {
    node.children().find(|c| c.is_element() && c.tag_name().name() == name)
}

fn parse_link(doc: &Document, node: Node) -> Result<Link, KinematicsError> {
    let mut link = Link::new(required_attr(doc, node, "name")?);
    for g in node.children().filter(Node::is_element) {
        let tag = g.tag_name().name();
        if tag != "visual" && tag != "collision" {
            continue;
        }
        let origin = parse_origin(doc, g)?;
        let Some(geometry) = child(g, "geometry") else {
            return Err(parse_err(doc, g, "missing <geometry>"));
        };
        let Some(shape) = geometry.children().find(Node::is_element) else {
            return Err(parse_err(doc, geometry, "empty <geometry>"));
        };
        if shape.tag_name().name() != "mesh" {
            log::warn!(
                "link '{}': <{}> geometry at line {} is not supported and was skipped",
                link.name,
                shape.tag_name().name(),
                line_of(doc, shape)
            );
            continue;
        }
        let filename = required_attr(doc, shape, "filename")?;
        let filename = filename.strip_prefix("file://").unwrap_or(filename).to_string();
        let scale = parse_vec3(doc, shape, "scale", [1.0; 3])?;
        let r = MeshRef { filename, scale: Vector3::from(scale), origin };
        if tag == "visual" {
            link.visual.push(r);
        } else {
            link.collision.push(r);
        }
    }
    Ok(link)
}

fn parse_joint(doc: &Document, node: Node) -> Result<Joint, KinematicsError> {
    let name = required_attr(doc, node, "name")?;
    let kind = match required_attr(doc, node, "type")? {
        "revolute" => JointKind::Revolute,
        "prismatic" => JointKind::Prismatic,
        "fixed" => JointKind::Fixed,
        other => return Err(KinematicsError::Unsupported(format!("joint '{name}' has unsupported kind '{other}'"))),
    };
    let parent = child(node, "parent").ok_or_else(|| parse_err(doc, node, format!("joint '{name}' missing <parent>")))?;
    let child_el = child(node, "child").ok_or_else(|| parse_err(doc, node, format!("joint '{name}' missing <child>")))?;
    let origin = parse_origin(doc, node)?;
    let mut joint = Joint {
        name: name.into(),
        kind,
        origin,
        axis: None,
        limits: JointLimits::new(0.0, 0.0),
        parent: required_attr(doc, parent, "link")?.into(),
        child: required_attr(doc, child_el, "link")?.into(),
    };
    if kind.is_actuated() {
        let axis_el = child(node, "axis");
        let axis = match axis_el {
            Some(a) => parse_vec3(doc, a, "xyz", [1.0, 0.0, 0.0])?,
            None => [1.0, 0.0, 0.0],
        };
        let v = Vector3::from(axis);
        if v.norm() < 1e-12 {
            return Err(parse_err(doc, axis_el.unwrap_or(node), format!("joint '{name}' has a zero axis")));
        }
        joint.axis = Some(Unit::new_normalize(v));
        let limit = child(node, "limit")
            .ok_or_else(|| parse_err(doc, node, format!("{} joint '{name}' requires <limit>", kind.as_str())))?;
        let lower = limit.attribute("lower").map(|s| parse_f64(doc, limit, "lower", s)).transpose()?;
        let upper = limit.attribute("upper").map(|s| parse_f64(doc, limit, "upper", s)).transpose()?;
        let velocity = limit.attribute("velocity").map(|s| parse_f64(doc, limit, "velocity", s)).transpose()?;
        joint.limits = JointLimits { lower: lower.unwrap_or(0.0), upper: upper.unwrap_or(0.0), velocity };
        if joint.limits.lower > joint.limits.upper {
            return Err(parse_err(doc, limit, format!("joint '{name}': lower limit exceeds upper limit")));
        }
    }
    Ok(joint)
}

fn fmt3(v: [f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

fn origin_element(p: &Pose) -> String {
    let (r, pi, y) = p.rotation.euler_angles();
    format!("<origin xyz=\"{}\" rpy=\"{}\"/>", fmt3(p.translation.into()), fmt3([r, pi, y]))
}

/// Serializes a tree back into the supported URDF subset. Loaded meshes and
/// sphere sets are not representable and are omitted.
pub fn write_robot_description(tree: &KinematicTree, robot_name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<?xml version=\"1.0\"?>");
    let _ = writeln!(s, "<robot name=\"{}\">", xml_escape(robot_name));
    for link in tree.links() {
        if link.visual.is_empty() && link.collision.is_empty() {
            let _ = writeln!(s, "  <link name=\"{}\"/>", xml_escape(&link.name));
            continue;
        }
        let _ = writeln!(s, "  <link name=\"{}\">", xml_escape(&link.name));
        for (tag, refs) in [("visual", &link.visual), ("collision", &link.collision)] {
            for r in refs {
                let _ = writeln!(
                    s,
                    "    <{tag}>{}<geometry><mesh filename=\"{}\" scale=\"{}\"/></geometry></{tag}>",
                    origin_element(&r.origin),
                    xml_escape(&r.filename),
                    fmt3(r.scale.into())
                );
            }
        }
        let _ = writeln!(s, "  </link>");
    }
    for j in tree.joints() {
        let _ = writeln!(s, "  <joint name=\"{}\" type=\"{}\">", xml_escape(&j.name), j.kind.as_str());
        let _ = writeln!(s, "    <parent link=\"{}\"/>", xml_escape(&j.parent));
        let _ = writeln!(s, "    <child link=\"{}\"/>", xml_escape(&j.child));
        let _ = writeln!(s, "    {}", origin_element(&j.origin));
        if let Some(a) = &j.axis {
            let _ = writeln!(s, "    <axis xyz=\"{}\"/>", fmt3(a.into_inner().into()));
            let mut limit = format!("    <limit lower=\"{}\" upper=\"{}\"", j.limits.lower, j.limits.upper);
            if let Some(v) = j.limits.velocity {
                let _ = write!(limit, " velocity=\"{v}\"");
            }
            let _ = writeln!(s, "{limit}/>");
        }
        let _ = writeln!(s, "  </joint>");
    }
    let _ = writeln!(s, "</robot>");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
