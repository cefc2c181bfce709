//! Parser for the URDF subset the pipeline needs: links, revolute/prismatic/
//! fixed joints, origins, axes, and limits. Geometry, inertia, and
//! transmission elements are ignored.

use nalgebra::Vector3;

use super::{Joint, JointKind, KinError, KinematicModel};
use crate::transform::RigidTransform;

pub fn parse_urdf(text: &str) -> Result<KinematicModel, KinError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| KinError::Xml(e.to_string()))?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(KinError::Xml(format!(
            "root element is <{}>, expected <robot>",
            robot.tag_name().name()
        )));
    }
    let name = robot.attribute("name").unwrap_or("unnamed").to_string();

    let mut links: Vec<String> = Vec::new();
    struct RawJoint {
        name: String,
        kind: JointKind,
        parent: String,
        child: String,
        origin: RigidTransform,
        axis: Vector3<f64>,
        limits: Option<[f64; 2]>,
    }
    let mut raw: Vec<RawJoint> = Vec::new();

    for node in robot.children().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "link" => {
                let link_name = node
                    .attribute("name")
                    .ok_or_else(|| KinError::Xml("<link> without name".into()))?;
                links.push(link_name.to_string());
                for sub in node.children().filter(|n| n.is_element()) {
                    log::warn!(
                        "{name}: ignoring <{}> under link {link_name}",
                        sub.tag_name().name()
                    );
                }
            }
            "joint" => {
                let jname = node
                    .attribute("name")
                    .ok_or_else(|| KinError::Xml("<joint> without name".into()))?
                    .to_string();
                let kind = match node.attribute("type") {
                    Some("revolute") => JointKind::Revolute,
                    Some("prismatic") => JointKind::Prismatic,
                    Some("fixed") => JointKind::Fixed,
                    Some(other) => {
                        return Err(KinError::Xml(format!(
                            "joint {jname} has unsupported type {other:?}"
                        )))
                    }
                    None => {
                        return Err(KinError::Xml(format!("joint {jname} has no type")))
                    }
                };
                let mut parent = None;
                let mut child = None;
                let mut origin = RigidTransform::identity();
                let mut axis = Vector3::x();
                let mut limits = None;
                for sub in node.children().filter(|n| n.is_element()) {
                    match sub.tag_name().name() {
                        "parent" => parent = sub.attribute("link").map(str::to_string),
                        "child" => child = sub.attribute("link").map(str::to_string),
                        "origin" => {
                            let xyz = parse_triple(sub.attribute("xyz"), &jname)?;
                            let rpy = parse_triple(sub.attribute("rpy"), &jname)?;
                            origin = RigidTransform::from_xyz_rpy(xyz, rpy);
                        }
                        "axis" => {
                            let a = parse_triple(sub.attribute("xyz"), &jname)?;
                            let v = Vector3::new(a[0], a[1], a[2]);
                            if v.norm() == 0.0 {
                                return Err(KinError::Xml(format!(
                                    "joint {jname} has a zero axis"
                                )));
                            }
                            axis = v.normalize();
                        }
                        "limit" => {
                            let lower = parse_scalar(sub.attribute("lower"), &jname)?;
                            let upper = parse_scalar(sub.attribute("upper"), &jname)?;
                            if let (Some(l), Some(u)) = (lower, upper) {
                                if l > u {
                                    return Err(KinError::Xml(format!(
                                        "joint {jname} has lower {l} > upper {u}"
                                    )));
                                }
                                limits = Some([l, u]);
                            }
                        }
                        other => log::warn!("{name}: ignoring <{other}> under joint {jname}"),
                    }
                }
                let parent = parent
                    .ok_or_else(|| KinError::Xml(format!("joint {jname} has no <parent>")))?;
                let child =
                    child.ok_or_else(|| KinError::Xml(format!("joint {jname} has no <child>")))?;
                if kind != JointKind::Fixed && limits.is_none() {
                    return Err(KinError::MissingLimit(jname));
                }
                raw.push(RawJoint {
                    name: jname,
                    kind,
                    parent,
                    child,
                    origin,
                    axis,
                    limits,
                });
            }
            other => log::warn!("{name}: ignoring <{other}> element"),
        }
    }

    let link_id = |joint: &str, role: &'static str, wanted: &str| {
        links
            .iter()
            .position(|l| l == wanted)
            .ok_or_else(|| KinError::MissingLink {
                joint: joint.to_string(),
                role,
                link: wanted.to_string(),
            })
    };
    let mut dof_counter = 0usize;
    let mut joints = Vec::with_capacity(raw.len());
    for r in raw {
        let parent = link_id(&r.name, "parent", &r.parent)?;
        let child = link_id(&r.name, "child", &r.child)?;
        // `raw` is in document order, so this numbering is the document
        // order of actuated joints.
        let dof = if r.kind == JointKind::Fixed {
            None
        } else {
            let d = dof_counter;
            dof_counter += 1;
            Some(d)
        };
        joints.push(Joint {
            name: r.name,
            kind: r.kind,
            parent,
            child,
            origin: r.origin,
            axis: r.axis,
            limits: r.limits,
            dof,
        });
    }
    KinematicModel::assemble(name, links, joints)
}

/// Reads a URDF model from a file.
pub fn load_urdf(path: impl AsRef<std::path::Path>) -> Result<KinematicModel, KinError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| KinError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_urdf(&text)
}

fn parse_triple(attr: Option<&str>, joint: &str) -> Result<[f64; 3], KinError> {
    let Some(text) = attr else {
        return Ok([0.0; 3]);
    };
    let vals: Result<Vec<f64>, _> = text.split_whitespace().map(str::parse).collect();
    match vals {
        Ok(v) if v.len() == 3 => Ok([v[0], v[1], v[2]]),
        _ => Err(KinError::Xml(format!(
            "joint {joint}: malformed triple {text:?}"
        ))),
    }
}

fn parse_scalar(attr: Option<&str>, joint: &str) -> Result<Option<f64>, KinError> {
    match attr {
        None => Ok(None),
        Some(text) => text.parse().map(Some).map_err(|_| {
            KinError::Xml(format!("joint {joint}: malformed number {text:?}"))
        }),
    }
}
