//! Hand and arm models: a URDF chain paired with authored metadata for the
//! palm frame, contact anchors, proxy spheres, open postures, and squeeze
//! joints.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::Deserialize;

use super::urdf::load_urdf;
use super::{forward_kinematics, JointVector, KinError, KinematicModel};
use crate::contact::Contact;
use crate::synthesis::GraspStrategy;
use crate::transform::RigidTransform;

/// A named contact point fixed to a link, with a local frame whose z-axis is
/// the pressing direction.
#[derive(Debug, Clone)]
pub struct AnchorDef {
    pub name: String,
    pub link: usize,
    pub local: RigidTransform,
}

/// Collision proxy sphere fixed to a link.
#[derive(Debug, Clone, Copy)]
pub struct ProxySphere {
    pub link: usize,
    pub center: Point3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct StrategySet {
    pub anchor_ids: Vec<usize>,
    pub q_open: JointVector,
}

#[derive(Debug, Clone)]
pub struct HandModel {
    pub chain: KinematicModel,
    pub palm_link: usize,
    pub palm_local: RigidTransform,
    /// Unit approach direction in the palm frame, pointing out of the palm
    /// toward the object.
    pub palm_normal: Vector3<f64>,
    pub hand_span: f64,
    anchors: Vec<AnchorDef>,
    strategies: BTreeMap<GraspStrategy, StrategySet>,
    proxy_spheres: Vec<ProxySphere>,
    /// Degree-of-freedom indices advanced during the squeeze stage.
    pub squeeze_dofs: Vec<usize>,
    pub squeeze_delta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HandMeta {
    schema_version: u32,
    palm_link: String,
    palm_offset_xyz: [f64; 3],
    palm_normal: [f64; 3],
    hand_span_m: f64,
    joint_order: Vec<String>,
    anchors: BTreeMap<String, AnchorMeta>,
    strategies: BTreeMap<String, StrategyMeta>,
    proxy_spheres: BTreeMap<String, Vec<SphereMeta>>,
    squeeze: SqueezeMeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorMeta {
    link: String,
    offset: [f64; 3],
    frame_rpy: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategyMeta {
    anchor_names: Vec<String>,
    q_open: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SphereMeta {
    center: [f64; 3],
    radius: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SqueezeMeta {
    joints: Vec<String>,
    delta_rad: f64,
}

fn read_meta<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, KinError> {
    let text = std::fs::read_to_string(path).map_err(|source| KinError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| KinError::Meta {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn meta_err(path: &Path, message: impl Into<String>) -> KinError {
    KinError::Meta {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads a hand model from a URDF file and its companion metadata JSON.
pub fn load_hand(
    urdf_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<HandModel, KinError> {
    let chain = load_urdf(urdf_path)?;
    let meta_path = meta_path.as_ref();
    let meta: HandMeta = read_meta(meta_path)?;
    if meta.schema_version != 1 {
        return Err(meta_err(
            meta_path,
            format!("unsupported schema_version {}", meta.schema_version),
        ));
    }
    let expected: Vec<&str> = chain.actuated_joint_names();
    if meta.joint_order != expected {
        return Err(meta_err(
            meta_path,
            format!(
                "joint_order must match URDF actuated joint order {:?}",
                expected
            ),
        ));
    }
    let palm_link = chain
        .link_id(&meta.palm_link)
        .ok_or_else(|| meta_err(meta_path, format!("unknown palm link {:?}", meta.palm_link)))?;
    let normal = Vector3::from(meta.palm_normal);
    if normal.norm() == 0.0 {
        return Err(meta_err(meta_path, "palm_normal is zero"));
    }

    let mut anchors = Vec::new();
    let mut anchor_ids: BTreeMap<&str, usize> = BTreeMap::new();
    for (name, a) in &meta.anchors {
        let link = chain
            .link_id(&a.link)
            .ok_or_else(|| meta_err(meta_path, format!("anchor {name}: unknown link {:?}", a.link)))?;
        anchor_ids.insert(name, anchors.len());
        anchors.push(AnchorDef {
            name: name.clone(),
            link,
            local: RigidTransform::from_xyz_rpy(a.offset, a.frame_rpy),
        });
    }

    let (lo, hi) = chain.limits();
    let mut strategies = BTreeMap::new();
    for (key, s) in &meta.strategies {
        let strategy: GraspStrategy = key
            .parse()
            .map_err(|e: String| meta_err(meta_path, e))?;
        let mut ids = Vec::new();
        for n in &s.anchor_names {
            let id = anchor_ids
                .get(n.as_str())
                .ok_or_else(|| meta_err(meta_path, format!("strategy {key}: unknown anchor {n:?}")))?;
            ids.push(*id);
        }
        if ids.len() < 2 {
            return Err(meta_err(
                meta_path,
                format!("strategy {key} needs at least 2 anchors"),
            ));
        }
        if s.q_open.len() != chain.dof() {
            return Err(meta_err(
                meta_path,
                format!(
                    "strategy {key}: q_open has {} values, model has {} joints",
                    s.q_open.len(),
                    chain.dof()
                ),
            ));
        }
        for (d, &v) in s.q_open.iter().enumerate() {
            if v < lo[d] - 1e-12 || v > hi[d] + 1e-12 {
                return Err(meta_err(
                    meta_path,
                    format!("strategy {key}: q_open[{d}] = {v} outside limits"),
                ));
            }
        }
        strategies.insert(
            strategy,
            StrategySet {
                anchor_ids: ids,
                q_open: JointVector(s.q_open.clone()),
            },
        );
    }
    for strategy in GraspStrategy::ALL {
        if !strategies.contains_key(&strategy) {
            return Err(meta_err(
                meta_path,
                format!("missing strategy {strategy}"),
            ));
        }
    }

    let mut proxy_spheres = Vec::new();
    for (link_name, spheres) in &meta.proxy_spheres {
        let link = chain
            .link_id(link_name)
            .ok_or_else(|| meta_err(meta_path, format!("proxy sphere on unknown link {link_name:?}")))?;
        for s in spheres {
            if !(s.radius > 0.0) {
                return Err(meta_err(meta_path, format!("{link_name}: sphere radius must be > 0")));
            }
            proxy_spheres.push(ProxySphere {
                link,
                center: Point3::from(Vector3::from(s.center)),
                radius: s.radius,
            });
        }
    }

    let mut squeeze_dofs = Vec::new();
    for jn in &meta.squeeze.joints {
        let joint = chain
            .joint_named(jn)
            .ok_or_else(|| meta_err(meta_path, format!("squeeze joint {jn:?} not in URDF")))?;
        let dof = joint
            .dof
            .ok_or_else(|| meta_err(meta_path, format!("squeeze joint {jn:?} is fixed")))?;
        squeeze_dofs.push(dof);
    }
    if !(meta.squeeze.delta_rad > 0.0) {
        return Err(meta_err(meta_path, "squeeze delta_rad must be > 0"));
    }

    Ok(HandModel {
        chain,
        palm_link,
        palm_local: RigidTransform::from_xyz_rpy(meta.palm_offset_xyz, [0.0; 3]),
        palm_normal: normal.normalize(),
        hand_span: meta.hand_span_m,
        anchors,
        strategies,
        proxy_spheres,
        squeeze_dofs,
        squeeze_delta: meta.squeeze.delta_rad,
    })
}

impl HandModel {
    pub fn anchors(&self) -> &[AnchorDef] {
        &self.anchors
    }

    pub fn anchor_id(&self, name: &str) -> Option<usize> {
        self.anchors.iter().position(|a| a.name == name)
    }

    pub fn strategy_set(&self, strategy: GraspStrategy) -> Result<&StrategySet, KinError> {
        self.strategies
            .get(&strategy)
            .ok_or_else(|| KinError::UnknownStrategy(strategy.to_string()))
    }

    pub fn q_open(&self, strategy: GraspStrategy) -> Result<&JointVector, KinError> {
        Ok(&self.strategy_set(strategy)?.q_open)
    }

    pub fn link_poses(
        &self,
        base: &RigidTransform,
        q: &JointVector,
    ) -> Result<Vec<RigidTransform>, KinError> {
        forward_kinematics(&self.chain, base, q)
    }

    pub fn palm_pose(&self, poses: &[RigidTransform]) -> RigidTransform {
        poses[self.palm_link].compose(&self.palm_local)
    }

    /// World-frame approach direction of the palm.
    pub fn palm_normal_world(&self, poses: &[RigidTransform]) -> Vector3<f64> {
        self.palm_pose(poses).transform_vector(&self.palm_normal)
    }

    /// One contact per strategy anchor, at the hand's current configuration.
    pub fn contact_frames(
        &self,
        base: &RigidTransform,
        q: &JointVector,
        strategy: GraspStrategy,
        hand: u8,
    ) -> Result<Vec<Contact>, KinError> {
        let set = self.strategy_set(strategy)?;
        let poses = self.link_poses(base, q)?;
        Ok(self.contacts_from_poses(&poses, set, hand))
    }

    pub(crate) fn contacts_from_poses(
        &self,
        poses: &[RigidTransform],
        set: &StrategySet,
        hand: u8,
    ) -> Vec<Contact> {
        set.anchor_ids
            .iter()
            .map(|&id| {
                let a = &self.anchors[id];
                let world = poses[a.link].compose(&a.local);
                Contact {
                    position: Point3::from(world.translation),
                    frame: world.rotation,
                    hand,
                    anchor_id: id,
                }
            })
            .collect()
    }

    /// Every proxy sphere in world coordinates.
    pub fn proxy_spheres_world(&self, poses: &[RigidTransform]) -> Vec<(Point3<f64>, f64)> {
        self.proxy_spheres
            .iter()
            .map(|s| (poses[s.link].transform_point(&s.center), s.radius))
            .collect()
    }

    pub fn proxy_spheres(&self) -> &[ProxySphere] {
        &self.proxy_spheres
    }

    /// The squeeze posture: flexion joints advanced by the authored delta,
    /// clamped to limits.
    pub fn apply_squeeze(&self, q: &JointVector) -> JointVector {
        let mut out = q.clone();
        for &d in &self.squeeze_dofs {
            out[d] += self.squeeze_delta;
        }
        self.chain.clamp_to_limits(&out)
    }
}

#[derive(Debug, Clone)]
pub struct ArmModel {
    pub chain: KinematicModel,
    pub flange: usize,
    pub q_home: JointVector,
    /// World poses of the two arm bases, left (index 0) and right (index 1).
    pub mounts: [RigidTransform; 2],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmMeta {
    schema_version: u32,
    flange_link: String,
    joint_order: Vec<String>,
    q_home: Vec<f64>,
    mounts: Vec<MountMeta>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MountMeta {
    xyz: [f64; 3],
    rpy: [f64; 3],
}

/// Loads an arm model from a URDF file and its companion metadata JSON.
pub fn load_arm(
    urdf_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<ArmModel, KinError> {
    let chain = load_urdf(urdf_path)?;
    let meta_path = meta_path.as_ref();
    let meta: ArmMeta = read_meta(meta_path)?;
    if meta.schema_version != 1 {
        return Err(meta_err(
            meta_path,
            format!("unsupported schema_version {}", meta.schema_version),
        ));
    }
    if meta.joint_order != chain.actuated_joint_names() {
        return Err(meta_err(
            meta_path,
            "joint_order must match URDF actuated joint order",
        ));
    }
    let flange = chain
        .link_id(&meta.flange_link)
        .ok_or_else(|| meta_err(meta_path, format!("unknown flange link {:?}", meta.flange_link)))?;
    if meta.q_home.len() != chain.dof() {
        return Err(meta_err(meta_path, "q_home length mismatch"));
    }
    if meta.mounts.len() != 2 {
        return Err(meta_err(meta_path, "exactly 2 mounts are required"));
    }
    let mounts = [
        RigidTransform::from_xyz_rpy(meta.mounts[0].xyz, meta.mounts[0].rpy),
        RigidTransform::from_xyz_rpy(meta.mounts[1].xyz, meta.mounts[1].rpy),
    ];
    Ok(ArmModel {
        chain,
        flange,
        q_home: JointVector(meta.q_home),
        mounts,
    })
}

impl ArmModel {
    pub fn flange_pose(
        &self,
        base: &RigidTransform,
        q: &JointVector,
    ) -> Result<RigidTransform, KinError> {
        Ok(forward_kinematics(&self.chain, base, q)?[self.flange])
    }

    /// End-effector pose of arm `index` at the home configuration.
    pub fn home_flange_pose(&self, index: usize) -> Result<RigidTransform, KinError> {
        self.flange_pose(&self.mounts[index], &self.q_home)
    }
}
