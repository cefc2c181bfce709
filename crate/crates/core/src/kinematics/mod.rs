//! Kinematic trees parsed from a URDF subset: forward kinematics, analytic
//! Jacobians, contact-frame extraction, and damped-least-squares IK.

pub mod hand;
pub mod ik;
pub mod urdf;

use std::path::PathBuf;

use nalgebra::{DMatrix, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::RigidTransform;

pub use hand::{AnchorDef, ArmModel, HandModel, ProxySphere};
pub use ik::{ik_solve, DlsConfig, IkResult};
pub use urdf::parse_urdf;

#[derive(Debug, Error)]
pub enum KinError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid URDF: {0}")]
    Xml(String),
    #[error("joint {joint} references undefined {role} link {link:?}")]
    MissingLink {
        joint: String,
        role: &'static str,
        link: String,
    },
    #[error("revolute/prismatic joint {0} has no <limit lower= upper=>")]
    MissingLimit(String),
    #[error("kinematic cycle involving link {0:?}")]
    Cycle(String),
    #[error("malformed kinematic tree: {0}")]
    Structure(String),
    #[error("joint vector has {got} values but the model has {expected} actuated joints")]
    JointCountMismatch { expected: usize, got: usize },
    #[error("failed to parse {path}: {message}")]
    Meta { path: PathBuf, message: String },
    #[error("no contact anchors defined for strategy {0}")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub parent: usize,
    pub child: usize,
    pub origin: RigidTransform,
    /// Unit axis in the child-link frame; meaningless for fixed joints.
    pub axis: Vector3<f64>,
    /// `[lower, upper]` for actuated joints.
    pub limits: Option<[f64; 2]>,
    /// Index into joint vectors for actuated joints, in document order.
    pub dof: Option<usize>,
}

/// Actuated joint positions, ordered by the model's degree-of-freedom index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        JointVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for JointVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for JointVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// A single-root kinematic tree. Link and joint ids are stable indices;
/// joints are stored parent-before-child.
#[derive(Debug, Clone)]
pub struct KinematicModel {
    pub name: String,
    links: Vec<String>,
    joints: Vec<Joint>,
    root: usize,
    n_dof: usize,
    /// Per link, the joint whose child it is; `None` for the root.
    parent_joint: Vec<Option<usize>>,
}

impl KinematicModel {
    pub(crate) fn assemble(
        name: String,
        links: Vec<String>,
        joints: Vec<Joint>,
    ) -> Result<Self, KinError> {
        let n = links.len();
        if n == 0 {
            return Err(KinError::Structure("no links".into()));
        }
        let mut parent_joint: Vec<Option<usize>> = vec![None; n];
        for (ji, j) in joints.iter().enumerate() {
            if parent_joint[j.child].is_some() {
                return Err(KinError::Cycle(links[j.child].clone()));
            }
            parent_joint[j.child] = Some(ji);
        }
        let roots: Vec<usize> = (0..n).filter(|&l| parent_joint[l].is_none()).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(KinError::Cycle(links[0].clone())),
            many => {
                let names: Vec<_> = many.iter().map(|&l| links[l].as_str()).collect();
                return Err(KinError::Structure(format!(
                    "multiple roots: {}",
                    names.join(", ")
                )));
            }
        };
        // Reorder joints parent-before-child so FK is a single pass, and
        // verify every link hangs off the root.
        let mut order = Vec::with_capacity(joints.len());
        let mut reached = vec![false; n];
        reached[root] = true;
        let mut frontier = vec![root];
        while let Some(link) = frontier.pop() {
            let mut children: Vec<usize> = joints
                .iter()
                .enumerate()
                .filter(|(_, j)| j.parent == link)
                .map(|(ji, _)| ji)
                .collect();
            children.sort_unstable();
            for ji in children.into_iter().rev() {
                order.push(ji);
                reached[joints[ji].child] = true;
                frontier.push(joints[ji].child);
            }
        }
        if let Some(stranded) = (0..n).find(|&l| !reached[l]) {
            return Err(KinError::Cycle(links[stranded].clone()));
        }
        let mut joints: Vec<Joint> = {
            let mut by_new_order = Vec::with_capacity(joints.len());
            let mut joints = joints;
            let mut taken: Vec<Option<Joint>> = joints.drain(..).map(Some).collect();
            for ji in order {
                by_new_order.push(taken[ji].take().unwrap());
            }
            by_new_order
        };
        // The topological reorder scrambles document order; the parser
        // recorded it in `dof`, renumbered densely here.
        let mut actuated: Vec<usize> = (0..joints.len())
            .filter(|&ji| joints[ji].kind != JointKind::Fixed)
            .collect();
        actuated.sort_by_key(|&ji| joints[ji].dof.unwrap_or(usize::MAX));
        let n_dof = actuated.len();
        for (k, &ji) in actuated.iter().enumerate() {
            joints[ji].dof = Some(k);
        }
        let mut parent_joint: Vec<Option<usize>> = vec![None; n];
        for (ji, j) in joints.iter().enumerate() {
            parent_joint[j.child] = Some(ji);
        }
        Ok(KinematicModel {
            name,
            links,
            joints,
            root,
            n_dof,
            parent_joint,
        })
    }

    pub fn dof(&self) -> usize {
        self.n_dof
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn link_id(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l == name)
    }

    pub fn link_name(&self, id: usize) -> &str {
        &self.links[id]
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_named(&self, name: &str) -> Option<&Joint> {
        self.joints.iter().find(|j| j.name == name)
    }

    /// Actuated joint names in degree-of-freedom order.
    pub fn actuated_joint_names(&self) -> Vec<&str> {
        let mut names = vec![""; self.n_dof];
        for j in &self.joints {
            if let Some(d) = j.dof {
                names[d] = &j.name;
            }
        }
        names
    }

    /// Lower and upper limits per degree of freedom.
    pub fn limits(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![0.0; self.n_dof];
        let mut hi = vec![0.0; self.n_dof];
        for j in &self.joints {
            if let (Some(d), Some([l, u])) = (j.dof, j.limits) {
                lo[d] = l;
                hi[d] = u;
            }
        }
        (lo, hi)
    }

    pub fn clamp_to_limits(&self, q: &JointVector) -> JointVector {
        let (lo, hi) = self.limits();
        JointVector(
            q.0.iter()
                .enumerate()
                .map(|(i, &v)| v.clamp(lo[i], hi[i]))
                .collect(),
        )
    }

    /// Longest root-to-leaf path, counted in joints.
    pub fn tree_depth(&self) -> usize {
        let mut depth = vec![0usize; self.links.len()];
        let mut max = 0;
        for j in &self.joints {
            depth[j.child] = depth[j.parent] + 1;
            max = max.max(depth[j.child]);
        }
        max
    }

    pub(crate) fn parent_joint_of(&self, link: usize) -> Option<usize> {
        self.parent_joint[link]
    }
}

/// World pose of every link, composed root to leaf. `q` outside the limits is
/// clamped.
pub fn forward_kinematics(
    model: &KinematicModel,
    base: &RigidTransform,
    q: &JointVector,
) -> Result<Vec<RigidTransform>, KinError> {
    if q.len() != model.n_dof {
        return Err(KinError::JointCountMismatch {
            expected: model.n_dof,
            got: q.len(),
        });
    }
    let (lo, hi) = model.limits();
    let mut clamped = false;
    let mut qv = q.0.clone();
    for (i, v) in qv.iter_mut().enumerate() {
        let c = v.clamp(lo[i], hi[i]);
        if c != *v {
            clamped = true;
            *v = c;
        }
    }
    if clamped {
        log::warn!("{}: joint vector outside limits, clamped", model.name);
    }
    let mut poses = vec![RigidTransform::identity(); model.links.len()];
    poses[model.root] = *base;
    for j in &model.joints {
        let parent = poses[j.parent];
        let at_origin = parent.compose(&j.origin);
        poses[j.child] = match j.kind {
            JointKind::Fixed => at_origin,
            JointKind::Revolute => {
                let angle = qv[j.dof.unwrap()];
                let rot = RigidTransform::new(
                    nalgebra::Rotation3::from_axis_angle(
                        &nalgebra::Unit::new_normalize(j.axis),
                        angle,
                    ),
                    Vector3::zeros(),
                );
                at_origin.compose(&rot)
            }
            JointKind::Prismatic => {
                let slide = qv[j.dof.unwrap()];
                at_origin.compose(&RigidTransform::from_translation(j.axis * slide))
            }
        };
    }
    Ok(poses)
}

/// Geometric Jacobian (6 × dof) of a world-frame `point` rigidly attached to
/// `link`; rows 0..3 are linear, rows 3..6 angular.
pub fn jacobian(
    model: &KinematicModel,
    poses: &[RigidTransform],
    link: usize,
    point: &Point3<f64>,
) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(6, model.dof());
    let mut cursor = Some(link);
    while let Some(l) = cursor {
        let Some(ji) = model.parent_joint_of(l) else {
            break;
        };
        let joint = &model.joints[ji];
        if let Some(d) = joint.dof {
            let child_pose = &poses[joint.child];
            let axis_world = child_pose.rotation * joint.axis;
            match joint.kind {
                JointKind::Revolute => {
                    let arm = point - Point3::from(child_pose.translation);
                    let lin = axis_world.cross(&arm);
                    for k in 0..3 {
                        j[(k, d)] = lin[k];
                        j[(k + 3, d)] = axis_world[k];
                    }
                }
                JointKind::Prismatic => {
                    for k in 0..3 {
                        j[(k, d)] = axis_world[k];
                    }
                }
                JointKind::Fixed => unreachable!(),
            }
        }
        cursor = Some(joint.parent);
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) const TWO_LINK: &str = r#"
        <robot name="planar2">
          <link name="base"/>
          <link name="upper"/>
          <link name="fore"/>
          <link name="ee"/>
          <joint name="shoulder" type="revolute">
            <parent link="base"/><child link="upper"/>
            <origin xyz="0 0 0"/><axis xyz="0 0 1"/>
            <limit lower="-3.14" upper="3.14"/>
          </joint>
          <joint name="elbow" type="revolute">
            <parent link="upper"/><child link="fore"/>
            <origin xyz="0.3 0 0"/><axis xyz="0 0 1"/>
            <limit lower="-3.14" upper="3.14"/>
          </joint>
          <joint name="tip" type="fixed">
            <parent link="fore"/><child link="ee"/>
            <origin xyz="0.2 0 0"/>
          </joint>
        </robot>"#;

    #[test]
    fn two_link_arm_matches_hand_computed_pose() {
        let model = parse_urdf(TWO_LINK).unwrap();
        let q = JointVector(vec![std::f64::consts::FRAC_PI_2, 0.0]);
        let poses = forward_kinematics(&model, &RigidTransform::identity(), &q).unwrap();
        let ee = poses[model.link_id("ee").unwrap()];
        assert_relative_eq!(
            (ee.translation - Vector3::new(0.0, 0.5, 0.0)).norm(),
            0.0,
            epsilon = 1e-12
        );
        let expect = nalgebra::Rotation3::from_axis_angle(
            &Vector3::z_axis(),
            std::f64::consts::FRAC_PI_2,
        );
        assert_relative_eq!(
            (ee.rotation.matrix() - expect.matrix()).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_configuration_composes_origins() {
        let model = parse_urdf(TWO_LINK).unwrap();
        let poses =
            forward_kinematics(&model, &RigidTransform::identity(), &JointVector::zeros(2))
                .unwrap();
        let ee = poses[model.link_id("ee").unwrap()];
        assert_relative_eq!(
            (ee.translation - Vector3::new(0.5, 0.0, 0.0)).norm(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn base_translation_shifts_every_link() {
        let model = parse_urdf(TWO_LINK).unwrap();
        let q = JointVector(vec![0.7, -0.4]);
        let id = forward_kinematics(&model, &RigidTransform::identity(), &q).unwrap();
        let v = Vector3::new(1.0, -2.0, 3.0);
        let moved =
            forward_kinematics(&model, &RigidTransform::from_translation(v), &q).unwrap();
        for (a, b) in id.iter().zip(&moved) {
            assert!((a.translation + v - b.translation).norm() < 1e-12);
            assert_eq!(a.rotation, b.rotation);
        }
    }

    #[test]
    fn fk_is_equivariant_under_rigid_motions() {
        let model = parse_urdf(TWO_LINK).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let q = JointVector(vec![
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            ]);
            let g = RigidTransform::from_xyz_rpy(
                [rng.random(), rng.random(), rng.random()],
                [rng.random(), rng.random(), rng.random()],
            );
            let base = RigidTransform::from_xyz_rpy([0.1, 0.2, 0.3], [0.4, 0.5, 0.6]);
            let plain = forward_kinematics(&model, &base, &q).unwrap();
            let moved = forward_kinematics(&model, &g.compose(&base), &q).unwrap();
            for (a, b) in plain.iter().zip(&moved) {
                let expect = g.compose(a);
                assert!((expect.translation - b.translation).norm() < 1e-12);
                assert!(
                    (expect.rotation.matrix() - b.rotation.matrix()).norm() < 1e-12
                );
            }
        }
    }

    #[test]
    fn joint_count_mismatch_is_an_error() {
        let model = parse_urdf(TWO_LINK).unwrap();
        let r = forward_kinematics(
            &model,
            &RigidTransform::identity(),
            &JointVector::zeros(5),
        );
        assert!(matches!(
            r,
            Err(KinError::JointCountMismatch {
                expected: 2,
                got: 5
            })
        ));
    }

    #[test]
    fn out_of_limit_joints_are_clamped() {
        let model = parse_urdf(TWO_LINK).unwrap();
        let wild = forward_kinematics(
            &model,
            &RigidTransform::identity(),
            &JointVector(vec![100.0, 0.0]),
        )
        .unwrap();
        let limit = forward_kinematics(
            &model,
            &RigidTransform::identity(),
            &JointVector(vec![3.14, 0.0]),
        )
        .unwrap();
        let ee = model.link_id("ee").unwrap();
        assert_eq!(wild[ee].translation, limit[ee].translation);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = parse_urdf(TWO_LINK).unwrap();
        let base = RigidTransform::from_xyz_rpy([0.0, 0.1, 0.0], [0.0, 0.0, 0.3]);
        let ee = model.link_id("ee").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let q = JointVector(vec![
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            ]);
            let poses = forward_kinematics(&model, &base, &q).unwrap();
            let p = Point3::from(poses[ee].translation);
            let j = jacobian(&model, &poses, ee, &p);
            let h = 1e-6;
            for d in 0..model.dof() {
                let mut qp = q.clone();
                qp[d] += h;
                let mut qm = q.clone();
                qm[d] -= h;
                let fp = forward_kinematics(&model, &base, &qp).unwrap();
                let fm = forward_kinematics(&model, &base, &qm).unwrap();
                // The attached point moves with the link.
                let pp = fp[ee].compose(&poses[ee].inverse()).transform_point(&p);
                let pm = fm[ee].compose(&poses[ee].inverse()).transform_point(&p);
                let fd = (pp - pm) / (2.0 * h);
                for k in 0..3 {
                    assert!((j[(k, d)] - fd[k]).abs() < 1e-5);
                }
            }
        }
    }
}
