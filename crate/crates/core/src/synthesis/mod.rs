//! Grasp synthesis: candidate initialization on the convex hull, the
//! four-term energy, and the bilevel projected-gradient optimizer.

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{grasp_map, Contact, FrictionCone, GraspMap};
use crate::force_qp::{wrench_tracking_error, TargetWrenchSet};
use crate::geometry::{convex_hull, sample::counter_rng, sample_surface, MeshError, MeshSdf, TriMesh};
use crate::kinematics::{HandModel, JointVector, KinError};
use crate::transform::RigidTransform;

/// Which contact set a grasp uses and how many hands it involves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspStrategy {
    Pinch2,
    Tripod3,
    WholeHand,
    Bimanual,
}

impl GraspStrategy {
    pub fn hand_count(self) -> usize {
        match self {
            GraspStrategy::Bimanual => 2,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GraspStrategy::Pinch2 => "pinch2",
            GraspStrategy::Tripod3 => "tripod3",
            GraspStrategy::WholeHand => "whole_hand",
            GraspStrategy::Bimanual => "bimanual",
        }
    }

    pub const ALL: [GraspStrategy; 4] = [
        GraspStrategy::Pinch2,
        GraspStrategy::Tripod3,
        GraspStrategy::WholeHand,
        GraspStrategy::Bimanual,
    ];
}

impl std::fmt::Display for GraspStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GraspStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GraspStrategy::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}; expected one of pinch2, tripod3, whole_hand, bimanual"))
    }
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Kinematics(#[from] KinError),
    #[error("could not place hands on opposite sides of the hull centroid")]
    NoOpposedPlacement,
}

/// World pose and joint posture of one hand's base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    pub translation: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    pub q: JointVector,
}

impl HandPose {
    pub fn base(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation,
            translation: self.translation,
        }
    }
}

/// Candidate grasp over up to two hands; the active mask follows the
/// strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimanualGraspPose {
    pub hands: [HandPose; 2],
    pub active: [bool; 2],
    pub strategy: GraspStrategy,
}

impl BimanualGraspPose {
    pub fn active_hands(&self) -> impl Iterator<Item = usize> + '_ {
        (0..2).filter(|&h| self.active[h])
    }
}

/// Weights of the four energy terms plus the target-wrench scale.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyWeights {
    pub kappa_w: f64,
    pub kappa_con: f64,
    pub kappa_coll: f64,
    pub kappa_hh: f64,
    pub wrench_scale: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            kappa_w: 1.0,
            kappa_con: 100.0,
            kappa_coll: 500.0,
            kappa_hh: 500.0,
            wrench_scale: 1.0,
        }
    }
}

/// Raw term values; `total` applies the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub wrench: f64,
    pub contact: f64,
    pub collision: f64,
    pub hand_hand: f64,
    pub total: f64,
}

/// Everything the energy terms read; immutable during optimization.
#[derive(Debug, Clone, Copy)]
pub struct EnergyContext<'a> {
    pub sdf: &'a MeshSdf,
    pub hand: &'a HandModel,
    pub com: Point3<f64>,
    /// Torque normalization of the grasp maps.
    pub alpha: f64,
    pub cone: FrictionCone,
    pub targets: &'a TargetWrenchSet,
    pub weights: EnergyWeights,
    /// Obstacle half-space below this z, when the scene has a table.
    pub table_height: Option<f64>,
}

impl EnergyContext<'_> {
    /// Signed distance to the nearest obstacle (object, and table if any).
    fn obstacle_distance(&self, x: &Point3<f64>) -> f64 {
        let d = self.sdf.signed_distance(x);
        match self.table_height {
            Some(h) => d.min(x.z - h),
            None => d,
        }
    }
}

fn active_contacts(
    pose: &BimanualGraspPose,
    ctx: &EnergyContext,
) -> Result<Vec<Contact>, SynthesisError> {
    let mut contacts = Vec::new();
    for h in pose.active_hands() {
        let hp = &pose.hands[h];
        contacts.extend(ctx.hand.contact_frames(
            &hp.base(),
            &hp.q,
            pose.strategy,
            h as u8,
        )?);
    }
    Ok(contacts)
}

fn grasp_maps(contacts: &[Contact], ctx: &EnergyContext) -> Vec<GraspMap> {
    contacts
        .iter()
        .map(|c| grasp_map(c, &ctx.com, ctx.alpha))
        .collect()
}

/// Σ d_M(p_c)² over the strategy's active contacts.
pub fn energy_contact(
    pose: &BimanualGraspPose,
    ctx: &EnergyContext,
) -> Result<f64, SynthesisError> {
    Ok(active_contacts(pose, ctx)?
        .iter()
        .map(|c| ctx.sdf.signed_distance(&c.position).powi(2))
        .sum())
}

fn penetration_sq(distance: f64, radius: f64) -> f64 {
    (radius - distance).max(0.0).powi(2)
}

/// Squared-hinge penetration of hand proxy spheres into the object (and
/// table, when present).
pub fn energy_collision(
    pose: &BimanualGraspPose,
    ctx: &EnergyContext,
) -> Result<f64, SynthesisError> {
    let mut sum = 0.0;
    for h in pose.active_hands() {
        let hp = &pose.hands[h];
        let poses = ctx.hand.link_poses(&hp.base(), &hp.q)?;
        for (center, radius) in ctx.hand.proxy_spheres_world(&poses) {
            sum += penetration_sq(ctx.obstacle_distance(&center), radius);
        }
    }
    Ok(sum)
}

/// Squared-hinge overlap between the two hands' proxy spheres; zero for
/// unimanual strategies.
pub fn energy_hand_hand(
    pose: &BimanualGraspPose,
    ctx: &EnergyContext,
) -> Result<f64, SynthesisError> {
    if !(pose.active[0] && pose.active[1]) {
        return Ok(0.0);
    }
    let spheres: Vec<Vec<(Point3<f64>, f64)>> = [0, 1]
        .iter()
        .map(|&h| {
            let hp = &pose.hands[h];
            Ok(ctx.hand.proxy_spheres_world(&ctx.hand.link_poses(&hp.base(), &hp.q)?))
        })
        .collect::<Result<_, SynthesisError>>()?;
    let mut sum = 0.0;
    for (ci, ri) in &spheres[0] {
        for (cj, rj) in &spheres[1] {
            sum += penetration_sq((ci - cj).norm(), ri + rj);
        }
    }
    Ok(sum)
}

/// Lower-level QP residuals over the target wrench set.
pub fn energy_wrench(
    pose: &BimanualGraspPose,
    ctx: &EnergyContext,
) -> Result<f64, SynthesisError> {
    let contacts = active_contacts(pose, ctx)?;
    let maps = grasp_maps(&contacts, ctx);
    Ok(wrench_tracking_error(
        &maps,
        &ctx.cone,
        ctx.targets,
        ctx.weights.wrench_scale,
    ))
}

pub fn total_energy(
    pose: &BimanualGraspPose,
    ctx: &EnergyContext,
) -> Result<EnergyBreakdown, SynthesisError> {
    let wrench = energy_wrench(pose, ctx)?;
    let contact = energy_contact(pose, ctx)?;
    let collision = energy_collision(pose, ctx)?;
    let hand_hand = energy_hand_hand(pose, ctx)?;
    let w = &ctx.weights;
    Ok(EnergyBreakdown {
        wrench,
        contact,
        collision,
        hand_hand,
        total: w.kappa_w * wrench
            + w.kappa_con * contact
            + w.kappa_coll * collision
            + w.kappa_hh * hand_hand,
    })
}

/// Rotation taking `from` onto `to`, with a deterministic π fallback for the
/// antiparallel case.
fn align(from: &Vector3<f64>, to: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::rotation_between(from, to).unwrap_or_else(|| {
        let helper = if from.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let axis = Unit::new_normalize(from.cross(&helper));
        Rotation3::from_axis_angle(&axis, std::f64::consts::PI)
    })
}

/// Distance from the hull sample at which a hand base starts.
fn standoff(strategy: GraspStrategy) -> f64 {
    if strategy == GraspStrategy::Bimanual {
        0.05
    } else {
        0.02
    }
}

/// Palm normal expressed in the hand base frame at the given posture.
fn palm_normal_in_base(hand: &HandModel, q: &JointVector) -> Result<Vector3<f64>, SynthesisError> {
    let poses = hand.link_poses(&RigidTransform::identity(), q)?;
    Ok(hand.palm_normal_world(&poses))
}

/// Places one hand base over a surface sample: palm toward the object along
/// the sample normal, with a seeded roll about the approach axis.
fn place_hand(
    sample_pos: &Point3<f64>,
    outward: &Vector3<f64>,
    palm_dir: &Vector3<f64>,
    dist: f64,
    roll: f64,
) -> (Vector3<f64>, Rotation3<f64>) {
    let approach = -outward;
    let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(approach), roll)
        * align(palm_dir, &approach);
    (sample_pos.coords + dist * outward, rotation)
}

/// Initializes a candidate on the object's convex hull: unimanual hands sit
/// one standoff above a hull sample with the palm facing it; bimanual hands
/// take two samples on opposite sides of the hull centroid. Deterministic
/// per seed.
pub fn init_grasp(
    mesh: &TriMesh,
    hand: &HandModel,
    strategy: GraspStrategy,
    seed: u64,
) -> Result<BimanualGraspPose, SynthesisError> {
    let hull = convex_hull(mesh)?;
    init_on_hull(&hull, hand, strategy, seed)
}

pub(crate) fn init_on_hull(
    hull: &TriMesh,
    hand: &HandModel,
    strategy: GraspStrategy,
    seed: u64,
) -> Result<BimanualGraspPose, SynthesisError> {
    let q_open = hand.q_open(strategy)?.clone();
    let palm_dir = palm_normal_in_base(hand, &q_open)?;
    let mut roll_rng = counter_rng(seed ^ 0x9e37_79b9_7f4a_7c15, 1);
    let dist = standoff(strategy);
    let mut hands = [
        HandPose {
            translation: Vector3::zeros(),
            rotation: Rotation3::identity(),
            q: q_open.clone(),
        },
        HandPose {
            translation: Vector3::zeros(),
            rotation: Rotation3::identity(),
            q: q_open.clone(),
        },
    ];
    let active;
    if strategy == GraspStrategy::Bimanual {
        let centroid = hull.center_of_mass().unwrap_or_else(|_| hull.area_centroid());
        let samples = sample_surface(hull, 128, seed)?;
        let opposed = (0..samples.len() / 2)
            .map(|i| (&samples[2 * i], &samples[2 * i + 1]))
            .find(|(a, b)| (a.position - centroid).dot(&(b.position - centroid)) < 0.0)
            .ok_or(SynthesisError::NoOpposedPlacement)?;
        for (h, s) in [opposed.0, opposed.1].into_iter().enumerate() {
            let roll = 2.0 * std::f64::consts::PI * roll_rng.random::<f64>();
            let (t, r) = place_hand(&s.position, &s.normal, &palm_dir, dist, roll);
            hands[h].translation = t;
            hands[h].rotation = r;
        }
        active = [true, true];
    } else {
        let s = &sample_surface(hull, 1, seed)?[0];
        let roll = 2.0 * std::f64::consts::PI * roll_rng.random::<f64>();
        let (t, r) = place_hand(&s.position, &s.normal, &palm_dir, dist, roll);
        hands[0].translation = t;
        hands[0].rotation = r;
        active = [true, false];
    }
    Ok(BimanualGraspPose {
        hands,
        active,
        strategy,
    })
}

/// Projected-gradient optimizer knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Initial backtracking step (m / rad).
    pub step0: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Finite-difference step for translation and rotation coordinates.
    pub fd_step_pose: f64,
    /// Finite-difference step for joint coordinates (rad).
    pub fd_step_joint: f64,
    pub step_tol: f64,
    pub energy_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 120,
            step0: 0.02,
            backtrack: 0.5,
            max_backtracks: 25,
            fd_step_pose: 1e-4,
            fd_step_joint: 1e-3,
            step_tol: 1e-5,
            energy_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub pose: BimanualGraspPose,
    pub energy: EnergyBreakdown,
    pub converged: bool,
    pub iterations: usize,
    /// Accepted energies, starting at the initial value; strictly decreasing.
    pub history: Vec<f64>,
}

/// Number of optimization coordinates: 6 pose + all joints per active hand.
fn coordinate_count(pose: &BimanualGraspPose) -> usize {
    pose.active_hands().map(|h| 6 + pose.hands[h].q.len()).sum()
}

/// Applies a packed coordinate step: translation offset, rotation tangent
/// retracted through the exponential map, joint offsets clamped to limits.
fn apply_step(
    pose: &BimanualGraspPose,
    hand: &HandModel,
    delta: &[f64],
) -> BimanualGraspPose {
    let mut next = pose.clone();
    let mut at = 0;
    for h in pose.active_hands() {
        let hp = &mut next.hands[h];
        hp.translation += Vector3::new(delta[at], delta[at + 1], delta[at + 2]);
        let omega = Vector3::new(delta[at + 3], delta[at + 4], delta[at + 5]);
        hp.rotation = Rotation3::new(omega) * hp.rotation;
        at += 6;
        for d in 0..hp.q.len() {
            hp.q[d] += delta[at + d];
        }
        hp.q = hand.chain.clamp_to_limits(&hp.q);
        at += hp.q.len();
    }
    next
}

fn fd_step(config: &OptimizerConfig, coord_in_hand: usize) -> f64 {
    if coord_in_hand < 6 {
        config.fd_step_pose
    } else {
        config.fd_step_joint
    }
}

/// Central finite-difference gradient of the total energy in the packed
/// coordinates.
fn energy_gradient(
    pose: &BimanualGraspPose,
    ctx: &EnergyContext,
    config: &OptimizerConfig,
) -> Result<Vec<f64>, SynthesisError> {
    let n = coordinate_count(pose);
    let mut grad = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let mut offsets = Vec::new();
    let mut at = 0;
    for h in pose.active_hands() {
        for i in 0..6 + pose.hands[h].q.len() {
            offsets.push(i);
        }
        at += 6 + pose.hands[h].q.len();
    }
    debug_assert_eq!(at, n);
    for k in 0..n {
        let h = fd_step(config, offsets[k]);
        delta[k] = h;
        let plus = total_energy(&apply_step(pose, ctx.hand, &delta), ctx)?.total;
        delta[k] = -h;
        let minus = total_energy(&apply_step(pose, ctx.hand, &delta), ctx)?.total;
        delta[k] = 0.0;
        grad[k] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Upper level of the bilevel program: projected gradient descent with
/// backtracking line search on the total energy, re-solving the contact
/// force QP inside every energy evaluation. Accepts only strict decreases;
/// every iterate keeps rotations orthonormal (exponential-map retraction)
/// and joints within limits (clamp).
pub fn optimize_grasp(
    pose0: &BimanualGraspPose,
    ctx: &EnergyContext,
    config: &OptimizerConfig,
) -> Result<OptimizeReport, SynthesisError> {
    let mut pose = pose0.clone();
    let mut energy = total_energy(&pose, ctx)?;
    let mut history = vec![energy.total];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        let grad = energy_gradient(&pose, ctx, config)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm == 0.0 {
            converged = true;
            break;
        }
        let dir: Vec<f64> = grad.iter().map(|g| -g / norm).collect();
        let mut step = config.step0;
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let delta: Vec<f64> = dir.iter().map(|d| d * step).collect();
            let cand = apply_step(&pose, ctx.hand, &delta);
            let cand_energy = total_energy(&cand, ctx)?;
            if cand_energy.total < energy.total {
                accepted = Some((cand, cand_energy, step));
                break;
            }
            step *= config.backtrack;
        }
        match accepted {
            Some((next, next_energy, used_step)) => {
                let decrease = energy.total - next_energy.total;
                pose = next;
                energy = next_energy;
                history.push(energy.total);
                iterations += 1;
                if used_step < config.step_tol || decrease < config.energy_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                // No descent at line-search resolution: a local minimum.
                converged = true;
                break;
            }
        }
    }
    Ok(OptimizeReport {
        pose,
        energy,
        converged,
        iterations,
        history,
    })
}

/// One optimized candidate of a batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub pose: BimanualGraspPose,
    pub energy: EnergyBreakdown,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
}

/// Candidates sorted by total energy ascending (ties by seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateBatch {
    pub candidates: Vec<Candidate>,
}

/// Inputs of a synthesis run beyond the mesh and hand model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub weights: EnergyWeights,
    pub cone: FrictionCone,
    pub object_mass: f64,
    pub table_height: Option<f64>,
    /// Override the default gravity-plus-disturbances target set.
    pub targets: Option<TargetWrenchSet>,
    /// Use the surface-area centroid instead of the volume centroid.
    pub use_area_centroid: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            weights: EnergyWeights::default(),
            cone: FrictionCone::default(),
            object_mass: 0.1,
            table_height: None,
            targets: None,
            use_area_centroid: false,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Derives a per-candidate seed list from one base seed.
pub fn seed_list(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64)
        .map(|i| {
            let mut z = base.wrapping_add(i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^ (z >> 31)
        })
        .collect()
}

/// Mesh-derived quantities shared by a whole synthesis run.
pub struct SceneModel {
    pub sdf: MeshSdf,
    pub hull: TriMesh,
    pub com: Point3<f64>,
    pub alpha: f64,
    pub targets: TargetWrenchSet,
}

impl SceneModel {
    pub fn build(mesh: &TriMesh, config: &SynthesisConfig) -> Result<Self, SynthesisError> {
        let hull = convex_hull(mesh)?;
        let com = if config.use_area_centroid {
            mesh.area_centroid()
        } else {
            mesh.center_of_mass()?
        };
        let alpha = 1.0 / mesh.bounding_radius_about(&com).max(1e-9);
        let targets = config
            .targets
            .clone()
            .unwrap_or_else(|| TargetWrenchSet::standard(config.object_mass));
        Ok(SceneModel {
            sdf: MeshSdf::new(mesh.clone()),
            hull,
            com,
            alpha,
            targets,
        })
    }

    pub fn context<'a>(
        &'a self,
        hand: &'a HandModel,
        config: &SynthesisConfig,
    ) -> EnergyContext<'a> {
        EnergyContext {
            sdf: &self.sdf,
            hand,
            com: self.com,
            alpha: self.alpha,
            cone: config.cone,
            targets: &self.targets,
            weights: config.weights,
            table_height: config.table_height,
        }
    }
}

/// Runs init + optimize for every seed in parallel; the result is sorted by
/// total energy and independent of scheduling and of seed-list order.
pub fn synthesize_batch(
    mesh: &TriMesh,
    hand: &HandModel,
    strategy: GraspStrategy,
    seeds: &[u64],
    config: &SynthesisConfig,
) -> Result<CandidateBatch, SynthesisError> {
    let scene = SceneModel::build(mesh, config)?;
    let ctx = scene.context(hand, config);
    let mut candidates = seeds
        .par_iter()
        .map(|&seed| {
            let pose0 = init_on_hull(&scene.hull, hand, strategy, seed)?;
            let report = optimize_grasp(&pose0, &ctx, &config.optimizer)?;
            Ok(Candidate {
                pose: report.pose,
                energy: report.energy,
                converged: report.converged,
                iterations: report.iterations,
                seed,
            })
        })
        .collect::<Result<Vec<_>, SynthesisError>>()?;
    candidates.sort_by(|a, b| {
        a.energy
            .total
            .total_cmp(&b.energy.total)
            .then(a.seed.cmp(&b.seed))
    });
    Ok(CandidateBatch { candidates })
}
