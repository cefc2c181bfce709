//! Hard-finger contact model: friction cones, their pyramid linearization,
//! grasp maps, and force-closure certification.

use nalgebra::{Matrix3, Matrix6, Matrix6x3, Point3, Rotation3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContactError {
    #[error("friction coefficient must be > 0, got {0}")]
    BadMu(f64),
    #[error("cone needs at least 3 edges, got {0}")]
    BadEdgeCount(usize),
}

/// Coulomb friction cone with a pyramid linearization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FrictionConeRepr")]
pub struct FrictionCone {
    pub mu: f64,
    pub edge_count: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrictionConeRepr {
    mu: f64,
    edge_count: usize,
}

impl TryFrom<FrictionConeRepr> for FrictionCone {
    type Error = ContactError;
    fn try_from(r: FrictionConeRepr) -> Result<Self, ContactError> {
        FrictionCone::new(r.mu, r.edge_count)
    }
}

impl FrictionCone {
    pub fn new(mu: f64, edge_count: usize) -> Result<Self, ContactError> {
        if !(mu > 0.0) {
            return Err(ContactError::BadMu(mu));
        }
        if edge_count < 3 {
            return Err(ContactError::BadEdgeCount(edge_count));
        }
        Ok(FrictionCone { mu, edge_count })
    }
}

impl Default for FrictionCone {
    fn default() -> Self {
        FrictionCone {
            mu: 0.6,
            edge_count: 8,
        }
    }
}

/// True iff `f`, in the contact frame, presses (f_z ≥ 0) and stays within the
/// friction bound ‖f_tan‖ ≤ μ·f_z, with 1e-12 slack.
pub fn cone_contains(f: &Vector3<f64>, cone: &FrictionCone) -> bool {
    f.z >= -1e-12 && f.xy().norm() <= cone.mu * f.z + 1e-12
}

/// Unit edge vectors of the linearized cone: normalize((μcosθ_k, μsinθ_k, 1))
/// for θ_k = 2πk/m.
pub fn cone_edges(cone: &FrictionCone) -> Vec<Vector3<f64>> {
    (0..cone.edge_count)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / cone.edge_count as f64;
            Vector3::new(cone.mu * theta.cos(), cone.mu * theta.sin(), 1.0).normalize()
        })
        .collect()
}

/// A world-frame contact with its pressing frame and provenance.
#[derive(Debug, Clone, Copy)]
pub struct Contact {
    pub position: Point3<f64>,
    /// Rotation local→world; the local z-axis is the pressing direction.
    pub frame: Rotation3<f64>,
    pub hand: u8,
    pub anchor_id: usize,
}

/// Force and α-scaled torque on the object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Wrench {
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Wrench {
            force: Vector3::new(v[0], v[1], v[2]),
            torque: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(self) -> Vector6<f64> {
        Vector6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        )
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// The 6×3 map from a local contact force to an object wrench.
#[derive(Debug, Clone, Copy)]
pub struct GraspMap {
    pub matrix: Matrix6x3<f64>,
}

impl GraspMap {
    pub fn apply(&self, f: &Vector3<f64>) -> Wrench {
        Wrench::from_vector(&(self.matrix * f))
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// G = [O; α·(p − m)×·O]: forces pass through the frame, torques take the
/// lever arm about the center of mass, scaled by α.
pub fn grasp_map(contact: &Contact, com: &Point3<f64>, alpha: f64) -> GraspMap {
    let o = contact.frame.matrix();
    let lever = skew(&(contact.position - com));
    let mut m = Matrix6x3::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(o);
    m.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(alpha * lever * o));
    GraspMap { matrix: m }
}

/// w = G f.
pub fn contact_wrench(g: &GraspMap, f: &Vector3<f64>) -> Wrench {
    g.apply(f)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosureConfig {
    /// Margin below which a direction counts as unresisted.
    pub epsilon: f64,
    /// Size of the deterministic base direction design on the wrench sphere.
    pub n_directions: usize,
}

impl Default for ClosureConfig {
    fn default() -> Self {
        ClosureConfig {
            epsilon: 1e-3,
            n_directions: 128,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClosureReport {
    pub closed: bool,
    /// Worst-direction achievable resistance under unit total normal force.
    pub margin: f64,
}

/// Columns u_jᵀ·W̃ maximized over: the normalized wrench each cone edge
/// produces per unit of normal force.
pub(crate) fn normalized_edge_wrenches(
    contacts: &[Contact],
    cone: &FrictionCone,
    com: &Point3<f64>,
    alpha: f64,
) -> Vec<Vector6<f64>> {
    let edges = cone_edges(cone);
    let mut columns = Vec::with_capacity(contacts.len() * edges.len());
    for c in contacts {
        let g = grasp_map(c, com, alpha);
        for e in &edges {
            let w = g.matrix * e;
            columns.push(w / e.z);
        }
    }
    columns
}

/// Deterministic base directions on the unit 5-sphere, seeded once.
fn base_directions(n: usize) -> Vec<Vector6<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4746_4449);
    let mut normal = move || {
        // Box-Muller; the counterpart variate is discarded for simplicity.
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    (0..n)
        .map(|_| {
            loop {
                let v = Vector6::from_fn(|_, _| normal());
                let len = v.norm();
                if len > 1e-6 {
                    return v / len;
                }
            }
        })
        .collect()
}

/// Orthonormal frame adapted to the wrench columns: eigenvectors of the
/// second-moment matrix, ordered by descending eigenvalue, with signs fixed
/// against the column sum. Rotating the contacts rotates this frame with
/// them; evaluating in its coordinates makes the margin equivariant and aims
/// probe directions along any thin axes of the wrench hull.
fn covariant_frame(columns: &[Vector6<f64>]) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let mut s = Vector6::zeros();
    for w in columns {
        m += w * w.transpose();
        s += w;
    }
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut frame = Matrix6::zeros();
    for (col, &i) in order.iter().enumerate() {
        let mut u = eig.eigenvectors.column(i).into_owned();
        let d = u.dot(&s);
        if d.abs() > 1e-9 * s.norm().max(1e-300) {
            if d < 0.0 {
                u = -u;
            }
        } else {
            // Symmetric configurations cancel the column sum; fall back to a
            // fixed component-sign rule.
            let lead = u.iter().cloned().fold(0.0f64, |acc, v| {
                if v.abs() > acc.abs() {
                    v
                } else {
                    acc
                }
            });
            if lead < 0.0 {
                u = -u;
            }
        }
        frame.set_column(col, &u);
    }
    frame
}

/// Support function max_k uᵀw_k of the column set.
fn support(columns: &[Vector6<f64>], u: &Vector6<f64>) -> f64 {
    columns
        .iter()
        .map(|w| u.dot(w))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Locally minimizes the support function on the direction sphere by
/// annealed softmax subgradient descent, returning the lowest true support
/// seen along the path. The smooth surrogate keeps the path stable under
/// tiny input perturbations.
fn refine_direction(columns: &[Vector6<f64>], start: &Vector6<f64>, scale: f64) -> f64 {
    let mut u = *start;
    let mut best = support(columns, &u);
    let mut tau = 0.2 * scale;
    for j in 0..64 {
        let values: Vec<f64> = columns.iter().map(|w| u.dot(w)).collect();
        let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut grad = Vector6::zeros();
        let mut total = 0.0;
        for (w, v) in columns.iter().zip(&values) {
            let p = ((v - top) / tau).exp();
            grad += p * w;
            total += p;
        }
        grad /= total;
        let tangent = grad - u.dot(&grad) * u;
        let len = tangent.norm();
        if len < 1e-14 * scale {
            break;
        }
        let step = 0.35 / (1.0 + 0.08 * j as f64);
        u = (u - step * tangent / len).normalize();
        best = best.min(support(columns, &u));
        tau = (tau * 0.88).max(1e-6 * scale);
    }
    best
}

/// Certifies force closure over a deterministic direction design with
/// adversarial refinement.
///
/// For each test direction u the best resistance is the LP
/// max uᵀ·Σβ_ck·w_ck over β ≥ 0 with unit total normal force, whose optimum
/// is attained on a single edge, so the margin along u is the largest
/// rescaled column dot product. Directions are evaluated in the covariant
/// frame of the columns: ± the seeded base design plus ± the frame axes,
/// whose trailing axes expose rank-deficient wrench hulls. The worst seeds
/// are then driven downhill on the support function to hunt narrow
/// separating cones that a fixed design would miss; refinement can only
/// lower the reported margin. The grasp is closed when the final worst
/// direction still achieves `epsilon`.
pub fn force_closure(
    contacts: &[Contact],
    cone: &FrictionCone,
    com: &Point3<f64>,
    alpha: f64,
    config: &ClosureConfig,
) -> ClosureReport {
    if contacts.is_empty() {
        return ClosureReport {
            closed: false,
            margin: f64::NEG_INFINITY,
        };
    }
    let world = normalized_edge_wrenches(contacts, cone, com, alpha);
    let frame = covariant_frame(&world);
    // Columns expressed in the covariant frame; directions live there too,
    // which makes the whole evaluation rotation-equivariant.
    let columns: Vec<Vector6<f64>> = world.iter().map(|w| frame.transpose() * w).collect();
    let scale = columns
        .iter()
        .map(|w| w.norm())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut seeds = Vec::with_capacity(2 * config.n_directions + 12);
    for d in base_directions(config.n_directions) {
        seeds.push(d);
        seeds.push(-d);
    }
    for axis in 0..6 {
        let mut e = Vector6::zeros();
        e[axis] = 1.0;
        seeds.push(e);
        seeds.push(-e);
    }
    let mut scored: Vec<(f64, usize)> = seeds
        .iter()
        .enumerate()
        .map(|(i, u)| (support(&columns, u), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut margin = scored[0].0;
    for &(_, i) in scored.iter().take(16) {
        margin = margin.min(refine_direction(&columns, &seeds[i], scale));
    }
    ClosureReport {
        closed: margin >= config.epsilon,
        margin,
    }
}
