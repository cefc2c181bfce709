//! Lower level of the bilevel grasp program: nonnegative least squares over
//! friction-pyramid edge coefficients, minimizing the wrench residual.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};

use crate::contact::{cone_edges, FrictionCone, GraspMap, Wrench};

/// Friction-feasible contact forces for one target wrench.
#[derive(Debug, Clone)]
pub struct ForceSolution {
    /// Edge coefficients, contact-major: beta[i * edge_count + k] ≥ 0.
    pub beta: Vec<f64>,
    /// Per-contact force in the contact's local frame.
    pub forces: Vec<Vector3<f64>>,
    /// scale·target − Σ Gᵢfᵢ, recomputed from the forces.
    pub residual: Wrench,
    pub residual_norm: f64,
}

/// Wrenches the grasp must track; torques are in the same normalized units
/// the grasp maps produce.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct TargetWrenchSet {
    pub wrenches: Vec<Wrench>,
}

impl TargetWrenchSet {
    /// Gravity support for the object plus unit force disturbances along ±x,
    /// ±y, ±z.
    pub fn standard(object_mass: f64) -> Self {
        let mut wrenches = vec![Wrench {
            force: Vector3::new(0.0, 0.0, object_mass * 9.81),
            torque: Vector3::zeros(),
        }];
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut f = Vector3::zeros();
                f[axis] = sign;
                wrenches.push(Wrench {
                    force: f,
                    torque: Vector3::zeros(),
                });
            }
        }
        TargetWrenchSet { wrenches }
    }

    pub fn len(&self) -> usize {
        self.wrenches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wrenches.is_empty()
    }
}

/// Stacked edge-wrench columns A with A[:, i·m + k] = Gᵢ·e_k.
fn edge_matrix(maps: &[GraspMap], cone: &FrictionCone) -> DMatrix<f64> {
    let edges = cone_edges(cone);
    let mut a = DMatrix::zeros(6, maps.len() * edges.len());
    for (i, g) in maps.iter().enumerate() {
        for (k, e) in edges.iter().enumerate() {
            let w = g.matrix * e;
            a.column_mut(i * edges.len() + k).copy_from(&w);
        }
    }
    a
}

/// Lawson–Hanson active-set NNLS: min ‖Aβ − b‖² subject to β ≥ 0.
///
/// The passive-set least-squares subproblem is solved by QR; at exit the
/// KKT conditions hold to solver precision: the objective gradient
/// 2Aᵀ(Aβ − b) vanishes on the passive set and is nonnegative on the
/// active set.
fn nnls(a: &DMatrix<f64>, b: &Vector6<f64>) -> Vec<f64> {
    let n = a.ncols();
    let mut beta = vec![0.0f64; n];
    let mut passive = vec![false; n];
    let b_dyn = DVector::from_column_slice(b.as_slice());
    let mut residual = b_dyn.clone();
    let tol = 1e-9 * b.norm().max(1.0);
    let max_outer = 3 * n.max(2);
    for _ in 0..max_outer {
        let mut best = (tol, usize::MAX);
        for k in 0..n {
            if !passive[k] {
                let w = a.column(k).dot(&residual);
                if w > best.0 {
                    best = (w, k);
                }
            }
        }
        if best.1 == usize::MAX {
            break;
        }
        passive[best.1] = true;
        // Inner loop: restore feasibility of the passive-set LS solution.
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let ap = a.select_columns(idx.iter());
            let qr = ap.clone().qr();
            let z = qr
                .r()
                .solve_upper_triangular(&(qr.q().transpose() * &b_dyn))
                .unwrap_or_else(|| {
                    (ap.transpose() * &ap)
                        .lu()
                        .solve(&(ap.transpose() * &b_dyn))
                        .unwrap_or_else(|| DVector::zeros(idx.len()))
                });
            if !z.iter().all(|v| v.is_finite()) {
                log::warn!("nnls passive-set solve produced non-finite values");
                passive[best.1] = false;
                break;
            }
            if z.iter().all(|&v| v > 0.0) {
                for (slot, &k) in idx.iter().enumerate() {
                    beta[k] = z[slot];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (slot, &k) in idx.iter().enumerate() {
                if z[slot] <= 0.0 {
                    alpha = alpha.min(beta[k] / (beta[k] - z[slot]));
                }
            }
            for (slot, &k) in idx.iter().enumerate() {
                beta[k] += alpha * (z[slot] - beta[k]);
                if beta[k] <= 1e-14 || (z[slot] <= 0.0 && beta[k] <= alpha * 1e-12) {
                    beta[k] = 0.0;
                    passive[k] = false;
                }
            }
        }
        let beta_dyn = DVector::from_column_slice(&beta);
        residual = &b_dyn - a * beta_dyn;
    }
    beta
}

/// Finds friction-feasible forces minimizing ‖scale·target − Σ Gᵢfᵢ‖.
pub fn solve_contact_forces(
    maps: &[GraspMap],
    cone: &FrictionCone,
    target: &Wrench,
    scale: f64,
) -> ForceSolution {
    let edges = cone_edges(cone);
    let b = scale * target.to_vector();
    let beta = if maps.is_empty() {
        Vec::new()
    } else {
        nnls(&edge_matrix(maps, cone), &b)
    };
    let forces: Vec<Vector3<f64>> = (0..maps.len())
        .map(|i| {
            edges
                .iter()
                .enumerate()
                .map(|(k, e)| beta[i * edges.len() + k] * e)
                .sum()
        })
        .collect();
    let mut achieved = Vector6::zeros();
    for (g, f) in maps.iter().zip(&forces) {
        achieved += g.apply(f).to_vector();
    }
    let residual = Wrench::from_vector(&(b - achieved));
    ForceSolution {
        beta,
        forces,
        residual,
        residual_norm: residual.norm(),
    }
}

/// Sum of squared residual norms over the target set.
pub fn wrench_tracking_error(
    maps: &[GraspMap],
    cone: &FrictionCone,
    targets: &TargetWrenchSet,
    scale: f64,
) -> f64 {
    targets
        .wrenches
        .iter()
        .map(|w| solve_contact_forces(maps, cone, w, scale).residual_norm.powi(2))
        .sum()
}
