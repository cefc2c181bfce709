//! Damped-least-squares inverse kinematics as a deterministic reachability
//! check.

use nalgebra::{Matrix6, Point3, Rotation3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{forward_kinematics, jacobian, JointVector, KinError, KinematicModel};
use crate::transform::RigidTransform;

#[derive(Debug, Clone, Copy)]
pub struct DlsConfig {
    /// Damping floor; raised adaptively when a step overshoots.
    pub damping: f64,
    /// Iteration budget per start.
    pub max_iters: usize,
    /// Per-joint step clamp (rad or m).
    pub step_clamp: f64,
    pub pos_tol: f64,
    pub rot_tol: f64,
    /// Extra seeded starts tried when the caller's start stalls.
    pub restarts: usize,
}

impl Default for DlsConfig {
    fn default() -> Self {
        DlsConfig {
            damping: 1e-3,
            max_iters: 200,
            step_clamp: 0.3,
            pos_tol: 1e-4,
            rot_tol: 1e-3,
            restarts: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IkResult {
    pub converged: bool,
    pub q: JointVector,
    /// Pose error measured by re-running forward kinematics on `q`.
    pub pos_err: f64,
    pub rot_err: f64,
    pub iterations: usize,
}

/// Axis-angle magnitude of the rotation taking `current` to `target`.
pub fn rotation_error(target: &Rotation3<f64>, current: &Rotation3<f64>) -> f64 {
    (target * current.inverse()).angle()
}

fn pose_error(
    model: &KinematicModel,
    base: &RigidTransform,
    q: &JointVector,
    link: usize,
    target: &RigidTransform,
) -> Result<(f64, f64, Vector6<f64>), KinError> {
    let poses = forward_kinematics(model, base, q)?;
    let cur = &poses[link];
    let dp = target.translation - cur.translation;
    let rot = target.rotation * cur.rotation.inverse();
    let w = rot.scaled_axis();
    let e = Vector6::new(dp.x, dp.y, dp.z, w.x, w.y, w.z);
    Ok((dp.norm(), w.norm(), e))
}

struct IterState {
    q: JointVector,
    pos: f64,
    rot: f64,
    e: Vector6<f64>,
}

fn evaluate(
    model: &KinematicModel,
    base: &RigidTransform,
    q: JointVector,
    link: usize,
    target: &RigidTransform,
) -> Result<IterState, KinError> {
    let (pos, rot, e) = pose_error(model, base, &q, link, target)?;
    Ok(IterState { q, pos, rot, e })
}

/// One damped-least-squares descent from a fixed start. The damping grows
/// when a step fails to reduce the pose error and shrinks back toward the
/// floor on success, so near-singular postures slow down instead of
/// oscillating. Returns the best state reached and the iterations spent.
fn descend(
    model: &KinematicModel,
    base: &RigidTransform,
    link: usize,
    target: &RigidTransform,
    start: &JointVector,
    config: &DlsConfig,
) -> Result<(IterState, usize, bool), KinError> {
    let mut st = evaluate(model, base, model.clamp_to_limits(start), link, target)?;
    let mut lambda = config.damping;
    let mut used = 0;
    for iter in 0..config.max_iters {
        if st.pos <= config.pos_tol && st.rot <= config.rot_tol {
            return Ok((st, iter, true));
        }
        used = iter + 1;
        let poses = forward_kinematics(model, base, &st.q)?;
        let j = jacobian(
            model,
            &poses,
            link,
            &Point3::from(poses[link].translation),
        );
        let jjt = &j * j.transpose();
        let m: Matrix6<f64> = Matrix6::from_iterator(jjt.iter().copied())
            + Matrix6::identity() * lambda * lambda;
        let y = match m.cholesky() {
            Some(ch) => ch.solve(&st.e),
            None => m.lu().solve(&st.e).unwrap_or_else(Vector6::zeros),
        };
        let dq = j.transpose() * y;
        let mut q_new = st.q.clone();
        for d in 0..model.dof() {
            q_new[d] += dq[d].clamp(-config.step_clamp, config.step_clamp);
        }
        let cand = evaluate(model, base, model.clamp_to_limits(&q_new), link, target)?;
        if cand.e.norm() < st.e.norm() {
            st = cand;
            lambda = (lambda / 3.0).max(config.damping);
        } else {
            lambda *= 5.0;
            if lambda > 1e8 {
                break;
            }
        }
    }
    let converged = st.pos <= config.pos_tol && st.rot <= config.rot_tol;
    Ok((st, used, converged))
}

/// Solves for joint values placing `link`'s frame at `target`, starting from
/// `q_init` and falling back to a fixed sequence of seeded starts. Limits are
/// enforced by clamping after every step; the result is deterministic for
/// fixed inputs.
pub fn ik_solve(
    model: &KinematicModel,
    base: &RigidTransform,
    link: usize,
    target: &RigidTransform,
    q_init: &JointVector,
    config: &DlsConfig,
) -> Result<IkResult, KinError> {
    if q_init.len() != model.dof() {
        return Err(KinError::JointCountMismatch {
            expected: model.dof(),
            got: q_init.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b5f_31c7);
    let (lo, hi) = model.limits();
    let mut best: Option<IterState> = None;
    let mut iterations = 0;
    for attempt in 0..=config.restarts {
        let start = match attempt {
            0 => q_init.clone(),
            // Aligning the first joint with the target azimuth resolves the
            // global pan decision for upright arms; for other chains these
            // are just two more starts.
            1 | 2 if model.dof() > 0 => {
                let p = base.inverse().transform_point(&Point3::from(target.translation));
                let mut az = p.y.atan2(p.x);
                if attempt == 2 {
                    az += std::f64::consts::PI;
                    if az > std::f64::consts::PI {
                        az -= 2.0 * std::f64::consts::PI;
                    }
                }
                let mut q = q_init.clone();
                q[0] = az;
                q
            }
            _ => JointVector(
                lo.iter()
                    .zip(&hi)
                    .map(|(&l, &u)| l + (u - l) * rng.random::<f64>())
                    .collect(),
            ),
        };
        let (st, used, converged) = descend(model, base, link, target, &start, config)?;
        iterations += used;
        if converged {
            return finish(model, base, link, target, st.q, iterations, config);
        }
        if best
            .as_ref()
            .is_none_or(|b| st.pos + st.rot < b.pos + b.rot)
        {
            best = Some(st);
        }
    }
    let best = best.expect("at least one start was tried");
    finish(model, base, link, target, best.q, iterations, config)
}

fn finish(
    model: &KinematicModel,
    base: &RigidTransform,
    link: usize,
    target: &RigidTransform,
    q: JointVector,
    iterations: usize,
    config: &DlsConfig,
) -> Result<IkResult, KinError> {
    let (pos_err, rot_err, _) = pose_error(model, base, &q, link, target)?;
    Ok(IkResult {
        converged: pos_err <= config.pos_tol && rot_err <= config.rot_tol,
        q,
        pos_err,
        rot_err,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::super::urdf::load_urdf;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arm() -> KinematicModel {
        load_urdf(
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/arm.urdf"),
        )
        .unwrap()
    }

    fn random_in_limits(model: &KinematicModel, rng: &mut ChaCha8Rng) -> JointVector {
        let (lo, hi) = model.limits();
        // Stay away from the extremes, where round trips legitimately stall
        // on the clamp.
        JointVector(
            lo.iter()
                .zip(&hi)
                .map(|(&l, &u)| {
                    let margin = 0.15 * (u - l);
                    l + margin + (u - l - 2.0 * margin) * rng.random::<f64>()
                })
                .collect(),
        )
    }

    #[test]
    fn round_trip_reaches_fk_targets() {
        let model = arm();
        let flange = model.link_id("flange").unwrap();
        let base = RigidTransform::identity();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let q_home = JointVector(vec![0.0, -0.6, 1.1, -0.5, 0.6, 0.0]);
        let mut successes = 0;
        let trials = 25;
        for _ in 0..trials {
            let q_star = random_in_limits(&model, &mut rng);
            let target = forward_kinematics(&model, &base, &q_star).unwrap()[flange];
            let r = ik_solve(
                &model,
                &base,
                flange,
                &target,
                &q_home,
                &DlsConfig::default(),
            )
            .unwrap();
            if r.converged {
                assert!(r.pos_err <= 1e-4);
                assert!(r.rot_err <= 1e-3);
                let (lo, hi) = model.limits();
                for d in 0..model.dof() {
                    assert!(r.q[d] >= lo[d] - 1e-12 && r.q[d] <= hi[d] + 1e-12);
                }
                successes += 1;
            }
        }
        assert!(successes * 100 >= trials * 95, "{successes}/{trials}");
    }

    #[test]
    fn unreachable_target_fails() {
        let model = arm();
        let flange = model.link_id("flange").unwrap();
        let target = RigidTransform::from_translation(nalgebra::Vector3::new(10.0, 0.0, 0.0));
        let r = ik_solve(
            &model,
            &RigidTransform::identity(),
            flange,
            &target,
            &JointVector::zeros(6),
            &DlsConfig::default(),
        )
        .unwrap();
        assert!(!r.converged);
        assert!(r.pos_err > 8.0);
    }

    #[test]
    fn current_pose_converges_immediately() {
        let model = arm();
        let flange = model.link_id("flange").unwrap();
        let q = JointVector(vec![0.3, -0.4, 0.9, 0.2, -0.5, 0.8]);
        let target =
            forward_kinematics(&model, &RigidTransform::identity(), &q).unwrap()[flange];
        let r = ik_solve(
            &model,
            &RigidTransform::identity(),
            flange,
            &target,
            &q,
            &DlsConfig::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 1);
    }

    #[test]
    fn determinism() {
        let model = arm();
        let flange = model.link_id("flange").unwrap();
        let target = RigidTransform::from_xyz_rpy([0.4, 0.1, 0.5], [0.1, 0.8, -0.4]);
        let q0 = JointVector(vec![0.0, -0.6, 1.1, -0.5, 0.6, 0.0]);
        let a = ik_solve(
            &model,
            &RigidTransform::identity(),
            flange,
            &target,
            &q0,
            &DlsConfig::default(),
        )
        .unwrap();
        let b = ik_solve(
            &model,
            &RigidTransform::identity(),
            flange,
            &target,
            &q0,
            &DlsConfig::default(),
        )
        .unwrap();
        assert_eq!(a.q, b.q);
        assert_eq!(a.iterations, b.iterations);
    }
}
