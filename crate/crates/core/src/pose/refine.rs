//! Robust pose refinement by damped Gauss-Newton (Levenberg-Marquardt) with
//! a Huber kernel solved through iteratively reweighted least squares.
//!
//! Increments `(ω, v)` act on the left: `R' = exp(ω) R`, `t' = exp(ω) t + v`,
//! so the camera-frame point moves by `−[p_c]× ω + v` to first order.

use nalgebra::{Matrix2x3, Matrix3, SMatrix, SVector, UnitQuaternion, Vector2, Vector3, Vector6};

use super::{reprojection_residual, Observation, RansacConfig};
use crate::io::{CameraIntrinsics, Pose};

type Matrix2x6 = SMatrix<f64, 2, 6>;
type Matrix6 = SMatrix<f64, 6, 6>;

/// Applies the tangent increment `[ω, v]`.
pub fn retract(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let v = Vector3::new(delta[3], delta[4], delta[5]);
    let dq = UnitQuaternion::from_scaled_axis(w);
    Pose::new(dq * pose.translation() + v, dq * pose.quaternion())
}

/// Residual `π(T p) − x` and its Jacobian with respect to `[ω, v]`.
pub fn reprojection_jacobian(pose: &Pose, obs: &Observation, k: &CameraIntrinsics) -> Option<(Vector2<f64>, Matrix2x6)> {
    let r = reprojection_residual(pose, obs, k)?;
    let pc = pose.transform_point(&obs.point);
    let iz = 1.0 / pc.z;
    let dpi = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * pc.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * pc.y * iz * iz,
    );
    let skew = Matrix3::new(0.0, -pc.z, pc.y, pc.z, 0.0, -pc.x, -pc.y, pc.x, 0.0);
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dpi * -skew));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpi);
    Some((r, j))
}

/// Huber loss of a residual norm.
pub fn huber(e: f64, delta: f64) -> f64 {
    if e <= delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

/// Σ huber(‖r_i‖); points behind the camera cost as if at a large error.
pub fn robust_cost(pose: &Pose, obs: &[Observation], k: &CameraIntrinsics, delta: f64) -> f64 {
    const BEHIND_PX: f64 = 1e6;
    obs.iter()
        .map(|o| huber(reprojection_residual(pose, o, k).map_or(BEHIND_PX, |r| r.norm()), delta))
        .sum()
}

/// Objective value after the initial pose and after every accepted step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineTrace {
    pub costs: Vec<f64>,
    pub iterations: usize,
}

/// Refines `init` on `obs`; returns the best iterate and its cost trace.
pub fn refine_pose(init: &Pose, obs: &[Observation], k: &CameraIntrinsics, cfg: &RansacConfig) -> (Pose, RefineTrace) {
    let delta = cfg.huber_delta_px;
    let mut pose = *init;
    let mut cost = robust_cost(&pose, obs, k, delta);
    let mut trace = RefineTrace {
        costs: vec![cost],
        iterations: 0,
    };
    if obs.len() < 3 {
        return (pose, trace);
    }
    let mut lambda = 1e-4;
    for it in 0..cfg.refine_iters {
        trace.iterations = it + 1;
        let mut h = Matrix6::zeros();
        let mut g = SVector::<f64, 6>::zeros();
        for o in obs {
            let Some((r, j)) = reprojection_jacobian(&pose, o, k) else {
                continue;
            };
            let e = r.norm();
            let w = if e <= delta { 1.0 } else { delta / e };
            h += w * j.transpose() * j;
            g += w * j.transpose() * r;
        }
        if g.norm() == 0.0 {
            break;
        }
        let mut accepted = false;
        let mut tiny = false;
        for _ in 0..10 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * (h[(i, i)] + 1e-9);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&-g)) else {
                lambda *= 10.0;
                continue;
            };
            if step.norm() < 1e-10 {
                tiny = true;
                break;
            }
            let cand = retract(&pose, &step);
            let c = robust_cost(&cand, obs, k, delta);
            if c < cost {
                pose = cand;
                cost = c;
                trace.costs.push(c);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if tiny || !accepted {
            break;
        }
    }
    (pose, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(rng: &mut ChaCha8Rng, gt: &Pose, k: &CameraIntrinsics, n: usize) -> Vec<Observation> {
        let inv = gt.inverse();
        (0..n)
            .map(|_| {
                let pc = Vector3::new(rng.gen_range(-6.0..6.0), rng.gen_range(-3.0..3.0), rng.gen_range(3.0..25.0));
                let px = [k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy];
                Observation::new(px, inv.transform_point(&pc))
            })
            .collect()
    }

    fn gt() -> Pose {
        Pose::new(Vector3::new(0.3, -1.0, 2.0), UnitQuaternion::from_euler_angles(0.1, -0.4, 0.2))
    }

    #[test]
    fn stationary_at_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = CameraIntrinsics::standard_query();
        let obs = scene(&mut rng, &gt(), &k, 40);
        let (p, _) = refine_pose(&gt(), &obs, &k, &RansacConfig::default());
        assert!((p.translation() - gt().translation()).norm() < 1e-12);
        assert!(p.quaternion().angle_to(gt().quaternion()) < 1e-12);
    }

    #[test]
    fn converges_from_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = CameraIntrinsics::standard_query();
        let obs = scene(&mut rng, &gt(), &k, 40);
        let init = retract(&gt(), &Vector6::new(0.0, 1f64.to_radians(), 0.0, 0.1, 0.0, 0.0));
        let (p, trace) = refine_pose(&init, &obs, &k, &RansacConfig::default());
        assert!((p.translation() - gt().translation()).norm() < 1e-8);
        assert!(p.quaternion().angle_to(gt().quaternion()) < 1e-8);
        assert!(trace.costs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = CameraIntrinsics::standard_query();
        for _ in 0..50 {
            let pose = retract(&gt(), &Vector6::from_fn(|_, _| rng.gen_range(-0.3..0.3)));
            let obs = scene(&mut rng, &pose, &k, 1)[0];
            let (_, j) = reprojection_jacobian(&pose, &obs, &k).unwrap();
            let h = 1e-6;
            for c in 0..6 {
                let mut d = Vector6::zeros();
                d[c] = h;
                let rp = reprojection_residual(&retract(&pose, &d), &obs, &k).unwrap();
                let rm = reprojection_residual(&retract(&pose, &-d), &obs, &k).unwrap();
                let fd = (rp - rm) / (2.0 * h);
                let an = j.column(c);
                assert!((fd - an).norm() <= 1e-5 * an.norm().max(1.0), "col {c}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn huber_pieces() {
        assert_eq!(huber(1.0, 2.0), 0.5);
        assert_eq!(huber(4.0, 2.0), 6.0);
    }
}
