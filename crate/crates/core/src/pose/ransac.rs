use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::p3p::{bearing_of, p3p_bearings};
use super::refine::refine_pose;
use super::{reprojection_error, Observation, RansacConfig, RelocalizationResult, StageStats, Status};
use crate::io::{CameraIntrinsics, Pose};

const SAMPLE: usize = 4;

/// Inlier mask (error < threshold) and mean error over inliers.
pub fn count_inliers(pose: &Pose, obs: &[Observation], k: &CameraIntrinsics, thresh: f64) -> (Vec<bool>, usize, f64) {
    let mut mask = Vec::with_capacity(obs.len());
    let (mut n, mut sum) = (0usize, 0.0);
    for o in obs {
        let e = reprojection_error(pose, o, k);
        let inl = e < thresh;
        if inl {
            n += 1;
            sum += e;
        }
        mask.push(inl);
    }
    (mask, n, if n > 0 { sum / n as f64 } else { f64::NAN })
}

fn needed_iterations(inliers: usize, n: usize, confidence: f64) -> f64 {
    let w = inliers as f64 / n as f64;
    let p = w.powi(SAMPLE as i32);
    if p >= 1.0 {
        return 0.0;
    }
    if p <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - p).ln()).ceil()
}

/// Seeded P3P RANSAC followed by robust refinement on the inliers.
///
/// Each iteration samples four correspondences: three feed the solver and
/// the fourth picks among its roots. The best hypothesis is the first one
/// reaching the highest inlier count. The reported inliers are a recount
/// under the returned pose.
pub fn pnp_ransac(obs: &[Observation], k: &CameraIntrinsics, cfg: &RansacConfig) -> RelocalizationResult {
    let n = obs.len();
    if n < SAMPLE {
        return RelocalizationResult::failed("insufficient matches", n);
    }
    let bearings: Vec<_> = obs.iter().map(|o| bearing_of(&o.pixel, k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Pose, usize)> = None;
    let mut limit = cfg.max_iters as f64;
    let mut it = 0usize;
    while (it as f64) < limit && it < cfg.max_iters {
        it += 1;
        let idx = sample(&mut rng, n, SAMPLE).into_vec();
        let (a, b, c, d) = (idx[0], idx[1], idx[2], idx[3]);
        let sols = p3p_bearings(&[bearings[a], bearings[b], bearings[c]], &[obs[a].point, obs[b].point, obs[c].point]);
        let Some((pose, err4)) = sols
            .into_iter()
            .map(|p| (p, reprojection_error(&p, &obs[d], k)))
            .min_by(|x, y| x.1.total_cmp(&y.1))
        else {
            continue;
        };
        if !(err4 < cfg.inlier_thresh_px) {
            continue;
        }
        let (_, count, _) = count_inliers(&pose, obs, k, cfg.inlier_thresh_px);
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((pose, count));
            limit = limit.min(needed_iterations(count, n, cfg.confidence));
        }
    }
    let Some((mut pose, count)) = best else {
        return RelocalizationResult::failed("no consistent hypothesis", n);
    };
    if count < cfg.min_inliers {
        return RelocalizationResult::failed("ransac below min_inliers", n);
    }

    // refine on the inliers, then once more on the recounted set
    let (mut mask, mut inl, mut mean) = count_inliers(&pose, obs, k, cfg.inlier_thresh_px);
    for _ in 0..2 {
        let subset: Vec<Observation> = obs.iter().zip(&mask).filter(|(_, &m)| m).map(|(o, _)| *o).collect();
        let (refined, _) = refine_pose(&pose, &subset, k, cfg);
        let (m2, i2, e2) = count_inliers(&refined, obs, k, cfg.inlier_thresh_px);
        if i2 < inl {
            break;
        }
        let same = m2 == mask;
        pose = refined;
        (mask, inl, mean) = (m2, i2, e2);
        if same {
            break;
        }
    }
    if inl < cfg.min_inliers {
        return RelocalizationResult::failed("ransac below min_inliers", n);
    }
    RelocalizationResult {
        pose,
        inlier_count: inl,
        inlier_ratio: inl as f64 / n as f64,
        mean_reproj_err_px: mean,
        inliers: mask,
        stats: StageStats::default(),
        status: Status::Ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::Rng;

    fn setup(seed: u64, n: usize, inlier_frac: f64, noise: f64) -> (Pose, Vec<Observation>, CameraIntrinsics) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = CameraIntrinsics::standard_query();
        let gt = Pose::new(Vector3::new(1.0, 0.5, -2.0), UnitQuaternion::from_euler_angles(0.05, 0.3, -0.1));
        let inv = gt.inverse();
        let n_in = (n as f64 * inlier_frac).round() as usize;
        let normal = rand_distr::Normal::new(0.0, noise.max(1e-300)).unwrap();
        let obs = (0..n)
            .map(|i| {
                let pc = Vector3::new(rng.gen_range(-8.0..8.0), rng.gen_range(-4.0..4.0), rng.gen_range(4.0..30.0));
                let mut px = [k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy];
                if i < n_in {
                    if noise > 0.0 {
                        px[0] += rng.sample(normal);
                        px[1] += rng.sample(normal);
                    }
                } else {
                    px = [rng.gen_range(0.0..k.width as f64), rng.gen_range(0.0..k.height as f64)];
                }
                Observation::new(px, inv.transform_point(&pc))
            })
            .collect();
        (gt, obs, k)
    }

    #[test]
    fn exact_data_recovered() {
        let (gt, obs, k) = setup(5, 50, 1.0, 0.0);
        let res = pnp_ransac(&obs, &k, &RansacConfig::default());
        assert!(res.status.is_ok());
        assert_eq!(res.inlier_count, 50);
        assert!((res.pose.translation() - gt.translation()).norm() < 1e-6);
        assert!(res.pose.quaternion().angle_to(gt.quaternion()) < 1e-6);
    }

    #[test]
    fn outliers_rejected_and_deterministic() {
        let (gt, obs, k) = setup(9, 100, 0.6, 1.0);
        let cfg = RansacConfig::default();
        let res = pnp_ransac(&obs, &k, &cfg);
        assert!(res.status.is_ok());
        assert!((res.pose.translation() - gt.translation()).norm() < 0.05);
        assert!(res.pose.quaternion().angle_to(gt.quaternion()).to_degrees() < 0.2);
        assert_eq!(pnp_ransac(&obs, &k, &cfg), res);
        let (recount, n, _) = count_inliers(&res.pose, &obs, &k, cfg.inlier_thresh_px);
        assert_eq!((recount, n), (res.inliers.clone(), res.inlier_count));
    }

    #[test]
    fn too_few_and_garbage() {
        let (_, obs, k) = setup(1, 3, 1.0, 0.0);
        let res = pnp_ransac(&obs, &k, &RansacConfig::default());
        assert_eq!(res.status, Status::Failed("insufficient matches".into()));
        let (_, obs, k) = setup(2, 40, 0.0, 0.0);
        assert!(!pnp_ransac(&obs, &k, &RansacConfig::default()).status.is_ok());
    }
}
