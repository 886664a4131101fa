//! Camera pose from 2D-3D correspondences: P3P inside RANSAC, then Huber
//! refinement. Poses here map world points into the camera frame.

mod p3p;
mod ransac;
mod refine;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::io::{CameraIntrinsics, Pose};

pub use p3p::{p3p_bearings, p3p_solve};
pub use ransac::{count_inliers, pnp_ransac};
pub use refine::{huber, reprojection_jacobian, retract, robust_cost, refine_pose, RefineTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iters: usize,
    pub inlier_thresh_px: f64,
    pub confidence: f64,
    pub min_inliers: usize,
    pub huber_delta_px: f64,
    pub refine_iters: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iters: 2000,
            inlier_thresh_px: 5.0,
            confidence: 0.999,
            min_inliers: 6,
            huber_delta_px: 2.0,
            refine_iters: 20,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.inlier_thresh_px > 0.0) || !(self.huber_delta_px > 0.0) {
            return Err("ransac thresholds must be positive".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(format!("ransac.confidence {} outside (0, 1)", self.confidence));
        }
        if self.max_iters == 0 {
            return Err("ransac.max_iters must be positive".into());
        }
        Ok(())
    }
}

/// A pixel observation of a known 3D point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
}

impl Observation {
    pub fn new(px: [f64; 2], point: Vector3<f64>) -> Self {
        Observation {
            pixel: Vector2::new(px[0], px[1]),
            point,
        }
    }
}

impl From<&crate::association::Correspondence2D3D> for Observation {
    fn from(c: &crate::association::Correspondence2D3D) -> Self {
        Observation::new(c.query_px, c.point_xyz)
    }
}

/// Pixel residual `π(T p) − x`; `None` when the point is not in front.
pub fn reprojection_residual(pose: &Pose, obs: &Observation, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    let pc = pose.transform_point(&obs.point);
    if pc.z <= 1e-12 {
        return None;
    }
    Some(Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy) - obs.pixel)
}

/// Reprojection error in pixels, infinite behind the camera.
pub fn reprojection_error(pose: &Pose, obs: &Observation, k: &CameraIntrinsics) -> f64 {
    reprojection_residual(pose, obs, k).map_or(f64::INFINITY, |r| r.norm())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    Failed(String),
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }
}

/// Counts collected along the online pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageStats {
    pub candidates: usize,
    pub matches: usize,
    pub lifted: usize,
    pub filtered: usize,
    pub rejected_candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelocalizationResult {
    /// World-to-camera.
    pub pose: Pose,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
    pub mean_reproj_err_px: f64,
    pub inliers: Vec<bool>,
    pub stats: StageStats,
    pub status: Status,
}

impl RelocalizationResult {
    pub fn failed(reason: impl Into<String>, n: usize) -> Self {
        RelocalizationResult {
            pose: Pose::identity(),
            inlier_count: 0,
            inlier_ratio: 0.0,
            mean_reproj_err_px: f64::NAN,
            inliers: vec![false; n],
            stats: StageStats::default(),
            status: Status::Failed(reason.into()),
        }
    }

    /// Camera-to-world pose, comparable with trajectories and ground truth.
    pub fn camera_pose(&self) -> Pose {
        self.pose.inverse()
    }
}
