//! Camera relocalization inside prior LiDAR maps using intensity textures.
//!
//! The map is rendered offline into four-face panoramas of LiDAR intensity
//! (hybrid equi-angular cube layout) and stored with per-pixel depth and
//! point-id buffers. Online, a grayscale query image is matched coarsely
//! against the panorama patches, candidates are filtered by the proximity
//! of their projecting poses, and the surviving map images feed a two-stage
//! 2D-2D matcher whose matches are lifted to 2D-3D through the point-id
//! buffers. A P3P + RANSAC solver with Huber refinement produces the pose.
//!
//! Module map:
//! - [`io`]: point clouds, poses, trajectories, intrinsics, images.
//! - [`projection`]: panorama rendering, HEC warp, equalization, CLAHE.
//! - [`features`]: global and local descriptors plus matching.
//! - [`mapdb`]: offline database build and persistence.
//! - [`retrieval`]: top-K search, DBSCAN, covisibility clustering.
//! - [`association`]: two-stage 2D-3D association and inlier selection.
//! - [`pose`]: P3P, RANSAC and robust refinement.
//! - [`eval`]: Recall@K, relocalization recall and error statistics.
//! - [`harness`]: synthetic scenes and query rendering with ground truth.
//! - [`pipeline`]: online relocalization wiring all stages.

pub mod association;
pub mod config;
pub mod eval;
pub mod features;
pub mod harness;
pub mod io;
pub mod mapdb;
pub mod pipeline;
pub mod pose;
pub mod projection;
pub mod retrieval;


pub use config::PipelineConfig;
pub use io::{CameraIntrinsics, GrayImage, MapPoint, PointCloud, PointId, Pose, Trajectory};
pub use mapdb::Database;


