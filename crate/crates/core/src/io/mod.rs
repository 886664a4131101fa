//! Loading and saving of point clouds, trajectories, intrinsics and images,
//! plus trajectory sampling and local-map cropping.

mod camera;
mod cloud;
mod image;
pub mod ply;
mod trajectory;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use camera::{load_intrinsics, save_intrinsics, CameraIntrinsics};
pub use cloud::{crop_local_map, load_point_cloud, save_point_cloud, MapPoint, PointCloud, PointId};
pub use image::{load_image, read_pgm, save_pgm, write_pgm, GrayImage};
pub use trajectory::{
    format_pose_line, load_trajectory, parse_trajectory, sample_trajectory, save_trajectory, Pose,
    Trajectory,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("missing intensity property")]
    MissingIntensity,
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}
