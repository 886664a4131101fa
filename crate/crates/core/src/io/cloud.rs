use std::path::Path;

use nalgebra::Vector3;

use super::ply::{self, PlyFormat};
use super::{IoError, Pose};

/// Global, immutable point identifier. Dense in `[0, N)` for a full map.
pub type PointId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub id: PointId,
    pub xyz: [f32; 3],
    pub intensity_raw: f32,
    /// Equalized intensity, unset until the map has been normalized.
    pub intensity_eq: Option<u8>,
}

impl MapPoint {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.xyz[0] as f64, self.xyz[1] as f64, self.xyz[2] as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<MapPoint>,
}

impl PointCloud {
    /// Builds a map cloud with sequential ids from raw `(xyz, intensity)` samples.
    pub fn from_samples(samples: impl IntoIterator<Item = ([f32; 3], f32)>) -> Result<Self, IoError> {
        let points = samples
            .into_iter()
            .enumerate()
            .map(|(i, (xyz, intensity_raw))| MapPoint {
                id: i as PointId,
                xyz,
                intensity_raw,
                intensity_eq: None,
            })
            .collect();
        let cloud = PointCloud { points };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks finiteness and non-negative intensities, plus the dense id
    /// layout expected of a full (uncropped) map.
    pub fn validate(&self) -> Result<(), IoError> {
        for (i, p) in self.points.iter().enumerate() {
            if p.id as usize != i {
                return Err(IoError::Malformed(format!(
                    "point {i} has id {}; ids must be dense and sequential",
                    p.id
                )));
            }
            if !p.xyz.iter().all(|c| c.is_finite()) {
                return Err(IoError::Malformed(format!("point {i} has non-finite coordinates")));
            }
            if !(p.intensity_raw >= 0.0) {
                return Err(IoError::Malformed(format!(
                    "point {i} has invalid intensity {}",
                    p.intensity_raw
                )));
            }
        }
        Ok(())
    }

    /// Point lookup by global id. Only valid on a full map with dense ids.
    pub fn get(&self, id: PointId) -> Option<&MapPoint> {
        self.points.get(id as usize).filter(|p| p.id == id)
    }
}

/// Points within `max_dist_m` (inclusive) of the pose position. Ids are kept.
pub fn crop_local_map(cloud: &PointCloud, pose: &Pose, max_dist_m: f64) -> PointCloud {
    let center = pose.translation();
    let max_sq = max_dist_m * max_dist_m;
    let points = cloud
        .points
        .iter()
        .filter(|p| (p.position() - center).norm_squared() <= max_sq)
        .copied()
        .collect();
    PointCloud { points }
}

pub fn load_point_cloud(path: &Path) -> Result<PointCloud, IoError> {
    let bytes = super::read_file(path)?;
    ply::parse_cloud(&bytes)
}

pub fn save_point_cloud(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<(), IoError> {
    let bytes = ply::encode_cloud(cloud, format);
    super::write_file(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud_at(xs: &[f32]) -> PointCloud {
        PointCloud::from_samples(xs.iter().map(|&x| ([x, 0.0, 0.0], 1.0))).unwrap()
    }

    #[test]
    fn crop_threshold_is_inclusive_and_keeps_ids() {
        let cloud = cloud_at(&[10.0, 49.9, 50.1, 50.0]);
        let local = crop_local_map(&cloud, &Pose::identity(), 50.0);
        let ids: Vec<_> = local.points.iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![0, 1, 3]);
    }

    #[test]
    fn crop_small_radius_around_cube_centroid_is_empty() {
        let mut samples = Vec::new();
        for i in 0..8 {
            let c = |b: i32| if i & b != 0 { 1.0 } else { 0.0 };
            samples.push(([c(1), c(2), c(4)], 0.5));
        }
        let cloud = PointCloud::from_samples(samples).unwrap();
        let pose = Pose::from_translation(Vector3::new(0.5, 0.5, 0.5));
        assert!(crop_local_map(&cloud, &pose, 0.1).is_empty());
        assert_eq!(crop_local_map(&cloud, &pose, 0.9).len(), 8);
    }

    #[test]
    fn retained_points_keep_original_ids() {
        let cloud = cloud_at(&[100.0, 1.0, 200.0, 2.0]);
        let local = crop_local_map(&cloud, &Pose::identity(), 5.0);
        assert_eq!(local.points[0].id, 1);
        assert_eq!(local.points[1].id, 3);
        assert_eq!(local.points[1].xyz, [2.0, 0.0, 0.0]);
    }

    #[test]
    fn negative_intensity_rejected() {
        assert!(PointCloud::from_samples([([0.0, 0.0, 0.0], -1.0)]).is_err());
        assert!(PointCloud::from_samples([([f32::NAN, 0.0, 0.0], 1.0)]).is_err());
    }
}
