//! Offline map database: equalized cloud, panoramas with depth and point-id
//! buffers, per-patch global descriptors, per-image local features and
//! per-point covisibility counts.

mod store;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::features::{global_extractor, local_extractor, FeatureError, GlobalDescriptor, LocalFeatureSet};
use crate::io::{crop_local_map, sample_trajectory, IoError, PointCloud, PointId, Pose, Trajectory};
use crate::projection::{
    clahe, equalize_map_intensity, linear_intensity_scaling, render_panorama, CubeFace, MapImage, ProjectionError,
};

pub use store::{load_database, save_database, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum MapDbError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("trajectory too short")]
    TrajectoryTooShort,
    #[error("database version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },
    #[error("corrupt database: {0}")]
    Corrupt(String),
}

/// Immutable map database. Image `i` has id `i`; its patch descriptors are
/// `global_feats[4 i .. 4 i + 4]` in [`CubeFace`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub cloud: PointCloud,
    pub images: Vec<MapImage>,
    pub global_feats: Vec<GlobalDescriptor>,
    pub local_feats: Vec<LocalFeatureSet>,
    /// Indexed by point id: number of images whose id buffer holds the point.
    pub covis: Vec<u32>,
    pub config: PipelineConfig,
}

impl Database {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Projecting pose of an image, sensor-to-world.
    pub fn pose(&self, image_id: usize) -> &Pose {
        &self.images[image_id].pose
    }

    pub fn patch_descriptor(&self, image_id: usize, face: CubeFace) -> &GlobalDescriptor {
        &self.global_feats[4 * image_id + face.index()]
    }

    pub fn covis_of(&self, id: PointId) -> u32 {
        self.covis.get(id as usize).copied().unwrap_or(0)
    }

    pub fn check_invariants(&self) -> Result<(), MapDbError> {
        let bad = |m: String| Err(MapDbError::Corrupt(m));
        if self.global_feats.len() != 4 * self.images.len() || self.local_feats.len() != self.images.len() {
            return bad("feature counts do not match image count".into());
        }
        if self.covis.len() != self.cloud.len() {
            return bad("covisibility table does not cover the cloud".into());
        }
        for (i, img) in self.images.iter().enumerate() {
            if img.image_id as usize != i {
                return bad(format!("image {i} carries id {}", img.image_id));
            }
            if let Some(&p) = img.point_id.iter().find(|&&p| p != crate::projection::NO_POINT && self.covis_of(p) == 0) {
                return bad(format!("point {p} visible in image {i} has zero covisibility"));
            }
        }
        Ok(())
    }
}

/// Intensity equalization chosen by the ablation switch.
pub fn prepare_cloud(cloud: &PointCloud, cfg: &PipelineConfig) -> PointCloud {
    if cfg.ablation.use_equalization {
        equalize_map_intensity(cloud)
    } else {
        linear_intensity_scaling(cloud)
    }
}

/// Renders, enhances and describes one projecting pose. `cloud` must
/// already carry equalized intensities.
pub fn build_map_image(cloud: &PointCloud, pose: &Pose, image_id: u32, cfg: &PipelineConfig) -> Result<MapImage, MapDbError> {
    let local = crop_local_map(cloud, pose, cfg.mapping.max_dist_m);
    let mut img = render_panorama(&local, pose, &cfg.projection(), image_id)?;
    if cfg.ablation.use_equalization {
        img.intensity = clahe(&img.intensity, cfg.clahe.clip_limit, cfg.clahe.tiles);
    }
    Ok(img)
}

/// Builds the database from a raw cloud and trajectory.
pub fn build_database(cloud: &PointCloud, traj: &Trajectory, cfg: &PipelineConfig) -> Result<Database, MapDbError> {
    if cloud.is_empty() {
        return Err(MapDbError::EmptyCloud);
    }
    cloud.validate()?;
    let poses = sample_trajectory(traj, cfg.mapping.interval_m);
    if poses.is_empty() {
        return Err(MapDbError::TrajectoryTooShort);
    }
    let gx = global_extractor(&cfg.features.global)?;
    let lx = local_extractor(&cfg.features.local)?;
    let eq = prepare_cloud(cloud, cfg);

    let built: Vec<(MapImage, Vec<GlobalDescriptor>, LocalFeatureSet)> = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let img = build_map_image(&eq, pose, i as u32, cfg)?;
            let globals = CubeFace::ALL.iter().map(|&f| gx.extract(&img.face_patch(f))).collect();
            let locals = lx.extract(&img.intensity, cfg.features.max_kp_map);
            log::debug!("map image {i}: {} keypoints", locals.len());
            Ok((img, globals, locals))
        })
        .collect::<Result<_, MapDbError>>()?;

    let mut images = Vec::with_capacity(built.len());
    let mut global_feats = Vec::with_capacity(4 * built.len());
    let mut local_feats = Vec::with_capacity(built.len());
    for (img, g, l) in built {
        images.push(img);
        global_feats.extend(g);
        local_feats.push(l);
    }
    let covis = covisibility_counts(&images, eq.len());
    Ok(Database {
        cloud: eq,
        images,
        global_feats,
        local_feats,
        covis,
        config: cfg.clone(),
    })
}

/// Counts, per point id, the images whose id buffer contains the point.
pub fn covisibility_counts(images: &[MapImage], n_points: usize) -> Vec<u32> {
    let mut covis = vec![0u32; n_points];
    for img in images {
        for id in img.visible_points() {
            if let Some(c) = covis.get_mut(id as usize) {
                *c += 1;
            }
        }
    }
    covis
}

/// Summary of the covisibility distribution: (count, number of points) for
/// every count present, ascending. Zero counts are skipped.
pub fn covis_histogram(covis: &[u32]) -> Vec<(u32, usize)> {
    let mut hist = std::collections::BTreeMap::new();
    for &c in covis.iter().filter(|&&c| c > 0) {
        *hist.entry(c).or_insert(0usize) += 1;
    }
    hist.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{project_point_to_pano, splat_half_width};
    use nalgebra::Vector3;

    fn small_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.projection.face_size = 64;
        cfg.features.max_kp_map = 64;
        cfg
    }

    /// Wall at z = 5 facing the origin, x ∈ [-3, 3], y ∈ [-1, 1].
    fn wall() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..61 {
            for j in 0..21 {
                let (x, y) = (-3.0 + 0.1 * i as f32, -1.0 + 0.1 * j as f32);
                pts.push(([x, y, 5.0], ((i * 7 + j * 3) % 11) as f32));
            }
        }
        PointCloud::from_samples(pts).unwrap()
    }

    #[test]
    fn single_pose_database() {
        let cloud = PointCloud::from_samples((0..100).map(|i| ([(i % 10) as f32 - 4.5, (i / 10) as f32 * 0.1, 6.0], i as f32))).unwrap();
        let traj = Trajectory::from_poses([Pose::identity()]);
        let db = build_database(&cloud, &traj, &small_cfg()).unwrap();
        assert_eq!(db.len(), 1);
        assert_eq!(db.global_feats.len(), 4);
        assert!(db.covis.iter().all(|&c| c <= 1));
        assert!(db.covis.iter().any(|&c| c == 1));
        db.check_invariants().unwrap();
    }

    #[test]
    fn shared_wall_points_have_covis_two() {
        let cloud = wall();
        let traj = Trajectory::from_poses([Pose::identity(), Pose::from_translation(Vector3::new(1.0, 0.0, 0.0))]);
        let cfg = small_cfg();
        let db = build_database(&cloud, &traj, &cfg).unwrap();
        assert_eq!(db.len(), 2);
        // brute force: a point is visible in an image iff it owns some pixel there
        for p in &db.cloud.points {
            let count = db.images.iter().filter(|img| img.point_id.contains(&p.id)).count() as u32;
            assert_eq!(db.covis_of(p.id), count, "point {}", p.id);
        }
        assert!(db.covis.iter().filter(|&&c| c == 2).count() > 100);
        // projection sanity for the brute-force count above
        let proj = cfg.projection();
        let hit = project_point_to_pano(&Vector3::new(0.0, 0.0, 5.0), &proj).unwrap();
        assert!(splat_half_width(hit.depth, &proj) <= 2);
    }

    #[test]
    fn far_points_absent() {
        let mut pts: Vec<([f32; 3], f32)> = (0..50).map(|i| ([i as f32 * 0.1 - 2.5, 0.0, 4.0], 1.0 + i as f32)).collect();
        pts.push(([0.0, 0.0, 80.0], 7.0));
        let cloud = PointCloud::from_samples(pts).unwrap();
        let db = build_database(&cloud, &Trajectory::from_poses([Pose::identity()]), &small_cfg()).unwrap();
        assert_eq!(db.covis_of(50), 0);
        assert!(db.images[0].point_id.iter().all(|&p| p != 50));
    }

    #[test]
    fn errors_and_determinism() {
        let traj = Trajectory::from_poses([Pose::identity()]);
        assert!(matches!(build_database(&PointCloud::default(), &traj, &small_cfg()), Err(MapDbError::EmptyCloud)));
        let empty_traj = Trajectory::from_poses(Vec::<Pose>::new());
        let err = build_database(&wall(), &empty_traj, &small_cfg()).unwrap_err();
        assert_eq!(err.to_string(), "trajectory too short");
        let a = build_database(&wall(), &traj, &small_cfg()).unwrap();
        let b = build_database(&wall(), &traj, &small_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn histogram() {
        assert_eq!(covis_histogram(&[0, 1, 2, 2, 1, 3]), vec![(1, 2), (2, 2), (3, 1)]);
    }
}
