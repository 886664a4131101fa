use nalgebra::Vector3;

use super::hec::{hec_forward_unchecked, hec_inverse_unchecked};
use super::{CubeFace, ProjectionConfig, ProjectionError};
use crate::io::{GrayImage, PointCloud, PointId, Pose};

/// Empty entry of the point-id buffer.
pub const NO_POINT: PointId = PointId::MAX;

/// A rendered map panorama: faces tiled left to right in [`CubeFace`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct MapImage {
    pub image_id: u32,
    /// Projecting pose, sensor-to-world.
    pub pose: Pose,
    pub intensity: GrayImage,
    /// Range in meters; `+∞` where nothing was rendered.
    pub depth: Vec<f32>,
    /// Winning point per pixel, [`NO_POINT`] where empty.
    pub point_id: Vec<PointId>,
}

impl MapImage {
    pub fn empty(image_id: u32, pose: Pose, face_size: usize) -> Self {
        let (w, h) = (4 * face_size, face_size);
        MapImage {
            image_id,
            pose,
            intensity: GrayImage::new(w, h),
            depth: vec![f32::INFINITY; w * h],
            point_id: vec![NO_POINT; w * h],
        }
    }

    pub fn width(&self) -> usize {
        self.intensity.width()
    }

    pub fn height(&self) -> usize {
        self.intensity.height()
    }

    pub fn face_size(&self) -> usize {
        self.height()
    }

    pub fn point_at(&self, x: usize, y: usize) -> Option<PointId> {
        let id = self.point_id[y * self.width() + x];
        (id != NO_POINT).then_some(id)
    }

    pub fn depth_at(&self, x: usize, y: usize) -> f32 {
        self.depth[y * self.width() + x]
    }

    /// The S×S intensity patch of one face.
    pub fn face_patch(&self, face: CubeFace) -> GrayImage {
        let s = self.face_size();
        self.intensity.crop(face.index() * s, 0, s, s)
    }

    /// Distinct point ids present in the id buffer, ascending.
    pub fn visible_points(&self) -> Vec<PointId> {
        let mut ids: Vec<PointId> = self.point_id.iter().copied().filter(|&i| i != NO_POINT).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Where a sensor-frame point lands in the panorama.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanoHit {
    pub face: CubeFace,
    /// Face-local pixel.
    pub px: usize,
    pub py: usize,
    /// Range in meters.
    pub depth: f64,
    /// Continuous face-local coordinates, pixel centers at integers.
    pub x: f64,
    pub y: f64,
}

impl PanoHit {
    /// Column in the full panorama.
    pub fn column(&self, face_size: usize) -> usize {
        self.face.index() * face_size + self.px
    }

    /// Continuous panorama column.
    pub fn panorama_x(&self, face_size: usize) -> f64 {
        (self.face.index() * face_size) as f64 + self.x
    }
}

/// Projects a point given in the projecting pose's frame. `None` when the ray
/// belongs to the top or ground face, or when the point is nearer than `z_near`.
pub fn project_point_to_pano(p: &Vector3<f64>, cfg: &ProjectionConfig) -> Option<PanoHit> {
    // forward component along each face axis, in enum order
    let fwd = [p.z, -p.x, -p.z, p.x];
    let mut best = 0;
    for i in 1..4 {
        if fwd[i] > fwd[best] {
            best = i;
        }
    }
    let along = fwd[best];
    if !(along > 0.0) || p.y.abs() > along {
        return None;
    }
    let depth = p.norm();
    if depth < cfg.z_near {
        return None;
    }
    let face = CubeFace::ALL[best];
    let q = face.to_face(p);
    let (u, v) = (q.x / q.z, q.y / q.z);
    let (u, v) = if cfg.use_hec { hec_forward_unchecked(u, v) } else { (u, v) };
    let s = cfg.face_size as f64;
    let fx = (u + 1.0) * 0.5 * s;
    let fy = (v + 1.0) * 0.5 * s;
    let last = cfg.face_size - 1;
    Some(PanoHit {
        face,
        px: (fx.floor().max(0.0) as usize).min(last),
        py: (fy.floor().max(0.0) as usize).min(last),
        depth,
        x: fx - 0.5,
        y: fy - 0.5,
    })
}

/// Unit ray (sensor frame) through the center of panorama pixel `(col, row)`.
pub fn pixel_ray(col: usize, row: usize, cfg: &ProjectionConfig) -> Option<Vector3<f64>> {
    let s = cfg.face_size;
    let face = CubeFace::from_index(col / s)?;
    if row >= s {
        return None;
    }
    let dir_face = face_ray(face, (col % s) as f64, row as f64, cfg)?;
    Some(dir_face)
}

/// Unit ray (sensor frame) through continuous face coordinates `(x, y)`,
/// pixel centers at integers. `None` outside the face.
pub fn face_ray(face: CubeFace, x: f64, y: f64, cfg: &ProjectionConfig) -> Option<Vector3<f64>> {
    let s = cfg.face_size as f64;
    let (uh, vh) = ((x + 0.5) / s * 2.0 - 1.0, (y + 0.5) / s * 2.0 - 1.0);
    if !(uh.abs() <= 1.0 && vh.abs() <= 1.0) {
        return None;
    }
    let (u, v) = if cfg.use_hec { hec_inverse_unchecked(uh, vh) } else { (uh, vh) };
    Some((face.rotation().transpose() * Vector3::new(u, v, 1.0)).normalize())
}

#[inline]
pub fn splat_half_width(depth: f64, cfg: &ProjectionConfig) -> usize {
    let r = (cfg.splat_gain / depth).round();
    (r.min(cfg.splat_max as f64)).max(0.0) as usize
}

/// Z-buffered splat rendering of a cropped local map into a panorama.
///
/// Points are taken into the pose frame; each covers a square of
/// [`splat_half_width`] pixels clipped to its own face. Ties in depth keep
/// the earlier point.
pub fn render_panorama(
    local: &PointCloud,
    pose: &Pose,
    cfg: &ProjectionConfig,
    image_id: u32,
) -> Result<MapImage, ProjectionError> {
    cfg.validate()?;
    let s = cfg.face_size;
    let mut img = MapImage::empty(image_id, *pose, s);
    let width = 4 * s;
    let world_to_sensor = pose.inverse();
    let (inten, depth_buf, ids) = (img.intensity.pixels_mut(), &mut img.depth, &mut img.point_id);
    for pt in &local.points {
        let value = pt.intensity_eq.ok_or(ProjectionError::NotEqualized(pt.id))?;
        let p = world_to_sensor.transform_point(&pt.position());
        let Some(hit) = project_point_to_pano(&p, cfg) else {
            continue;
        };
        let half = splat_half_width(hit.depth, cfg);
        let d = hit.depth as f32;
        let x0 = hit.px.saturating_sub(half);
        let x1 = (hit.px + half).min(s - 1);
        let y0 = hit.py.saturating_sub(half);
        let y1 = (hit.py + half).min(s - 1);
        let col0 = hit.face.index() * s;
        for y in y0..=y1 {
            let row = y * width + col0;
            for x in x0..=x1 {
                let k = row + x;
                if d < depth_buf[k] {
                    depth_buf[k] = d;
                    ids[k] = pt.id;
                    inten[k] = value;
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::MapPoint;

    fn cfg(s: usize) -> ProjectionConfig {
        ProjectionConfig {
            face_size: s,
            ..Default::default()
        }
    }

    fn cloud(pts: &[([f32; 3], u8)]) -> PointCloud {
        PointCloud {
            points: pts
                .iter()
                .enumerate()
                .map(|(i, &(xyz, v))| MapPoint {
                    id: i as PointId,
                    xyz,
                    intensity_raw: v as f32,
                    intensity_eq: Some(v),
                })
                .collect(),
        }
    }

    #[test]
    fn straight_ahead_hits_front_center() {
        let c = cfg(480);
        let hit = project_point_to_pano(&Vector3::new(0.0, 0.0, 10.0), &c).unwrap();
        assert_eq!(hit.face, CubeFace::Front);
        assert_eq!((hit.px, hit.py), (240, 240));
        assert_eq!(hit.depth, 10.0);
        assert_eq!((hit.x, hit.y), (239.5, 239.5));
    }

    #[test]
    fn vertical_rays_discarded() {
        let c = cfg(480);
        assert!(project_point_to_pano(&Vector3::new(0.0, -10.0, 0.0), &c).is_none());
        assert!(project_point_to_pano(&Vector3::new(0.1, 5.0, 0.2), &c).is_none());
        assert!(project_point_to_pano(&Vector3::new(0.0, 0.0, 0.1), &c).is_none());
    }

    #[test]
    fn seam_goes_to_lower_enum_face() {
        let c = cfg(480);
        // 45° between Front (+z) and Right (+x): tie → Front, last column.
        let hit = project_point_to_pano(&Vector3::new(5.0, 0.0, 5.0), &c).unwrap();
        assert_eq!((hit.face, hit.px), (CubeFace::Front, 479));
        // 45° between Front and Left (−x): tie → Front, first column.
        let hit = project_point_to_pano(&Vector3::new(-5.0, 0.0, 5.0), &c).unwrap();
        assert_eq!((hit.face, hit.px), (CubeFace::Front, 0));
        // just past the seam lands on Right's first column
        let hit = project_point_to_pano(&Vector3::new(5.0, 0.0, 4.999), &c).unwrap();
        assert_eq!((hit.face, hit.px), (CubeFace::Right, 0));
        // Back/Right seam: Back has the lower order
        let hit = project_point_to_pano(&Vector3::new(5.0, 0.0, -5.0), &c).unwrap();
        assert_eq!(hit.face, CubeFace::Back);
    }

    #[test]
    fn each_face_axis() {
        let c = cfg(100);
        let cases = [
            (Vector3::new(0.0, 0.0, 3.0), CubeFace::Front),
            (Vector3::new(-3.0, 0.0, 0.0), CubeFace::Left),
            (Vector3::new(0.0, 0.0, -3.0), CubeFace::Back),
            (Vector3::new(3.0, 0.0, 0.0), CubeFace::Right),
        ];
        for (p, face) in cases {
            let hit = project_point_to_pano(&p, &c).unwrap();
            assert_eq!((hit.face, hit.px, hit.py), (face, 50, 50));
        }
    }

    #[test]
    fn pixel_ray_inverts_projection() {
        for use_hec in [true, false] {
            let c = ProjectionConfig { face_size: 64, use_hec, ..Default::default() };
            for col in (0..256).step_by(7) {
                for row in (0..64).step_by(5) {
                    let ray = pixel_ray(col, row, &c).unwrap();
                    let hit = project_point_to_pano(&(ray * 7.0), &c).unwrap();
                    assert_eq!((hit.column(64), hit.py), (col, row), "hec={use_hec}");
                }
            }
        }
    }

    #[test]
    fn single_point_splat() {
        let c = ProjectionConfig { face_size: 480, splat_gain: 10.0, ..Default::default() };
        let img = render_panorama(&cloud(&[([0.0, 0.0, 10.0], 77)]), &Pose::identity(), &c, 3).unwrap();
        assert_eq!(img.image_id, 3);
        let mut hits = 0;
        for y in 0..img.height() {
            for x in 0..img.width() {
                if let Some(id) = img.point_at(x, y) {
                    hits += 1;
                    assert!((239..=241).contains(&x) && (239..=241).contains(&y));
                    assert_eq!(id, 0);
                    assert_eq!(img.intensity.get(x, y), 77);
                    assert_eq!(img.depth_at(x, y), 10.0);
                } else {
                    assert_eq!(img.depth_at(x, y), f32::INFINITY);
                    assert_eq!(img.intensity.get(x, y), 0);
                }
            }
        }
        assert_eq!(hits, 9);
    }

    #[test]
    fn nearer_point_wins() {
        let c = cfg(64);
        let pts = cloud(&[([0.0, 0.0, 10.0], 10), ([0.0, 0.0, 5.0], 200)]);
        let img = render_panorama(&pts, &Pose::identity(), &c, 0).unwrap();
        assert_eq!(img.point_at(32, 32), Some(1));
        assert_eq!(img.intensity.get(32, 32), 200);
        assert_eq!(img.depth_at(32, 32), 5.0);
    }

    #[test]
    fn empty_cloud_renders_empty() {
        let img = render_panorama(&PointCloud::default(), &Pose::identity(), &cfg(16), 0).unwrap();
        assert!(img.point_id.iter().all(|&i| i == NO_POINT));
        assert_eq!((img.width(), img.height()), (64, 16));
    }

    #[test]
    fn splat_clamps_at_face_edge() {
        let c = ProjectionConfig { face_size: 32, splat_gain: 10.0, ..Default::default() };
        // Just inside Front's right edge: the splat must not leak into Left's tile.
        let p = Vector3::new(0.999, 0.0, 1.0) * 2.0;
        let pts = cloud(&[([p.x as f32, p.y as f32, p.z as f32], 9)]);
        let img = render_panorama(&pts, &Pose::identity(), &c, 0).unwrap();
        for y in 0..32 {
            assert_eq!(img.point_at(32, y), None);
        }
        assert!(img.point_at(31, 16).is_some());
    }

    #[test]
    fn pose_transform_applied() {
        let c = cfg(64);
        // pose at (5, 0, 0) looking along +z; a world point at (5, 0, 8) is straight ahead
        let pose = Pose::from_translation(Vector3::new(5.0, 0.0, 0.0));
        let img = render_panorama(&cloud(&[([5.0, 0.0, 8.0], 1)]), &pose, &c, 0).unwrap();
        assert_eq!(img.point_at(32, 32), Some(0));
    }

    #[test]
    fn missing_equalization_is_an_error() {
        let mut pts = cloud(&[([0.0, 0.0, 5.0], 1)]);
        pts.points[0].intensity_eq = None;
        assert!(render_panorama(&pts, &Pose::identity(), &cfg(8), 0).is_err());
    }
}
