//! Synthetic corridor scenes, trajectories and query images with exact
//! ground truth.
//!
//! World frame: x along the corridor, y to the left, z up. Cameras use the
//! sensor convention x right, y down, z forward.

use std::path::Path;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{
    load_image, load_intrinsics, load_point_cloud, load_trajectory, save_intrinsics, save_pgm, save_point_cloud,
    save_trajectory, CameraIntrinsics, GrayImage, IoError, PointCloud, Pose, Trajectory,
};
use crate::io::ply::PlyFormat;
use crate::projection::equalize_map_intensity;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scene needs at least one wall")]
    NoWalls,
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("empty render")]
    EmptyRender,
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Checker,
    Blobs,
    Stripes,
    /// Each surface draws one of the other three.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    /// Corridor length, width and maximum wall height in meters.
    pub extent: [f64; 3],
    /// Wall segments per corridor side.
    pub wall_count: usize,
    pub points_per_m2: f64,
    pub texture: Texture,
    /// Characteristic texture feature size in meters.
    pub texture_scale: f64,
    /// Standard deviation of the additive intensity noise (texture is in [0, 1]).
    pub intensity_noise_sigma: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            extent: [70.0, 10.0, 8.0],
            wall_count: 12,
            points_per_m2: 400.0,
            texture: Texture::Mixed,
            texture_scale: 0.6,
            intensity_noise_sigma: 0.02,
        }
    }
}

/// Camera height above the ground plane.
pub const EYE_HEIGHT: f64 = 1.5;
/// Raw intensity of a texture value of 1.
const INTENSITY_SCALE: f64 = 100.0;

/// Axis-aligned rectangle `origin + s·du + t·dv`, `s ∈ [0, w]`, `t ∈ [0, h]`.
struct Patch {
    origin: Vector3<f64>,
    du: Vector3<f64>,
    dv: Vector3<f64>,
    w: f64,
    h: f64,
    texture: Texture,
    salt: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(i: i64, j: i64, salt: u64) -> f64 {
    let h = splitmix(salt ^ splitmix((i as u64).wrapping_mul(0x1000_0000_01B3) ^ (j as u64).rotate_left(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, salt: u64) -> f64 {
    let (xi, yi) = (x.floor(), y.floor());
    let (fx, fy) = (x - xi, y - yi);
    let sm = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (sm(fx), sm(fy));
    let (i, j) = (xi as i64, yi as i64);
    let a = lattice(i, j, salt) * (1.0 - sx) + lattice(i + 1, j, salt) * sx;
    let b = lattice(i, j + 1, salt) * (1.0 - sx) + lattice(i + 1, j + 1, salt) * sx;
    a * (1.0 - sy) + b * sy
}

/// Procedural texture value in [0, 1] at surface coordinates `(s, t)`.
fn texture_value(tex: Texture, s: f64, t: f64, scale: f64, salt: u64) -> f64 {
    match tex {
        Texture::Checker => {
            let c = ((s / scale).floor() as i64 + (t / scale).floor() as i64).rem_euclid(2);
            if c == 0 {
                0.2
            } else {
                0.8
            }
        }
        Texture::Blobs => {
            let v = 0.65 * value_noise(s / scale, t / scale, salt) + 0.35 * value_noise(s / (0.45 * scale), t / (0.45 * scale), salt ^ 0xABCD);
            ((v * 5.0).floor().clamp(0.0, 4.0)) / 4.0
        }
        Texture::Stripes => {
            // bands of random width and level along s
            let band = (s / (0.5 * scale)).floor() as i64;
            let level = lattice(band, 0, salt);
            let fine = value_noise(s / scale, t / (2.0 * scale), salt ^ 0x5555);
            ((0.7 * level + 0.3 * fine) * 4.0).floor().clamp(0.0, 3.0) / 3.0
        }
        Texture::Mixed => unreachable!("resolved per patch"),
    }
}

fn corridor_patches(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Patch> {
    let [len, width, max_h] = cfg.extent;
    let pick = |rng: &mut ChaCha8Rng| match cfg.texture {
        Texture::Mixed => [Texture::Checker, Texture::Blobs, Texture::Stripes, Texture::Blobs][rng.gen_range(0..4)],
        t => t,
    };
    let mut patches = Vec::new();
    let (x0, x1) = (-10.0, len + 10.0);
    let half = width / 2.0;
    for side in [1.0f64, -1.0] {
        // segment boundaries along x
        let mut cuts: Vec<f64> = (1..cfg.wall_count).map(|_| rng.gen_range(x0..x1)).collect();
        cuts.sort_by(f64::total_cmp);
        let mut edges = vec![x0];
        edges.extend(cuts);
        edges.push(x1);
        let mut prev: Option<(f64, f64)> = None;
        for seg in edges.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let offset = half * rng.gen_range(0.6..1.0) + rng.gen_range(0.0..2.5);
            let height = rng.gen_range((0.35 * max_h).max(2.5)..max_h.max(2.6));
            let y = side * offset;
            // surface runs along +x; its normal faces the corridor axis
            patches.push(Patch {
                origin: Vector3::new(a, y, 0.0),
                du: Vector3::new(1.0, 0.0, 0.0),
                dv: Vector3::new(0.0, 0.0, 1.0),
                w: b - a,
                h: height,
                texture: pick(rng),
                salt: rng.gen(),
            });
            // step face joining the previous segment
            if let Some((py, ph)) = prev {
                let (lo, hi) = (py.abs().min(offset), py.abs().max(offset));
                patches.push(Patch {
                    origin: Vector3::new(a, side * lo, 0.0),
                    du: Vector3::new(0.0, side, 0.0),
                    dv: Vector3::new(0.0, 0.0, 1.0),
                    w: hi - lo,
                    h: ph.min(height),
                    texture: pick(rng),
                    salt: rng.gen(),
                });
            }
            prev = Some((y, height));
        }
    }
    // end walls
    for x in [x0, x1] {
        patches.push(Patch {
            origin: Vector3::new(x, -width, 0.0),
            du: Vector3::new(0.0, 1.0, 0.0),
            dv: Vector3::new(0.0, 0.0, 1.0),
            w: 2.0 * width,
            h: max_h,
            texture: pick(rng),
            salt: rng.gen(),
        });
    }
    // a few free-standing pillars inside the corridor margins
    let pillars = (len / 12.0).ceil() as usize;
    for _ in 0..pillars {
        let px = rng.gen_range(0.0..len);
        let py = rng.gen_range(0.45..0.55) * half * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let s = 0.6;
        let h = rng.gen_range(2.5..4.0);
        let corners = [(px, py), (px + s, py), (px + s, py + s), (px, py + s)];
        for k in 0..4 {
            let (a, b) = (corners[k], corners[(k + 1) % 4]);
            let d = Vector3::new(b.0 - a.0, b.1 - a.1, 0.0);
            patches.push(Patch {
                origin: Vector3::new(a.0, a.1, 0.0),
                du: d / s,
                dv: Vector3::new(0.0, 0.0, 1.0),
                w: s,
                h,
                texture: pick(rng),
                salt: rng.gen(),
            });
        }
    }
    // ground
    patches.push(Patch {
        origin: Vector3::new(x0, -half - 2.5, 0.0),
        du: Vector3::new(1.0, 0.0, 0.0),
        dv: Vector3::new(0.0, 1.0, 0.0),
        w: x1 - x0,
        h: width + 5.0,
        texture: Texture::Blobs,
        salt: rng.gen(),
    });
    patches
}

/// Deterministic stratified samples on a `w × h` rectangle:
/// `round(w √d) · round(h √d)` points, one jittered sample per cell.
pub fn stratified_samples(w: f64, h: f64, density: f64, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let step = density.sqrt();
    let (nu, nv) = ((w * step).round() as usize, (h * step).round() as usize);
    let mut out = Vec::with_capacity(nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            let s = (i as f64 + rng.gen_range(0.1..0.9)) * w / nu as f64;
            let t = (j as f64 + rng.gen_range(0.1..0.9)) * h / nv as f64;
            out.push((s, t));
        }
    }
    out
}

/// Samples a textured corridor scene; deterministic in `cfg.seed`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<PointCloud, HarnessError> {
    if cfg.wall_count == 0 {
        return Err(HarnessError::NoWalls);
    }
    if !(cfg.points_per_m2 > 0.0) || cfg.extent.iter().any(|&e| !(e > 0.0)) || !(cfg.texture_scale > 0.0) {
        return Err(HarnessError::InvalidConfig("density, extent and texture scale must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let patches = corridor_patches(cfg, &mut rng);
    let noise = Normal::new(0.0, cfg.intensity_noise_sigma.max(0.0)).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let mut samples = Vec::new();
    for p in &patches {
        for (s, t) in stratified_samples(p.w, p.h, cfg.points_per_m2, &mut rng) {
            let x = p.origin + p.du * s + p.dv * t;
            let mut v = texture_value(p.texture, s, t, cfg.texture_scale, p.salt);
            if cfg.intensity_noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            samples.push(([x.x as f32, x.y as f32, x.z as f32], (v.max(0.0) * INTENSITY_SCALE) as f32));
        }
    }
    Ok(PointCloud::from_samples(samples)?)
}

/// Sensor-to-world pose at `position` looking along heading `yaw` (radians
/// about world z, zero = +x).
pub fn camera_pose(position: Vector3<f64>, yaw: f64) -> Pose {
    let fwd = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let down = Vector3::new(0.0, 0.0, -1.0);
    let right = down.cross(&fwd);
    let r = Matrix3::from_columns(&[right, down, fwd]);
    Pose::from_matrix(&r, position).expect("orthonormal by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathShape {
    /// Along the corridor axis from `start_x`.
    Straight { start_x: f64 },
    /// Circle through the scene center; start and end coincide up to spacing.
    Loop { center: [f64; 2] },
}

/// `n` poses at eye height, `spacing` meters apart, facing along the path.
pub fn generate_trajectory(n: usize, spacing: f64, shape: PathShape) -> Trajectory {
    let poses = (0..n).map(|i| match shape {
        PathShape::Straight { start_x } => camera_pose(Vector3::new(start_x + spacing * i as f64, 0.0, EYE_HEIGHT), 0.0),
        PathShape::Loop { center } => {
            let r = (n as f64 * spacing) / (2.0 * std::f64::consts::PI);
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let p = Vector3::new(center[0] + r * a.cos(), center[1] + r * a.sin(), EYE_HEIGHT);
            camera_pose(p, a + std::f64::consts::FRAC_PI_2)
        }
    });
    Trajectory::from_poses(poses)
}

/// Query rendering options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryRenderConfig {
    pub trans_sigma_m: f64,
    pub rot_sigma_deg: f64,
    /// Jitter magnitudes are clamped to this many sigmas.
    pub jitter_clamp_sigmas: f64,
    pub gain: f64,
    pub bias: f64,
    /// Splat half-width is `min(splat_max, round(splat_gain / depth))`.
    pub splat_gain: f64,
    pub splat_max: usize,
    pub z_near: f64,
}

impl Default for QueryRenderConfig {
    fn default() -> Self {
        QueryRenderConfig {
            trans_sigma_m: 0.2,
            rot_sigma_deg: 2.0,
            jitter_clamp_sigmas: 2.5,
            gain: 1.0,
            bias: 0.0,
            splat_gain: 12.0,
            splat_max: 4,
            z_near: 0.3,
        }
    }
}

/// Perturbs a sensor-to-world pose by a seeded translation and rotation
/// whose magnitudes are Gaussian, clamped to `jitter_clamp_sigmas`.
pub fn jitter_pose(pose: &Pose, cfg: &QueryRenderConfig, rng: &mut impl Rng) -> Pose {
    let dir = |rng: &mut dyn rand::RngCore| -> Vector3<f64> {
        loop {
            let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    };
    let mag = |rng: &mut dyn rand::RngCore, sigma: f64| -> f64 {
        if sigma <= 0.0 {
            return 0.0;
        }
        let g: f64 = Normal::new(0.0, sigma).unwrap().sample(rng);
        g.abs().min(cfg.jitter_clamp_sigmas * sigma)
    };
    let dt = dir(rng) * mag(rng, cfg.trans_sigma_m);
    let dr = dir(rng) * mag(rng, cfg.rot_sigma_deg.to_radians());
    let rot = UnitQuaternion::from_scaled_axis(dr) * pose.quaternion();
    Pose::new(pose.translation() + dt, rot)
}

/// Pinhole z-buffered splat render of the equalized cloud from a
/// sensor-to-world `pose`, then `v' = gain · v + bias`. Empty pixels are 0.
pub fn render_view(cloud: &PointCloud, pose: &Pose, k: &CameraIntrinsics, cfg: &QueryRenderConfig) -> Result<GrayImage, HarnessError> {
    let (w, h) = (k.width, k.height);
    let mut depth = vec![f32::INFINITY; w * h];
    let mut img = GrayImage::new(w, h);
    let to_cam = pose.inverse();
    let mut any = false;
    for p in &cloud.points {
        let Some(v) = p.intensity_eq else { continue };
        let pc = to_cam.transform_point(&p.position());
        if pc.z < cfg.z_near {
            continue;
        }
        let (u, vv) = (k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
        let (ui, vi) = (u.round(), vv.round());
        if ui < -(cfg.splat_max as f64) || vi < -(cfg.splat_max as f64) || ui >= (w + cfg.splat_max) as f64 || vi >= (h + cfg.splat_max) as f64 {
            continue;
        }
        let d = pc.norm() as f32;
        let half = ((cfg.splat_gain / d as f64).round() as i64).clamp(0, cfg.splat_max as i64);
        let (ui, vi) = (ui as i64, vi as i64);
        for y in (vi - half).max(0)..=(vi + half).min(h as i64 - 1) {
            for x in (ui - half).max(0)..=(ui + half).min(w as i64 - 1) {
                let i = y as usize * w + x as usize;
                if d < depth[i] {
                    depth[i] = d;
                    img.pixels_mut()[i] = v;
                    any = true;
                }
            }
        }
    }
    if !any {
        return Err(HarnessError::EmptyRender);
    }
    for (px, d) in img.pixels_mut().iter_mut().zip(&depth) {
        if d.is_finite() {
            *px = (cfg.gain * *px as f64 + cfg.bias).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(img)
}

/// Renders a query at a jittered version of `pose`; returns the image and
/// the exact sensor-to-world pose it was rendered from.
pub fn render_query(
    cloud: &PointCloud,
    pose: &Pose,
    k: &CameraIntrinsics,
    cfg: &QueryRenderConfig,
    rng: &mut impl Rng,
) -> Result<(GrayImage, Pose), HarnessError> {
    let gt = jitter_pose(pose, cfg, rng);
    Ok((render_view(cloud, &gt, k, cfg)?, gt))
}

/// Everything needed for an end-to-end run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scene: SceneConfig,
    pub n_poses: usize,
    pub spacing_m: f64,
    pub n_queries: usize,
    /// Along-track offset of query anchors from the map poses.
    pub query_offset_m: f64,
    pub query: QueryRenderConfig,
    pub intrinsics: CameraIntrinsics,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scene: SceneConfig::default(),
            n_poses: 50,
            spacing_m: 1.0,
            n_queries: 50,
            query_offset_m: 0.5,
            query: QueryRenderConfig::default(),
            intrinsics: CameraIntrinsics::standard_query(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Raw intensities, as a LiDAR map would be delivered.
    pub cloud: PointCloud,
    pub trajectory: Trajectory,
    pub queries: Vec<GrayImage>,
    /// Query ground truth, sensor-to-world, indexed by query number.
    pub gt: Trajectory,
    pub intrinsics: CameraIntrinsics,
}

/// Scene, straight map trajectory starting 5 m into the corridor, and
/// queries spread evenly over the trajectory span.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset, HarnessError> {
    let cloud = generate_scene(&cfg.scene)?;
    let start_x = 5.0;
    let trajectory = generate_trajectory(cfg.n_poses, cfg.spacing_m, PathShape::Straight { start_x });
    let eq = equalize_map_intensity(&cloud);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.scene.seed ^ 0x51_7E57);
    let span = cfg.spacing_m * cfg.n_poses.saturating_sub(1) as f64;
    let mut queries = Vec::with_capacity(cfg.n_queries);
    let mut gt = Vec::with_capacity(cfg.n_queries);
    for i in 0..cfg.n_queries {
        let along = if cfg.n_queries > 1 {
            (span * i as f64 / (cfg.n_queries - 1) as f64 + cfg.query_offset_m).min(span)
        } else {
            cfg.query_offset_m.min(span)
        };
        let anchor = camera_pose(Vector3::new(start_x + along, 0.0, EYE_HEIGHT), 0.0);
        let (img, pose) = render_query(&eq, &anchor, &cfg.intrinsics, &cfg.query, &mut rng)?;
        queries.push(img);
        gt.push(pose);
    }
    Ok(Dataset {
        cloud,
        trajectory,
        queries,
        gt: Trajectory::from_poses(gt),
        intrinsics: cfg.intrinsics,
    })
}

pub fn query_file_name(i: usize) -> String {
    format!("{i:04}.pgm")
}

/// Writes `map.ply`, `traj.txt`, `queries/NNNN.pgm`, `gt.txt` and
/// `intrinsics.cfg`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(), HarnessError> {
    let qdir = dir.join("queries");
    std::fs::create_dir_all(&qdir).map_err(|source| IoError::File { path: qdir.clone(), source })?;
    save_point_cloud(&dir.join("map.ply"), &ds.cloud, PlyFormat::BinaryLittleEndian)?;
    save_trajectory(&dir.join("traj.txt"), &ds.trajectory)?;
    save_trajectory(&dir.join("gt.txt"), &ds.gt)?;
    save_intrinsics(&dir.join("intrinsics.cfg"), &ds.intrinsics)?;
    for (i, q) in ds.queries.iter().enumerate() {
        save_pgm(&qdir.join(query_file_name(i)), q)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, HarnessError> {
    let cloud = load_point_cloud(&dir.join("map.ply"))?;
    let trajectory = load_trajectory(&dir.join("traj.txt"))?;
    let gt = load_trajectory(&dir.join("gt.txt"))?;
    let intrinsics = load_intrinsics(&dir.join("intrinsics.cfg"))?;
    let mut queries = Vec::with_capacity(gt.len());
    for &(i, _) in gt.entries() {
        queries.push(load_image(&dir.join("queries").join(query_file_name(i as usize)))?);
    }
    Ok(Dataset {
        cloud,
        trajectory,
        queries,
        gt,
        intrinsics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scene() -> SceneConfig {
        SceneConfig {
            extent: [12.0, 8.0, 4.0],
            wall_count: 3,
            points_per_m2: 25.0,
            ..Default::default()
        }
    }

    #[test]
    fn scene_is_deterministic() {
        let cfg = SceneConfig { seed: 7, ..tiny_scene() };
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        assert_ne!(generate_scene(&cfg).unwrap(), generate_scene(&tiny_scene()).unwrap());
        assert!(matches!(generate_scene(&SceneConfig { wall_count: 0, ..cfg }), Err(HarnessError::NoWalls)));
    }

    #[test]
    fn stratified_count_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts = stratified_samples(10.0, 3.0, 100.0, &mut rng);
        assert_eq!(pts.len(), 3000);
        assert!(pts.iter().all(|&(s, t)| (0.0..=10.0).contains(&s) && (0.0..=3.0).contains(&t)));
    }

    #[test]
    fn checker_is_bimodal() {
        let mut hist = [0usize; 10];
        for i in 0..100 {
            for j in 0..100 {
                let v = texture_value(Texture::Checker, i as f64 * 0.037, j as f64 * 0.041, 0.5, 1);
                hist[((v * 10.0) as usize).min(9)] += 1;
            }
        }
        let occupied: Vec<usize> = (0..10).filter(|&b| hist[b] > 0).collect();
        assert_eq!(occupied, vec![2, 8]);
        assert!(hist[2] > 3000 && hist[8] > 3000);
    }

    #[test]
    fn trajectories() {
        let t = generate_trajectory(10, 1.0, PathShape::Straight { start_x: 0.0 });
        let poses: Vec<&Pose> = t.poses().collect();
        for w in poses.windows(2) {
            assert!(((w[1].translation() - w[0].translation()).norm() - 1.0).abs() < 1e-12);
        }
        let l = generate_trajectory(40, 1.0, PathShape::Loop { center: [0.0, 0.0] });
        let lp: Vec<&Pose> = l.poses().collect();
        assert!((lp[0].translation() - lp[39].translation()).norm() <= 1.0);
        for p in lp {
            let r = p.rotation();
            assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
        // forward axis of a zero-yaw camera is world +x
        let r = camera_pose(Vector3::zeros(), 0.0).rotation();
        assert!((r.column(2) - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn jitter_is_bounded() {
        let cfg = QueryRenderConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = camera_pose(Vector3::new(1.0, 2.0, 1.5), 0.3);
        for _ in 0..500 {
            let q = jitter_pose(&p, &cfg, &mut rng);
            assert!((q.translation() - p.translation()).norm() <= 0.5 + 1e-12);
            assert!(q.quaternion().angle_to(p.quaternion()).to_degrees() <= 5.0 + 1e-9);
        }
    }

    #[test]
    fn render_and_empty_view() {
        let cloud = equalize_map_intensity(&generate_scene(&tiny_scene()).unwrap());
        let k = CameraIntrinsics::new(100.0, 100.0, 80.0, 40.0, 160, 80).unwrap();
        let pose = camera_pose(Vector3::new(2.0, 0.0, EYE_HEIGHT), 0.0);
        let img = render_view(&cloud, &pose, &k, &QueryRenderConfig::default()).unwrap();
        let filled = img.pixels().iter().filter(|&&v| v > 0).count();
        assert!(filled > img.pixels().len() / 2, "{filled}");
        let sky = Pose::from_matrix(&Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0), Vector3::new(2.0, 0.0, 50.0)).unwrap();
        assert!(matches!(render_view(&cloud, &sky, &k, &QueryRenderConfig::default()), Err(HarnessError::EmptyRender)));
    }

    #[test]
    fn dataset_roundtrip() {
        let cfg = SynthConfig {
            scene: tiny_scene(),
            n_poses: 3,
            n_queries: 2,
            intrinsics: CameraIntrinsics::new(60.0, 60.0, 40.0, 20.0, 80, 40).unwrap(),
            ..Default::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }
}
