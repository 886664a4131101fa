//! Database directory layout:
//!
//! - `manifest.txt`: format version, image count, one `image id tx ty tz qx qy qz qw` line per image, then the config snapshot after a `[config]` marker line
//! - `cloud.ply`: binary PLY with raw and equalized intensity
//! - `img_{id}.pgm`, `img_{id}.depth` (f32), `img_{id}.pid` (i64, −1 = empty)
//! - `global.bin`, `local.bin`: f32 blobs with u64 length headers
//! - `covis.bin`: i64 `(id, count)` pairs for every covisible point
//!
//! All binary data is little-endian.

use std::path::Path;

use super::{Database, MapDbError};
use crate::config::PipelineConfig;
use crate::features::{GlobalDescriptor, Keypoint, LocalFeatureSet};
use crate::io::ply::PlyFormat;
use crate::io::{format_pose_line, load_point_cloud, read_pgm, save_point_cloud, write_pgm, IoError, Pose};
use crate::projection::{MapImage, NO_POINT};

pub const FORMAT_VERSION: u32 = 1;
const CONFIG_MARKER: &str = "[config]";

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), MapDbError> {
    crate::io::write_file(&dir.join(name), bytes).map_err(MapDbError::from)
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>, MapDbError> {
    crate::io::read_file(&dir.join(name)).map_err(MapDbError::from)
}

fn grid_header(out: &mut Vec<u8>, w: usize, h: usize) {
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
}

pub fn save_database(db: &Database, dir: &Path) -> Result<(), MapDbError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut manifest = format!("version {FORMAT_VERSION}\nimages {}\n", db.len());
    for img in &db.images {
        manifest.push_str("image ");
        manifest.push_str(&format_pose_line(img.image_id as i64, &img.pose));
        manifest.push('\n');
    }
    manifest.push_str(CONFIG_MARKER);
    manifest.push('\n');
    manifest.push_str(&db.config.to_toml_string());
    write(dir, "manifest.txt", manifest.as_bytes())?;

    save_point_cloud(&dir.join("cloud.ply"), &db.cloud, PlyFormat::BinaryLittleEndian)?;

    for img in &db.images {
        let (w, h) = (img.width(), img.height());
        write(dir, &format!("img_{}.pgm", img.image_id), &write_pgm(&img.intensity))?;
        let mut depth = Vec::with_capacity(8 + 4 * w * h);
        grid_header(&mut depth, w, h);
        img.depth.iter().for_each(|d| depth.extend_from_slice(&d.to_le_bytes()));
        write(dir, &format!("img_{}.depth", img.image_id), &depth)?;
        let mut pid = Vec::with_capacity(8 + 8 * w * h);
        grid_header(&mut pid, w, h);
        for &p in &img.point_id {
            let v: i64 = if p == NO_POINT { -1 } else { p as i64 };
            pid.extend_from_slice(&v.to_le_bytes());
        }
        write(dir, &format!("img_{}.pid", img.image_id), &pid)?;
    }

    let mut global = Vec::new();
    let dim = db.global_feats.first().map_or(0, |g| g.len());
    global.extend_from_slice(&(db.global_feats.len() as u64).to_le_bytes());
    global.extend_from_slice(&(dim as u64).to_le_bytes());
    for g in &db.global_feats {
        g.values().iter().for_each(|v| global.extend_from_slice(&v.to_le_bytes()));
    }
    write(dir, "global.bin", &global)?;

    let mut local = Vec::new();
    local.extend_from_slice(&(db.local_feats.len() as u64).to_le_bytes());
    for set in &db.local_feats {
        local.extend_from_slice(&(set.len() as u64).to_le_bytes());
        local.extend_from_slice(&(set.dim() as u64).to_le_bytes());
        for k in &set.keypoints {
            for v in [k.x, k.y, k.score] {
                local.extend_from_slice(&v.to_le_bytes());
            }
        }
        set.descriptors().iter().for_each(|v| local.extend_from_slice(&v.to_le_bytes()));
    }
    write(dir, "local.bin", &local)?;

    let mut covis = Vec::new();
    for (id, &c) in db.covis.iter().enumerate().filter(|(_, &c)| c > 0) {
        covis.extend_from_slice(&(id as i64).to_le_bytes());
        covis.extend_from_slice(&(c as i64).to_le_bytes());
    }
    write(dir, "covis.bin", &covis)?;
    Ok(())
}

struct Reader<'a> {
    name: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(name: &'a str, bytes: &'a [u8]) -> Self {
        Reader { name, bytes, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], MapDbError> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| MapDbError::Corrupt(format!("{}: truncated at byte {}", self.name, self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, MapDbError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<usize, MapDbError> {
        let v = u64::from_le_bytes(self.take()?);
        usize::try_from(v).map_err(|_| MapDbError::Corrupt(format!("{}: length {v} too large", self.name)))
    }

    fn i64(&mut self) -> Result<i64, MapDbError> {
        Ok(i64::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32, MapDbError> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, MapDbError> {
        (0..n).map(|_| self.f32()).collect()
    }

    fn finish(&self) -> Result<(), MapDbError> {
        if self.pos != self.bytes.len() {
            return Err(MapDbError::Corrupt(format!("{}: trailing bytes", self.name)));
        }
        Ok(())
    }
}

fn parse_manifest(text: &str) -> Result<(Vec<(u32, Pose)>, PipelineConfig), MapDbError> {
    let corrupt = |m: String| MapDbError::Corrupt(format!("manifest.txt: {m}"));
    let (head, config) = match text.find(&format!("\n{CONFIG_MARKER}\n")) {
        Some(i) => (&text[..i], &text[i + CONFIG_MARKER.len() + 2..]),
        None => return Err(corrupt("missing config section".into())),
    };
    let mut lines = head.lines();
    let version_line = lines.next().unwrap_or_default();
    let found: u32 = version_line
        .strip_prefix("version ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| corrupt(format!("bad version line '{version_line}'")))?;
    if found != FORMAT_VERSION {
        return Err(MapDbError::Version {
            expected: FORMAT_VERSION,
            found,
        });
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("images "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| corrupt("bad image count".into()))?;
    let body: String = lines.map(|l| l.strip_prefix("image ").map(str::to_string).unwrap_or_default() + "\n").collect();
    let traj = crate::io::parse_trajectory(&body)?;
    if traj.len() != count {
        return Err(corrupt(format!("expected {count} images, found {}", traj.len())));
    }
    let mut poses = Vec::with_capacity(count);
    for (i, &(id, pose)) in traj.entries().iter().enumerate() {
        if id != i as i64 {
            return Err(corrupt(format!("image ids must be 0..{count}, found {id}")));
        }
        poses.push((id as u32, pose));
    }
    let cfg = PipelineConfig::from_toml_str(config).map_err(|e| corrupt(e.to_string()))?;
    Ok((poses, cfg))
}

fn read_grid_header(r: &mut Reader, w: usize, h: usize) -> Result<(), MapDbError> {
    let (fw, fh) = (r.u32()? as usize, r.u32()? as usize);
    if (fw, fh) != (w, h) {
        return Err(MapDbError::Corrupt(format!("{}: size {fw}x{fh}, expected {w}x{h}", r.name)));
    }
    Ok(())
}

pub fn load_database(dir: &Path) -> Result<Database, MapDbError> {
    let manifest = read(dir, "manifest.txt")?;
    let text = String::from_utf8(manifest).map_err(|_| MapDbError::Corrupt("manifest.txt: not UTF-8".into()))?;
    let (poses, config) = parse_manifest(&text)?;
    let cloud = load_point_cloud(&dir.join("cloud.ply"))?;

    let mut images = Vec::with_capacity(poses.len());
    for &(id, pose) in &poses {
        let intensity = read_pgm(&read(dir, &format!("img_{id}.pgm"))?)?;
        let (w, h) = (intensity.width(), intensity.height());
        let name = format!("img_{id}.depth");
        let bytes = read(dir, &name)?;
        let mut r = Reader::new(&name, &bytes);
        read_grid_header(&mut r, w, h)?;
        let depth = r.f32s(w * h)?;
        r.finish()?;
        let name = format!("img_{id}.pid");
        let bytes = read(dir, &name)?;
        let mut r = Reader::new(&name, &bytes);
        read_grid_header(&mut r, w, h)?;
        let mut point_id = Vec::with_capacity(w * h);
        for _ in 0..w * h {
            let v = r.i64()?;
            point_id.push(match v {
                -1 => NO_POINT,
                v if v >= 0 && (v as u64) < NO_POINT as u64 => v as u32,
                v => return Err(MapDbError::Corrupt(format!("{name}: bad point id {v}"))),
            });
        }
        r.finish()?;
        images.push(MapImage {
            image_id: id,
            pose,
            intensity,
            depth,
            point_id,
        });
    }

    let bytes = read(dir, "global.bin")?;
    let mut r = Reader::new("global.bin", &bytes);
    let (n, dim) = (r.u64()?, r.u64()?);
    let mut global_feats = Vec::with_capacity(n);
    for _ in 0..n {
        let v = r.f32s(dim)?;
        global_feats.push(GlobalDescriptor::new(v).map_err(|e| MapDbError::Corrupt(format!("global.bin: {e}")))?);
    }
    r.finish()?;

    let bytes = read(dir, "local.bin")?;
    let mut r = Reader::new("local.bin", &bytes);
    let n = r.u64()?;
    let mut local_feats = Vec::with_capacity(n);
    for _ in 0..n {
        let (count, dim) = (r.u64()?, r.u64()?);
        let mut kps = Vec::with_capacity(count);
        for _ in 0..count {
            kps.push(Keypoint {
                x: r.f32()?,
                y: r.f32()?,
                score: r.f32()?,
            });
        }
        let desc = r.f32s(count * dim)?;
        local_feats.push(LocalFeatureSet::new(kps, desc, dim).map_err(|e| MapDbError::Corrupt(e.to_string()))?);
    }
    r.finish()?;

    let bytes = read(dir, "covis.bin")?;
    let mut r = Reader::new("covis.bin", &bytes);
    let mut covis = vec![0u32; cloud.len()];
    while r.pos < bytes.len() {
        let (id, c) = (r.i64()?, r.i64()?);
        let slot = usize::try_from(id)
            .ok()
            .and_then(|i| covis.get_mut(i))
            .ok_or_else(|| MapDbError::Corrupt(format!("covis.bin: unknown point {id}")))?;
        *slot = u32::try_from(c).map_err(|_| MapDbError::Corrupt(format!("covis.bin: bad count {c}")))?;
    }

    let db = Database {
        cloud,
        images,
        global_feats,
        local_feats,
        covis,
        config,
    };
    db.check_invariants()?;
    Ok(db)
}
