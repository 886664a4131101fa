//! Fine-stage 2D-3D association.
//!
//! Per candidate map image: match local features against the query, cluster
//! the matches jointly in both images, crop the largest cluster's boxes and
//! match again, then lift every 2D-2D match to 2D-3D through the map image's
//! point-id buffer. Correspondences from all candidates are pooled and
//! optionally filtered by covisibility.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::features::{match_features, LocalExtractor, LocalFeatureSet, MatchSet};
use crate::io::{CameraIntrinsics, GrayImage, PointId};
use crate::mapdb::Database;
use crate::projection::{face_ray, CubeFace, MapImage, ProjectionConfig};
use crate::retrieval::dbscan;

/// Correspondences kept by [`covisibility_filter`] before it relaxes.
pub const MIN_FILTERED: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationConfig {
    pub match_cluster_eps: f64,
    pub match_cluster_min_pts: usize,
    pub min_cluster_matches: usize,
    /// Box growth per side as a fraction of the cluster's extent.
    pub crop_margin: f64,
    pub min_box_px: usize,
    pub lift_radius: usize,
    pub min_covis: u32,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            match_cluster_eps: 64.0,
            match_cluster_min_pts: 4,
            min_cluster_matches: 8,
            crop_margin: 0.1,
            min_box_px: 32,
            lift_radius: 2,
            min_covis: 2,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.match_cluster_eps > 0.0) || self.match_cluster_min_pts == 0 || self.min_cluster_matches == 0 {
            return Err("association clustering parameters must be positive".into());
        }
        if !(self.crop_margin >= 0.0 && self.crop_margin < 0.5) {
            return Err(format!("association.crop_margin {} outside [0, 0.5)", self.crop_margin));
        }
        if self.min_box_px == 0 {
            return Err("association.min_box_px must be positive".into());
        }
        Ok(())
    }
}

/// Half-open pixel box `[x_min, x_max) × [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min as f64 && x < self.x_max as f64 && y >= self.y_min as f64 && y < self.y_max as f64
    }

    pub fn crop(&self, img: &GrayImage) -> GrayImage {
        img.crop(self.x_min, self.y_min, self.width(), self.height())
    }

    /// Hull of `pts` grown by `margin` of its extent per side, widened to at
    /// least `min_side`, and kept inside a `w × h` image.
    pub fn around(pts: &[(f64, f64)], margin: f64, min_side: usize, w: usize, h: usize) -> Option<BoundingBox> {
        if pts.is_empty() || w == 0 || h == 0 {
            return None;
        }
        let fold = |f: fn(&(f64, f64)) -> f64| {
            pts.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (x0, x1) = fold(|p| p.0);
        let (y0, y1) = fold(|p| p.1);
        let (x_min, x_max) = span(x0, x1, margin, min_side, w);
        let (y_min, y_max) = span(y0, y1, margin, min_side, h);
        Some(BoundingBox { x_min, y_min, x_max, y_max })
    }
}

fn span(lo: f64, hi: f64, margin: f64, min_side: usize, n: usize) -> (usize, usize) {
    let m = (hi - lo) * margin;
    let mut a = (lo - m).floor() as i64;
    let mut b = (hi + m).ceil() as i64 + 1;
    let want = min_side.min(n) as i64;
    if b - a < want {
        let d = want - (b - a);
        a -= d / 2;
        b += d - d / 2;
    }
    if a < 0 {
        b -= a;
        a = 0;
    }
    if b > n as i64 {
        a -= b - n as i64;
        b = n as i64;
    }
    (a.max(0) as usize, b as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    First,
    Second,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::First => "first",
            Stage::Second => "second",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence2D3D {
    /// Query pixel in the original query resolution.
    pub query_px: [f64; 2],
    pub point_id: PointId,
    pub point_xyz: Vector3<f64>,
    pub covis: u32,
    pub stage: Stage,
    /// Map image the match came from.
    pub image_id: usize,
}

/// How the matching image was derived from the original query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueryWarp {
    /// Uniform resize by a factor.
    Scaled(f64),
    /// Resampled into the front face of a panorama with the given intrinsics
    /// of the original image.
    Face { k: CameraIntrinsics, proj: ProjectionConfig },
}

/// The query as used for local matching.
#[derive(Debug, Clone)]
pub struct QueryView {
    pub image: GrayImage,
    pub feats: LocalFeatureSet,
    pub warp: QueryWarp,
}

impl QueryView {
    /// Maps a pixel of the matching image back to the original query.
    pub fn to_original(&self, x: f64, y: f64) -> [f64; 2] {
        match self.warp {
            QueryWarp::Scaled(s) => [(x + 0.5) / s - 0.5, (y + 0.5) / s - 0.5],
            QueryWarp::Face { k, proj } => match face_ray(CubeFace::Front, x, y, &proj) {
                Some(r) if r.z > 0.0 => [k.fx * r.x / r.z + k.cx, k.fy * r.y / r.z + k.cy],
                _ => [f64::NAN, f64::NAN],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchCluster {
    pub matches: MatchSet,
    pub query_box: BoundingBox,
    pub map_box: BoundingBox,
}

/// Largest DBSCAN cluster of matches in joint (qx, qy, mx, my) space with
/// its boxes, or `None` when it holds fewer than `min_cluster_matches`.
pub fn cluster_matches(
    matches: &MatchSet,
    qfeats: &LocalFeatureSet,
    mfeats: &LocalFeatureSet,
    query_size: (usize, usize),
    map_size: (usize, usize),
    cfg: &AssociationConfig,
) -> Option<MatchCluster> {
    if matches.is_empty() {
        return None;
    }
    let pts: Vec<[f64; 4]> = matches
        .pairs
        .iter()
        .map(|m| {
            let (q, p) = (qfeats.keypoints[m.query_idx], mfeats.keypoints[m.map_idx]);
            [q.x as f64, q.y as f64, p.x as f64, p.y as f64]
        })
        .collect();
    let labels = dbscan(&pts, cfg.match_cluster_eps, cfg.match_cluster_min_pts);
    let n = labels.iter().flatten().map(|&l| l + 1).max().unwrap_or(0);
    let mut sizes = vec![0usize; n];
    labels.iter().flatten().for_each(|&l| sizes[l] += 1);
    let (best, &size) = sizes.iter().enumerate().rev().max_by_key(|(_, &s)| s)?;
    if size < cfg.min_cluster_matches {
        return None;
    }
    let idx: Vec<usize> = (0..pts.len()).filter(|&i| labels[i] == Some(best)).collect();
    let qpts: Vec<(f64, f64)> = idx.iter().map(|&i| (pts[i][0], pts[i][1])).collect();
    let mpts: Vec<(f64, f64)> = idx.iter().map(|&i| (pts[i][2], pts[i][3])).collect();
    Some(MatchCluster {
        matches: MatchSet {
            pairs: idx.iter().map(|&i| matches.pairs[i]).collect(),
        },
        query_box: BoundingBox::around(&qpts, cfg.crop_margin, cfg.min_box_px, query_size.0, query_size.1)?,
        map_box: BoundingBox::around(&mpts, cfg.crop_margin, cfg.min_box_px, map_size.0, map_size.1)?,
    })
}

/// Re-extracts and matches features inside the two boxes. Keypoints are
/// returned in full-image coordinates.
pub fn second_stage_match(
    query: &GrayImage,
    map: &GrayImage,
    qbox: &BoundingBox,
    mbox: &BoundingBox,
    extractor: &dyn LocalExtractor,
    max_kp: usize,
    ratio: f32,
) -> (LocalFeatureSet, LocalFeatureSet, MatchSet) {
    let qf = extractor
        .extract(&qbox.crop(query), max_kp)
        .translated(qbox.x_min as f32, qbox.y_min as f32);
    let mf = extractor
        .extract(&mbox.crop(map), max_kp)
        .translated(mbox.x_min as f32, mbox.y_min as f32);
    let m = match_features(&qf, &mf, ratio);
    (qf, mf, m)
}

/// Point id under a map pixel, searching the L∞ neighbourhood of `radius`
/// when the pixel itself is empty: nearest pixel first, lower id on ties.
pub fn lookup_point(img: &MapImage, x: f64, y: f64, radius: usize) -> Option<PointId> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    if (0..w).contains(&cx) && (0..h).contains(&cy) {
        if let Some(id) = img.point_at(cx as usize, cy as usize) {
            return Some(id);
        }
    }
    let r = radius as i64;
    let mut best: Option<(i64, PointId)> = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let (px, py) = (cx + dx, cy + dy);
            if !(0..w).contains(&px) || !(0..h).contains(&py) {
                continue;
            }
            if let Some(id) = img.point_at(px as usize, py as usize) {
                let d = dx * dx + dy * dy;
                if best.is_none_or(|b| (d, id) < b) {
                    best = Some((d, id));
                }
            }
        }
    }
    best.map(|b| b.1)
}

/// Lifts 2D-2D matches to 2D-3D; matches without a point nearby are dropped.
pub fn lift_2d3d(
    matches: &MatchSet,
    query: &QueryView,
    qfeats: &LocalFeatureSet,
    mfeats: &LocalFeatureSet,
    img: &MapImage,
    db: &Database,
    radius: usize,
    stage: Stage,
) -> Vec<Correspondence2D3D> {
    matches
        .pairs
        .iter()
        .filter_map(|m| {
            let (q, p) = (qfeats.keypoints[m.query_idx], mfeats.keypoints[m.map_idx]);
            let id = lookup_point(img, p.x as f64, p.y as f64, radius)?;
            let pt = db.cloud.get(id)?;
            let query_px = query.to_original(q.x as f64, q.y as f64);
            if !(query_px[0].is_finite() && query_px[1].is_finite()) {
                return None;
            }
            Some(Correspondence2D3D {
                query_px,
                point_id: id,
                point_xyz: pt.position(),
                covis: db.covis_of(id),
                stage,
                image_id: img.image_id as usize,
            })
        })
        .collect()
}

/// Union keeping the earlier entry of any duplicate pair (same point, query
/// pixels within 1 px). First-stage entries come first.
pub fn concat_stages(first: &[Correspondence2D3D], second: &[Correspondence2D3D]) -> Vec<Correspondence2D3D> {
    let mut out: Vec<Correspondence2D3D> = Vec::with_capacity(first.len() + second.len());
    for c in first.iter().chain(second) {
        let dup = out.iter().any(|o| {
            o.point_id == c.point_id && {
                let (dx, dy) = (o.query_px[0] - c.query_px[0], o.query_px[1] - c.query_px[1]);
                dx * dx + dy * dy <= 1.0
            }
        });
        if !dup {
            out.push(*c);
        }
    }
    out
}

/// Keeps correspondences with `covis ≥ min_covis`, lowering the threshold
/// step by step while fewer than [`MIN_FILTERED`] survive.
pub fn covisibility_filter(corrs: &[Correspondence2D3D], min_covis: u32) -> Vec<Correspondence2D3D> {
    let mut m = min_covis;
    loop {
        let kept: Vec<_> = corrs.iter().filter(|c| c.covis >= m).copied().collect();
        if kept.len() >= MIN_FILTERED || m <= 1 {
            return kept;
        }
        m -= 1;
    }
}

/// Counts from associating one candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AssociationStats {
    pub first_matches: usize,
    pub clustered: usize,
    pub second_matches: usize,
    pub lifted_first: usize,
    pub lifted_second: usize,
    pub rejected: bool,
}

/// Everything produced for one candidate, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct CandidateAssociation {
    pub image_id: usize,
    pub corrs: Vec<Correspondence2D3D>,
    pub cluster: Option<MatchCluster>,
    pub stats: AssociationStats,
}

pub struct AssociationParams<'a> {
    pub cfg: &'a AssociationConfig,
    pub extractor: &'a dyn LocalExtractor,
    pub ratio: f32,
    pub max_kp_crop: usize,
    pub two_stage: bool,
}

/// Associates the query with one map image. With two stages enabled, a
/// candidate whose matches do not form a large enough cluster contributes
/// nothing.
pub fn associate_candidate(query: &QueryView, db: &Database, image_id: usize, p: &AssociationParams) -> CandidateAssociation {
    let img = &db.images[image_id];
    let mfeats = &db.local_feats[image_id];
    let m1 = match_features(&query.feats, mfeats, p.ratio);
    let first = lift_2d3d(&m1, query, &query.feats, mfeats, img, db, p.cfg.lift_radius, Stage::First);
    let mut stats = AssociationStats {
        first_matches: m1.len(),
        lifted_first: first.len(),
        ..Default::default()
    };
    if !p.two_stage {
        return CandidateAssociation {
            image_id,
            corrs: first,
            cluster: None,
            stats,
        };
    }
    let qsize = (query.image.width(), query.image.height());
    let Some(cluster) = cluster_matches(&m1, &query.feats, mfeats, qsize, (img.width(), img.height()), p.cfg) else {
        stats.rejected = true;
        return CandidateAssociation {
            image_id,
            corrs: Vec::new(),
            cluster: None,
            stats,
        };
    };
    stats.clustered = cluster.matches.len();
    let (qf, mf, m2) = second_stage_match(
        &query.image,
        &img.intensity,
        &cluster.query_box,
        &cluster.map_box,
        p.extractor,
        p.max_kp_crop,
        p.ratio,
    );
    let second = lift_2d3d(&m2, query, &qf, &mf, img, db, p.cfg.lift_radius, Stage::Second);
    stats.second_matches = m2.len();
    stats.lifted_second = second.len();
    CandidateAssociation {
        image_id,
        corrs: concat_stages(&first, &second),
        cluster: Some(cluster),
        stats,
    }
}
