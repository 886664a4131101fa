//! Online relocalization: query preprocessing, retrieval, association and
//! pose estimation against a loaded [`Database`].

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::association::{
    associate_candidate, covisibility_filter, AssociationParams, CandidateAssociation, Correspondence2D3D, QueryView, QueryWarp,
};
use crate::config::PipelineConfig;
use crate::features::{global_extractor, PATCH_SIZE, local_extractor, FeatureError, GlobalDescriptor, GlobalExtractor, LocalExtractor};
use crate::io::{save_pgm, CameraIntrinsics, GrayImage, IoError};
use crate::mapdb::Database;
use crate::pose::{pnp_ransac, Observation, RelocalizationResult, StageStats};
use crate::projection::{clahe, pixel_ray, project_point_to_pano, ProjectionConfig};
use crate::retrieval::{covisibility_cluster, label_candidates, retrieve_topk, Candidate};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("empty database")]
    EmptyDatabase,
    #[error("query image {0}x{1} does not match intrinsics {2}x{3}")]
    QuerySize(usize, usize, usize, usize),
}

/// Coarse stage output.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    /// Top-K by global similarity, with cluster labels when clustering.
    pub topk: Vec<Candidate>,
    /// Candidates passed to the fine stage.
    pub selected: Vec<Candidate>,
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub retrieval: Retrieval,
    pub associations: Vec<CandidateAssociation>,
    /// Correspondences handed to the pose solver.
    pub corrs: Vec<Correspondence2D3D>,
    pub result: RelocalizationResult,
}

pub struct Relocalizer<'a> {
    db: &'a Database,
    cfg: PipelineConfig,
    global: Box<dyn GlobalExtractor>,
    local: Box<dyn LocalExtractor>,
}

impl<'a> Relocalizer<'a> {
    /// Uses `cfg` for the online stages; the database keeps its own build
    /// settings.
    pub fn new(db: &'a Database, cfg: PipelineConfig) -> Result<Self, PipelineError> {
        if db.is_empty() {
            return Err(PipelineError::EmptyDatabase);
        }
        Ok(Relocalizer {
            db,
            global: global_extractor(&cfg.features.global)?,
            local: local_extractor(&cfg.features.local)?,
            cfg,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Contrast enhancement matching what the map images received.
    pub fn preprocess(&self, img: &GrayImage) -> GrayImage {
        if self.cfg.ablation.use_equalization {
            clahe(img, self.cfg.clahe.clip_limit, self.cfg.clahe.tiles)
        } else {
            img.clone()
        }
    }

    /// Global descriptor of a preprocessed query. With face warping the
    /// query is first resampled into front-face geometry so that it compares
    /// with map patches; otherwise it is resized to the configured short side.
    pub fn describe(&self, pre: &GrayImage, k: &CameraIntrinsics) -> GlobalDescriptor {
        if self.cfg.features.query_face_warp {
            let proj = self.db.config.projection();
            return self.global.extract(&face_view(pre, k, &proj, Some(0)).0);
        }
        let short = pre.width().min(pre.height()).max(1);
        let s = self.cfg.features.query_short_side as f64 / short as f64;
        if (s - 1.0).abs() < 1e-9 {
            return self.global.extract(pre);
        }
        let w = ((pre.width() as f64 * s).round() as usize).max(1);
        let h = ((pre.height() as f64 * s).round() as usize).max(1);
        self.global.extract(&pre.resize_area(w, h))
    }

    pub fn retrieve(&self, pre: &GrayImage, k: &CameraIntrinsics) -> Retrieval {
        let q = self.describe(pre, k);
        let r = &self.cfg.retrieval;
        let mut topk = retrieve_topk(&q, self.db, r.k);
        let selected = if self.cfg.ablation.use_covis_cluster {
            topk = label_candidates(&topk, self.db, r);
            covisibility_cluster(&topk, self.db, r)
        } else {
            topk.iter().take(r.k_prime).copied().collect()
        };
        Retrieval { topk, selected }
    }

    /// Resize factor for local matching.
    pub fn local_scale(&self, k: &CameraIntrinsics) -> f64 {
        let s = self.cfg.features.local_query_scale;
        if s > 0.0 {
            s
        } else {
            (self.db.config.projection().center_focal() / k.fx).min(1.0)
        }
    }

    pub fn query_view(&self, pre: &GrayImage, k: &CameraIntrinsics) -> QueryView {
        let max_kp = self.cfg.features.max_kp;
        if self.cfg.features.query_face_warp {
            let proj = self.db.config.projection();
            let (image, valid) = face_view(pre, k, &proj, Some(0));
            // detect with headroom, then drop keypoints whose support leaves
            // the imaged area
            let mut feats = self.local.extract(&image, 2 * max_kp);
            let w = image.width();
            let r = PATCH_SIZE as i64 / 2 + 2;
            feats.retain(|kp| {
                let (cx, cy) = (kp.x.round() as i64, kp.y.round() as i64);
                (cy - r..=cy + r).all(|y| {
                    (cx - r..=cx + r).all(|x| x >= 0 && y >= 0 && (x as usize) < w && valid.get(y as usize * w + x as usize).copied().unwrap_or(false))
                })
            });
            feats.truncate(max_kp);
            return QueryView {
                image,
                feats,
                warp: QueryWarp::Face { k: *k, proj },
            };
        }
        let scale = self.local_scale(k);
        let image = if (scale - 1.0).abs() < 1e-9 {
            pre.clone()
        } else {
            let w = ((pre.width() as f64 * scale).round() as usize).max(1);
            let h = ((pre.height() as f64 * scale).round() as usize).max(1);
            pre.resize_area(w, h)
        };
        let feats = self.local.extract(&image, max_kp);
        QueryView {
            image,
            feats,
            warp: QueryWarp::Scaled(scale),
        }
    }

    /// Full query: retrieval, association over the selected candidates,
    /// covisibility filtering and P3P + RANSAC.
    pub fn relocalize(&self, query: &GrayImage, k: &CameraIntrinsics) -> Result<QueryOutcome, PipelineError> {
        if (query.width(), query.height()) != (k.width, k.height) {
            return Err(PipelineError::QuerySize(query.width(), query.height(), k.width, k.height));
        }
        let pre = self.preprocess(query);
        let retrieval = self.retrieve(&pre, k);
        let view = self.query_view(&pre, k);
        let params = AssociationParams {
            cfg: &self.cfg.association,
            extractor: self.local.as_ref(),
            ratio: self.cfg.features.ratio,
            max_kp_crop: self.cfg.features.max_kp_crop,
            two_stage: self.cfg.ablation.use_two_stage,
        };
        let associations: Vec<CandidateAssociation> = retrieval
            .selected
            .par_iter()
            .map(|c| associate_candidate(&view, self.db, c.image_id, &params))
            .collect();
        let pooled: Vec<Correspondence2D3D> = associations.iter().flat_map(|a| a.corrs.iter().copied()).collect();
        let corrs = if self.cfg.ablation.use_covis_filter {
            covisibility_filter(&pooled, self.cfg.association.min_covis)
        } else {
            pooled.clone()
        };
        let obs: Vec<Observation> = corrs.iter().map(Observation::from).collect();
        let mut result = pnp_ransac(&obs, k, &self.cfg.ransac);
        result.stats = StageStats {
            candidates: retrieval.selected.len(),
            matches: associations
                .iter()
                .map(|a| a.stats.first_matches + a.stats.second_matches)
                .sum(),
            lifted: pooled.len(),
            filtered: corrs.len(),
            rejected_candidates: associations.iter().filter(|a| a.stats.rejected).count(),
        };
        log::debug!(
            "query: {} candidates, {} lifted, {} filtered, status {:?}",
            result.stats.candidates,
            result.stats.lifted,
            result.stats.filtered,
            result.status
        );
        Ok(QueryOutcome {
            retrieval,
            associations,
            corrs,
            result,
        })
    }
}

/// Resamples a pinhole image into one HEC cube face looking along the
/// camera axis, with a mask of the pixels the image covers. Uncovered pixels
/// get `fill`, or the image mean.
pub fn face_view(img: &GrayImage, k: &CameraIntrinsics, proj: &ProjectionConfig, fill: Option<u8>) -> (GrayImage, Vec<bool>) {
    let s = proj.face_size;
    let fill = fill.unwrap_or_else(|| {
        let sum: u64 = img.pixels().iter().map(|&v| v as u64).sum();
        (sum / img.pixels().len().max(1) as u64) as u8
    });
    let mut valid = vec![false; s * s];
    let out = GrayImage::from_fn(s, s, |x, y| {
        let v = pixel_ray(x, y, proj)
            .filter(|r| r.z > 0.0)
            .and_then(|r| sample_bilinear(img, k.fx * r.x / r.z + k.cx, k.fy * r.y / r.z + k.cy));
        valid[y * s + x] = v.is_some();
        v.unwrap_or(fill)
    });
    (out, valid)
}

fn sample_bilinear(img: &GrayImage, x: f64, y: f64) -> Option<u8> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(x > -0.5 && y > -0.5 && x < w - 0.5 && y < h - 0.5) {
        return None;
    }
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let g = |xx, yy| img.get(xx, yy) as f64;
    let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
    let bot = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
    Some((top * (1.0 - fy) + bot * fy).round() as u8)
}

/// Writes `corrs.txt` (`qx qy X Y Z covis stage`, one line per pooled
/// correspondence) and, per selected candidate, `cand_<rank>_<image>.pgm`:
/// the query above the map panorama with a segment per correspondence.
pub fn dump_matches(dir: &Path, query: &GrayImage, db: &Database, out: &QueryOutcome) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut text = String::new();
    for c in &out.corrs {
        let _ = writeln!(
            text,
            "{:.3} {:.3} {:.4} {:.4} {:.4} {} {}",
            c.query_px[0],
            c.query_px[1],
            c.point_xyz.x,
            c.point_xyz.y,
            c.point_xyz.z,
            c.covis,
            c.stage.as_str()
        );
    }
    let path = dir.join("corrs.txt");
    std::fs::write(&path, text).map_err(|source| IoError::File { path, source })?;

    let proj = db.config.projection();
    for (rank, a) in out.associations.iter().enumerate() {
        let pano = &db.images[a.image_id];
        let map = &pano.intensity;
        let mut canvas = GrayImage::new(query.width().max(map.width()), query.height() + map.height());
        for y in 0..query.height() {
            for x in 0..query.width() {
                canvas.set(x, y, query.get(x, y));
            }
        }
        for y in 0..map.height() {
            for x in 0..map.width() {
                canvas.set(x, query.height() + y, map.get(x, y));
            }
        }
        let to_cam = pano.pose.inverse();
        for c in &a.corrs {
            let Some(hit) = project_point_to_pano(&to_cam.transform_point(&c.point_xyz), &proj) else {
                continue;
            };
            let b = (hit.panorama_x(proj.face_size), hit.y + query.height() as f64);
            draw_segment(&mut canvas, (c.query_px[0], c.query_px[1]), b, 255);
        }
        save_pgm(&dir.join(format!("cand_{rank:02}_{}.pgm", a.image_id)), &canvas)?;
    }
    Ok(())
}

fn draw_segment(img: &mut GrayImage, a: (f64, f64), b: (f64, f64), value: u8) {
    let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let (x, y) = ((a.0 + t * (b.0 - a.0)).round(), (a.1 + t * (b.1 - a.1)).round());
        if x >= 0.0 && y >= 0.0 && (x as usize) < img.width() && (y as usize) < img.height() {
            img.set(x as usize, y as usize, value);
        }
    }
}
