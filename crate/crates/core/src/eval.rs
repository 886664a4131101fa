//! Retrieval and relocalization metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::io::{Pose, Trajectory};
use crate::pose::{RelocalizationResult, Status};

/// Relocalization-recall thresholds as (meters, degrees), tightest first.
pub const RR_THRESHOLDS: [(f64, f64); 3] = [(0.5, 1.0), (1.0, 3.0), (3.0, 5.0)];
pub const DEFAULT_RECALL_KS: [usize; 4] = [1, 5, 10, 20];
pub const RECALL_DIST_M: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no queries to evaluate")]
    Empty,
    #[error("{0} predictions for {1} ground-truth poses")]
    CountMismatch(usize, usize),
    #[error("query {0} has no ground truth")]
    UnknownQuery(i64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One relocalization result as written by the CLI.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub query_id: i64,
    /// Camera-to-world pose; `None` for failed queries.
    pub pose: Option<Pose>,
    pub inliers: usize,
    pub inlier_ratio: f64,
    pub mean_err_px: f64,
}

/// `# query <id>` followed by
/// `status tx ty tz qx qy qz qw inliers ratio mean_err_px`; the pose is the
/// camera-to-world transform and failed queries carry `nan` fields and the
/// reason as a trailing comment.
pub fn format_result(query_id: i64, res: &RelocalizationResult) -> String {
    let mut s = format!("# query {query_id}\n");
    match &res.status {
        Status::Ok => {
            let p = res.camera_pose();
            let (t, q) = (p.translation(), p.quaternion());
            let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
            let (qx, qy, qz, qw) = (sign * q.i, sign * q.j, sign * q.k, sign * q.w);
            let _ = write!(
                s,
                "OK {:.6} {:.6} {:.6} {:.9} {:.9} {:.9} {:.9} {} {:.4} {:.4}",
                t.x, t.y, t.z, qx, qy, qz, qw, res.inlier_count, res.inlier_ratio, res.mean_reproj_err_px
            );
        }
        Status::Failed(reason) => {
            let _ = write!(s, "FAILED nan nan nan nan nan nan nan {} {:.4} nan # {reason}", res.inlier_count, res.inlier_ratio);
        }
    }
    s
}

/// Parses [`format_result`] output. Result lines without a preceding
/// `# query` header are numbered by position.
pub fn parse_results(text: &str) -> Result<Vec<ResultRecord>, EvalError> {
    let mut out = Vec::new();
    let mut pending: Option<i64> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: String| EvalError::Parse { line, msg };
        let trimmed = raw.trim();
        if let Some(rest) = trimmed.strip_prefix("# query") {
            pending = Some(rest.trim().parse().map_err(|_| err(format!("bad query id '{}'", rest.trim())))?);
            continue;
        }
        let body = trimmed.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let f: Vec<&str> = body.split_whitespace().collect();
        if f.len() != 11 {
            return Err(err(format!("expected 11 fields, found {}", f.len())));
        }
        let num = |j: usize| f[j].parse::<f64>().map_err(|_| err(format!("bad number '{}'", f[j])));
        let pose = match f[0] {
            "OK" => {
                let t = nalgebra::Vector3::new(num(1)?, num(2)?, num(3)?);
                let q = [num(4)?, num(5)?, num(6)?, num(7)?];
                Some(Pose::from_quaternion_xyzw(t, q).map_err(|e| err(e.to_string()))?)
            }
            "FAILED" => None,
            other => return Err(err(format!("unknown status '{other}'"))),
        };
        out.push(ResultRecord {
            query_id: pending.take().unwrap_or(out.len() as i64),
            pose,
            inliers: f[8].parse().map_err(|_| err(format!("bad inlier count '{}'", f[8])))?,
            inlier_ratio: num(9)?,
            mean_err_px: num(10)?,
        });
    }
    Ok(out)
}

/// Aligns parsed results with ground-truth entries by query id.
pub fn align_results(results: &[ResultRecord], gt: &Trajectory) -> Result<(Vec<Option<Pose>>, Vec<Pose>), EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    if results.len() != gt.len() {
        return Err(EvalError::CountMismatch(results.len(), gt.len()));
    }
    let mut preds = Vec::with_capacity(results.len());
    let mut poses = Vec::with_capacity(results.len());
    for r in results {
        let (_, g) = gt
            .entries()
            .iter()
            .find(|(id, _)| *id == r.query_id)
            .ok_or(EvalError::UnknownQuery(r.query_id))?;
        preds.push(r.pose);
        poses.push(*g);
    }
    Ok((preds, poses))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub trans_err: f64,
    pub rot_err: f64,
}

/// Translation distance and relative rotation angle (degrees).
pub fn pose_error(pred: &Pose, gt: &Pose) -> PoseError {
    let r = pred.rotation() * gt.rotation().transpose();
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    PoseError {
        trans_err: (pred.translation() - gt.translation()).norm(),
        rot_err: c.acos().to_degrees().clamp(0.0, 180.0),
    }
}

/// Fraction of queries with a retrieved position within `dist_m` of the
/// ground truth among the first K, for every K in `ks`.
pub fn recall_at_k(
    retrieved_positions: &[Vec<nalgebra::Vector3<f64>>],
    gt: &[Pose],
    ks: &[usize],
    dist_m: f64,
) -> Result<BTreeMap<usize, f64>, EvalError> {
    if retrieved_positions.is_empty() {
        return Err(EvalError::Empty);
    }
    if retrieved_positions.len() != gt.len() {
        return Err(EvalError::CountMismatch(retrieved_positions.len(), gt.len()));
    }
    let first_hit: Vec<Option<usize>> = retrieved_positions
        .iter()
        .zip(gt)
        .map(|(cands, g)| cands.iter().position(|p| (p - g.translation()).norm() <= dist_m))
        .collect();
    let n = gt.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| (k, first_hit.iter().filter(|h| h.is_some_and(|i| i < k)).count() as f64 / n))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub count: usize,
    pub rmse: f64,
    pub mse: f64,
    pub mae: f64,
    pub max: f64,
}

impl ErrorStats {
    pub fn from_errors(errs: &[f64]) -> Self {
        if errs.is_empty() {
            return ErrorStats {
                count: 0,
                rmse: f64::NAN,
                mse: f64::NAN,
                mae: f64::NAN,
                max: f64::NAN,
            };
        }
        let n = errs.len() as f64;
        let mse = errs.iter().map(|e| e * e).sum::<f64>() / n;
        ErrorStats {
            count: errs.len(),
            rmse: mse.sqrt(),
            mse,
            mae: errs.iter().sum::<f64>() / n,
            max: errs.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelocReport {
    /// One entry per threshold pair, in the order given.
    pub rr: Vec<((f64, f64), f64)>,
    /// Translation errors of queries inside the loosest threshold.
    pub stats: ErrorStats,
    pub queries: usize,
    pub failed: usize,
}

/// Relocalization recall; `None` predictions are failures.
pub fn reloc_recall(preds: &[Option<Pose>], gt: &[Pose], thresholds: &[(f64, f64)]) -> Result<RelocReport, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    if preds.len() != gt.len() {
        return Err(EvalError::CountMismatch(preds.len(), gt.len()));
    }
    let errors: Vec<Option<PoseError>> = preds.iter().zip(gt).map(|(p, g)| p.as_ref().map(|p| pose_error(p, g))).collect();
    let pass = |e: &Option<PoseError>, (t, r): (f64, f64)| e.is_some_and(|e| e.trans_err <= t && e.rot_err <= r);
    let n = preds.len() as f64;
    let rr = thresholds
        .iter()
        .map(|&th| (th, errors.iter().filter(|e| pass(e, th)).count() as f64 / n))
        .collect();
    let gate = thresholds
        .iter()
        .copied()
        .fold((0.0, 0.0), |a: (f64, f64), b| (a.0.max(b.0), a.1.max(b.1)));
    let gated: Vec<f64> = errors.iter().filter(|e| pass(e, gate)).map(|e| e.unwrap().trans_err).collect();
    Ok(RelocReport {
        rr,
        stats: ErrorStats::from_errors(&gated),
        queries: preds.len(),
        failed: preds.iter().filter(|p| p.is_none()).count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub recall_at_k: Option<BTreeMap<usize, f64>>,
    pub reloc: RelocReport,
}

impl EvalReport {
    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(r) = &self.recall_at_k {
            s.push_str("Coarse retrieval\n");
            for (k, v) in r {
                let _ = writeln!(s, "  R@{k:<3} {v:.3}");
            }
        }
        let _ = writeln!(s, "Fine relocalization ({} queries, {} failed)", self.reloc.queries, self.reloc.failed);
        for ((t, r), v) in &self.reloc.rr {
            let _ = writeln!(s, "  RR({t}m/{r}deg) {v:.3}");
        }
        let st = &self.reloc.stats;
        let _ = writeln!(
            s,
            "  RMSE {:.4}  MSE {:.4}  MAE {:.4}  Max Error {:.4}  (m, over {} queries)",
            st.rmse, st.mse, st.mae, st.max, st.count
        );
        s
    }

    /// Tab-separated report: a `K R@K` block, a `trans_m rot_deg RR` block
    /// and a `rmse mse mae max` block, separated by blank lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("K\tR@K\n");
        if let Some(r) = &self.recall_at_k {
            for (k, v) in r {
                let _ = writeln!(s, "{k}\t{v}");
            }
        }
        s.push_str("\ntrans_m\trot_deg\tRR\n");
        for ((t, r), v) in &self.reloc.rr {
            let _ = writeln!(s, "{t}\t{r}\t{v}");
        }
        let st = &self.reloc.stats;
        let _ = write!(s, "\nrmse\tmse\tmae\tmax\n{}\t{}\t{}\t{}\n", st.rmse, st.mse, st.mae, st.max);
        s
    }
}
