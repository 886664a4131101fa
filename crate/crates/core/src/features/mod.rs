//! Global descriptors, local features and descriptor matching.
//!
//! Extractors are looked up by name so that learned models can be plugged in
//! behind the same interfaces. The built-ins are deterministic and classical:
//! `hog-gist` (spatial gradient-orientation histograms) and `harris-patch`
//! (Harris corners with 4×4×8 gradient-histogram patch descriptors).

mod global;
mod local;
mod matching;

use thiserror::Error;

use crate::io::GrayImage;

pub use global::{extract_global, HogGist, GLOBAL_DIM};
pub use local::{extract_local, harris_response, HarrisPatch, LOCAL_DIM, PATCH_SIZE};
pub use matching::match_features;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("unknown {kind} extractor '{name}' (available: {})", available.join(", "))]
    UnknownExtractor {
        kind: &'static str,
        name: String,
        available: Vec<&'static str>,
    },
    #[error("descriptor length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
}

/// Unit-norm image descriptor used for retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    values: Vec<f32>,
}

impl GlobalDescriptor {
    /// Accepts a finite vector with unit L2 norm (within 1e-5).
    pub fn new(values: Vec<f32>) -> Result<Self, FeatureError> {
        if values.is_empty() || !values.iter().all(|v| v.is_finite()) {
            return Err(FeatureError::InvalidDescriptor("empty or non-finite".into()));
        }
        let norm = values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-5 {
            return Err(FeatureError::InvalidDescriptor(format!("norm {norm} is not unit")));
        }
        Ok(GlobalDescriptor { values })
    }

    /// L2-normalizes `raw`; a zero vector becomes the uniform unit vector.
    pub fn from_raw(mut raw: Vec<f32>) -> Self {
        normalize_l2(&mut raw);
        GlobalDescriptor { values: raw }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Cosine similarity of two unit descriptors.
pub fn similarity(a: &GlobalDescriptor, b: &GlobalDescriptor) -> Result<f64, FeatureError> {
    if a.len() != b.len() {
        return Err(FeatureError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(&x, &y)| x as f64 * y as f64).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Pixel coordinates, pixel centers at integers.
    pub x: f32,
    pub y: f32,
    pub score: f32,
}

/// Keypoints with row-major descriptors of a fixed length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalFeatureSet {
    pub keypoints: Vec<Keypoint>,
    descriptors: Vec<f32>,
    dim: usize,
}

impl LocalFeatureSet {
    pub fn new(keypoints: Vec<Keypoint>, descriptors: Vec<f32>, dim: usize) -> Result<Self, FeatureError> {
        if descriptors.len() != keypoints.len() * dim {
            return Err(FeatureError::LengthMismatch(descriptors.len(), keypoints.len() * dim));
        }
        Ok(LocalFeatureSet {
            keypoints,
            descriptors,
            dim,
        })
    }

    pub fn empty(dim: usize) -> Self {
        LocalFeatureSet {
            keypoints: Vec::new(),
            descriptors: Vec::new(),
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn descriptors(&self) -> &[f32] {
        &self.descriptors
    }

    /// Keeps the features whose keypoint satisfies `keep`, in order.
    pub fn retain(&mut self, mut keep: impl FnMut(&Keypoint) -> bool) {
        let dim = self.dim;
        let mut w = 0;
        for r in 0..self.keypoints.len() {
            if keep(&self.keypoints[r]) {
                self.keypoints[w] = self.keypoints[r];
                self.descriptors.copy_within(r * dim..(r + 1) * dim, w * dim);
                w += 1;
            }
        }
        self.keypoints.truncate(w);
        self.descriptors.truncate(w * dim);
    }

    pub fn truncate(&mut self, n: usize) {
        self.keypoints.truncate(n);
        self.descriptors.truncate(n * self.dim);
    }

    /// Shifts all keypoints, e.g. from crop to full-image coordinates.
    pub fn translated(mut self, dx: f32, dy: f32) -> Self {
        for k in &mut self.keypoints {
            k.x += dx;
            k.y += dy;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub query_idx: usize,
    pub map_idx: usize,
    /// `1 − distance / 2` for unit descriptors, in `[0, 1]`.
    pub score: f32,
}

/// One-to-one matches between two feature sets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Swaps query and map roles.
    pub fn reversed(&self) -> MatchSet {
        let mut pairs: Vec<Match> = self
            .pairs
            .iter()
            .map(|m| Match {
                query_idx: m.map_idx,
                map_idx: m.query_idx,
                score: m.score,
            })
            .collect();
        pairs.sort_by_key(|m| m.query_idx);
        MatchSet { pairs }
    }
}

pub trait GlobalExtractor: Send + Sync {
    fn name(&self) -> &'static str;
    fn extract(&self, img: &GrayImage) -> GlobalDescriptor;
}

pub trait LocalExtractor: Send + Sync {
    fn name(&self) -> &'static str;
    fn extract(&self, img: &GrayImage, max_kp: usize) -> LocalFeatureSet;
}

pub const GLOBAL_EXTRACTORS: &[&str] = &["hog-gist"];
pub const LOCAL_EXTRACTORS: &[&str] = &["harris-patch"];

pub fn global_extractor(name: &str) -> Result<Box<dyn GlobalExtractor>, FeatureError> {
    match name {
        "hog-gist" => Ok(Box::new(HogGist)),
        _ => Err(FeatureError::UnknownExtractor {
            kind: "global",
            name: name.to_string(),
            available: GLOBAL_EXTRACTORS.to_vec(),
        }),
    }
}

pub fn local_extractor(name: &str) -> Result<Box<dyn LocalExtractor>, FeatureError> {
    match name {
        "harris-patch" => Ok(Box::new(HarrisPatch)),
        _ => Err(FeatureError::UnknownExtractor {
            kind: "local",
            name: name.to_string(),
            available: LOCAL_EXTRACTORS.to_vec(),
        }),
    }
}

/// In-place L2 normalization; all-zero input becomes uniform.
pub(crate) fn normalize_l2(v: &mut [f32]) {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm > 1e-12 {
        let inv = (1.0 / norm) as f32;
        v.iter_mut().for_each(|x| *x *= inv);
    } else if !v.is_empty() {
        let u = (1.0 / (v.len() as f64).sqrt()) as f32;
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Normalize, clamp components at `cap`, normalize again.
pub(crate) fn normalize_clamped(v: &mut [f32], cap: f32) {
    normalize_l2(v);
    v.iter_mut().for_each(|x| *x = x.min(cap));
    normalize_l2(v);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(i: usize, n: usize, sign: f32) -> GlobalDescriptor {
        let mut v = vec![0.0; n];
        v[i] = sign;
        GlobalDescriptor::new(v).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let a = GlobalDescriptor::from_raw(vec![0.3, -0.2, 0.9, 0.1]);
        assert!((similarity(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(similarity(&unit(0, 4, 1.0), &unit(1, 4, 1.0)).unwrap(), 0.0);
        assert_eq!(similarity(&unit(2, 4, 1.0), &unit(2, 4, -1.0)).unwrap(), -1.0);
        assert!(matches!(
            similarity(&unit(0, 4, 1.0), &unit(0, 5, 1.0)),
            Err(FeatureError::LengthMismatch(4, 5))
        ));
    }

    #[test]
    fn descriptor_validation() {
        assert!(GlobalDescriptor::new(vec![1.0, 1.0]).is_err());
        assert!(GlobalDescriptor::new(vec![f32::NAN]).is_err());
        let z = GlobalDescriptor::from_raw(vec![0.0; 4]);
        assert_eq!(z.values(), &[0.5; 4]);
    }

    #[test]
    fn unknown_extractor_lists_available() {
        let err = global_extractor("netvlad").err().unwrap().to_string();
        assert!(err.contains("netvlad") && err.contains("hog-gist"), "{err}");
        let err = local_extractor("superpoint").err().unwrap().to_string();
        assert!(err.contains("harris-patch"), "{err}");
        assert_eq!(global_extractor("hog-gist").unwrap().name(), "hog-gist");
        assert_eq!(local_extractor("harris-patch").unwrap().name(), "harris-patch");
    }
}
