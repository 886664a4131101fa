use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;

/// Pinhole intrinsics of a rectified query camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, IoError> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// 960×480 with f = 480 and a centered principal point.
    pub fn standard_query() -> Self {
        CameraIntrinsics {
            fx: 480.0,
            fy: 480.0,
            cx: 480.0,
            cy: 240.0,
            width: 960,
            height: 480,
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let bad = |m: &str| Err(IoError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx outside [0, width)");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy outside [0, height)");
        }
        Ok(())
    }

    /// Same camera with the image resampled by `scale` (pixel centers at
    /// integer coordinates, as in a center-aligned resize).
    pub fn scaled(&self, scale: f64) -> Self {
        CameraIntrinsics {
            fx: self.fx * scale,
            fy: self.fy * scale,
            cx: (self.cx + 0.5) * scale - 0.5,
            cy: (self.cy + 0.5) * scale - 0.5,
            width: ((self.width as f64 * scale).round() as usize).max(1),
            height: ((self.height as f64 * scale).round() as usize).max(1),
        }
    }
}

pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics, IoError> {
    let bytes = super::read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| IoError::InvalidIntrinsics("not UTF-8".into()))?;
    let k: CameraIntrinsics = toml::from_str(&text).map_err(|e| IoError::InvalidIntrinsics(e.to_string()))?;
    k.validate()?;
    Ok(k)
}

pub fn save_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<(), IoError> {
    let text = toml::to_string(k).map_err(|e| IoError::InvalidIntrinsics(e.to_string()))?;
    super::write_file(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_validation() {
        let k = CameraIntrinsics::standard_query();
        let text = toml::to_string(&k).unwrap();
        assert_eq!(toml::from_str::<CameraIntrinsics>(&text).unwrap(), k);
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(toml::from_str::<CameraIntrinsics>("fx=1.0\nfy=1.0\ncx=0.0\ncy=0.0\nwidth=2\nheight=2\nk1=0.1").is_err());
    }

    #[test]
    fn scaling_keeps_pixel_centers() {
        let k = CameraIntrinsics::new(100.0, 100.0, 49.5, 29.5, 100, 60).unwrap().scaled(0.5);
        assert_eq!((k.fx, k.cx, k.cy, k.width, k.height), (50.0, 24.5, 14.5, 50, 30));
    }
}
