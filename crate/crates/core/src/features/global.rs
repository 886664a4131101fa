use std::f32::consts::PI;

use super::{normalize_clamped, GlobalDescriptor, GlobalExtractor};
use crate::io::GrayImage;

const SIDE: usize = 128;
const GRID: usize = 8;
const BINS: usize = 8;
pub const GLOBAL_DIM: usize = GRID * GRID * BINS;

/// Gradient-orientation histograms over an 8×8 grid of a 128×128 thumbnail.
#[derive(Debug, Clone, Copy, Default)]
pub struct HogGist;

impl GlobalExtractor for HogGist {
    fn name(&self) -> &'static str {
        "hog-gist"
    }

    fn extract(&self, img: &GrayImage) -> GlobalDescriptor {
        extract_global(img)
    }
}

/// 512-d unit descriptor. A flat image yields the uniform vector.
pub fn extract_global(img: &GrayImage) -> GlobalDescriptor {
    let mut hist = vec![0f32; GLOBAL_DIM];
    if img.is_empty() {
        return GlobalDescriptor::from_raw(hist);
    }
    let thumb = img.resize_area(SIDE, SIDE);
    let px = |x: isize, y: isize| -> f32 {
        let x = x.clamp(0, SIDE as isize - 1) as usize;
        let y = y.clamp(0, SIDE as isize - 1) as usize;
        thumb.get(x, y) as f32
    };
    let cell = SIDE / GRID;
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (xi, yi) = (x as isize, y as isize);
            let gx = px(xi + 1, yi) - px(xi - 1, yi);
            let gy = px(xi, yi + 1) - px(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let pos = (gy.atan2(gx) + PI) / (2.0 * PI) * BINS as f32 - 0.5;
            let b0 = pos.floor();
            let frac = pos - b0;
            let b0 = (b0 as i32).rem_euclid(BINS as i32) as usize;
            let b1 = (b0 + 1) % BINS;
            let base = ((y / cell) * GRID + x / cell) * BINS;
            hist[base + b0] += mag * (1.0 - frac);
            hist[base + b1] += mag * frac;
        }
    }
    normalize_clamped(&mut hist, 0.2);
    GlobalDescriptor::from_raw(hist)
}
