use std::f32::consts::PI;

use super::{normalize_clamped, Keypoint, LocalExtractor, LocalFeatureSet};
use crate::io::GrayImage;

pub const PATCH_SIZE: usize = 16;
const CELLS: usize = 4;
const BINS: usize = 8;
pub const LOCAL_DIM: usize = CELLS * CELLS * BINS;
const HARRIS_K: f32 = 0.04;
const MIN_RESPONSE: f32 = 1e-6;
const BORDER: usize = PATCH_SIZE / 2;

/// Harris corners described by gradient histograms over a 16×16 patch.
#[derive(Debug, Clone, Copy, Default)]
pub struct HarrisPatch;

impl LocalExtractor for HarrisPatch {
    fn name(&self) -> &'static str {
        "harris-patch"
    }

    fn extract(&self, img: &GrayImage, max_kp: usize) -> LocalFeatureSet {
        extract_local(img, max_kp)
    }
}

struct Gradients {
    w: usize,
    gx: Vec<f32>,
    gy: Vec<f32>,
}

/// Sobel gradients on the [0, 1] intensity scale, replicated borders.
fn sobel(img: &GrayImage) -> Gradients {
    let (w, h) = (img.width(), img.height());
    let p = |x: isize, y: isize| -> f32 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        img.get(x, y) as f32 / 255.0
    };
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let a = p(xi - 1, yi - 1);
            let b = p(xi, yi - 1);
            let c = p(xi + 1, yi - 1);
            let d = p(xi - 1, yi);
            let f = p(xi + 1, yi);
            let g = p(xi - 1, yi + 1);
            let hh = p(xi, yi + 1);
            let i = p(xi + 1, yi + 1);
            gx[y * w + x] = ((c + 2.0 * f + i) - (a + 2.0 * d + g)) / 8.0;
            gy[y * w + x] = ((g + 2.0 * hh + i) - (a + 2.0 * b + c)) / 8.0;
        }
    }
    Gradients { w, gx, gy }
}

/// Separable [1 4 6 4 1]/16 blur with replicated borders.
fn blur5(src: &[f32], w: usize, h: usize) -> Vec<f32> {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, &kv) in K.iter().enumerate() {
                let xx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                s += kv * src[y * w + xx];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, &kv) in K.iter().enumerate() {
                let yy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                s += kv * tmp[yy * w + x];
            }
            out[y * w + x] = s;
        }
    }
    out
}

fn response_from(grad: &Gradients, h: usize) -> Vec<f32> {
    let w = grad.w;
    let xx: Vec<f32> = grad.gx.iter().map(|g| g * g).collect();
    let yy: Vec<f32> = grad.gy.iter().map(|g| g * g).collect();
    let xy: Vec<f32> = grad.gx.iter().zip(&grad.gy).map(|(a, b)| a * b).collect();
    let (sxx, syy, sxy) = (blur5(&xx, w, h), blur5(&yy, w, h), blur5(&xy, w, h));
    (0..w * h)
        .map(|i| {
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let tr = sxx[i] + syy[i];
            det - HARRIS_K * tr * tr
        })
        .collect()
}

/// Row-major Harris corner response.
pub fn harris_response(img: &GrayImage) -> Vec<f32> {
    if img.is_empty() {
        return Vec::new();
    }
    response_from(&sobel(img), img.height())
}

/// Detects up to `max_kp` corners (strongest first) and describes them.
pub fn extract_local(img: &GrayImage, max_kp: usize) -> LocalFeatureSet {
    let (w, h) = (img.width(), img.height());
    if w < 2 * BORDER + 1 || h < 2 * BORDER + 1 || max_kp == 0 {
        return LocalFeatureSet::empty(LOCAL_DIM);
    }
    let grad = sobel(img);
    let r = response_from(&grad, h);

    let mut cands: Vec<(f32, usize, usize)> = Vec::new();
    for y in BORDER..=h - BORDER {
        for x in BORDER..=w - BORDER {
            let v = r[y * w + x];
            if v <= MIN_RESPONSE || !is_local_max(&r, w, h, x, y) {
                continue;
            }
            cands.push((v, x, y));
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    cands.truncate(max_kp);

    let mag: Vec<f32> = grad.gx.iter().zip(&grad.gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let ang: Vec<f32> = grad.gx.iter().zip(&grad.gy).map(|(a, b)| b.atan2(*a)).collect();

    let mut keypoints = Vec::with_capacity(cands.len());
    let mut desc = Vec::with_capacity(cands.len() * LOCAL_DIM);
    for &(score, x, y) in &cands {
        keypoints.push(Keypoint {
            x: x as f32,
            y: y as f32,
            score,
        });
        describe(&mag, &ang, w, h, x, y, &mut desc);
    }
    LocalFeatureSet::new(keypoints, desc, LOCAL_DIM).expect("consistent lengths")
}

/// 3×3 non-maximum suppression; equal neighbours earlier in raster order win.
fn is_local_max(r: &[f32], w: usize, h: usize, x: usize, y: usize) -> bool {
    let v = r[y * w + x];
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let n = r[ny as usize * w + nx as usize];
            let earlier = dy < 0 || (dy == 0 && dx < 0);
            if n > v || (earlier && n == v) {
                return false;
            }
        }
    }
    true
}

/// Appends the descriptor of the patch with top-left corner at
/// `(x − 8, y − 8)`. Gradient orientation ignores bias and the final
/// normalization removes gain.
fn describe(mag: &[f32], ang: &[f32], w: usize, h: usize, x: usize, y: usize, out: &mut Vec<f32>) {
    let mut d = [0f32; LOCAL_DIM];
    let half = (PATCH_SIZE / 2) as isize;
    let sigma2 = 2.0 * (PATCH_SIZE as f32 / 2.0).powi(2);
    let cell = (PATCH_SIZE / CELLS) as f32;
    for py in 0..PATCH_SIZE {
        let iy = y as isize - half + py as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for px in 0..PATCH_SIZE {
            let ix = x as isize - half + px as isize;
            if ix < 0 || ix >= w as isize {
                continue;
            }
            let i = iy as usize * w + ix as usize;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let (ox, oy) = (px as f32 - half as f32 + 0.5, py as f32 - half as f32 + 0.5);
            let m = m * (-(ox * ox + oy * oy) / sigma2).exp();

            let o = (ang[i] + PI) / (2.0 * PI) * BINS as f32 - 0.5;
            let o0 = o.floor();
            let of = o - o0;
            let o0 = (o0 as i32).rem_euclid(BINS as i32) as usize;
            let o1 = (o0 + 1) % BINS;

            let cx = (px as f32 + 0.5) / cell - 0.5;
            let cy = (py as f32 + 0.5) / cell - 0.5;
            let (cx0, cy0) = (cx.floor(), cy.floor());
            let (fx, fy) = (cx - cx0, cy - cy0);
            for (dyc, wy) in [(0, 1.0 - fy), (1, fy)] {
                let cyi = cy0 as i32 + dyc;
                if !(0..CELLS as i32).contains(&cyi) || wy == 0.0 {
                    continue;
                }
                for (dxc, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let cxi = cx0 as i32 + dxc;
                    if !(0..CELLS as i32).contains(&cxi) || wx == 0.0 {
                        continue;
                    }
                    let base = (cyi as usize * CELLS + cxi as usize) * BINS;
                    let wv = m * wx * wy;
                    d[base + o0] += wv * (1.0 - of);
                    d[base + o1] += wv * of;
                }
            }
        }
    }
    normalize_clamped(&mut d, 0.2);
    out.extend_from_slice(&d);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize, sq: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| if (x / sq + y / sq) % 2 == 0 { 40 } else { 210 })
    }

    #[test]
    fn checkerboard_corners_on_intersections() {
        let sq = 12;
        let img = checker(120, 96, sq);
        let f = extract_local(&img, 500);
        assert!(f.len() > 20, "{}", f.len());
        for k in &f.keypoints {
            // intersections sit between pixels sq·i − 1 and sq·i
            let near = |c: f32| {
                let t = (c + 0.5) / sq as f32;
                ((t - t.round()) * sq as f32).abs() <= 1.0
            };
            assert!(near(k.x) && near(k.y), "{k:?}");
        }
    }

    #[test]
    fn response_matches_direct_oracle() {
        // direct structure-tensor evaluation at an interior pixel
        let img = GrayImage::from_fn(40, 40, |x, y| ((x * 13 + y * 29 + x * y) % 251) as u8);
        let r = harris_response(&img);
        let p = |x: i32, y: i32| img.get(x as usize, y as usize) as f64 / 255.0;
        let k1 = [1.0, 4.0, 6.0, 4.0, 1.0];
        let (cx, cy) = (20i32, 17i32);
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (j, wy) in k1.iter().enumerate() {
            for (i, wx) in k1.iter().enumerate() {
                let (x, y) = (cx + i as i32 - 2, cy + j as i32 - 2);
                let gx = (p(x + 1, y - 1) + 2.0 * p(x + 1, y) + p(x + 1, y + 1)
                    - p(x - 1, y - 1)
                    - 2.0 * p(x - 1, y)
                    - p(x - 1, y + 1))
                    / 8.0;
                let gy = (p(x - 1, y + 1) + 2.0 * p(x, y + 1) + p(x + 1, y + 1)
                    - p(x - 1, y - 1)
                    - 2.0 * p(x, y - 1)
                    - p(x + 1, y - 1))
                    / 8.0;
                let wgt = wx * wy / 256.0;
                sxx += wgt * gx * gx;
                syy += wgt * gy * gy;
                sxy += wgt * gx * gy;
            }
        }
        let expect = sxx * syy - sxy * sxy - 0.04 * (sxx + syy).powi(2);
        let got = r[(cy * 40 + cx) as usize] as f64;
        assert!((got - expect).abs() < 1e-6 * (1.0 + expect.abs()), "{got} {expect}");
    }

    #[test]
    fn limits_and_degenerate_inputs() {
        let img = checker(120, 96, 12);
        assert!(extract_local(&img, 5).len() == 5);
        assert!(extract_local(&img, 0).is_empty());
        assert!(extract_local(&GrayImage::filled(64, 64, 100), 50).is_empty());
        assert!(extract_local(&GrayImage::new(10, 10), 50).is_empty());
        let f = extract_local(&img, 50);
        assert!(f.keypoints.windows(2).all(|w| w[0].score >= w[1].score));
        for i in 0..f.len() {
            let n: f32 = f.descriptor(i).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn descriptor_invariant_to_gain_and_bias() {
        let img = GrayImage::from_fn(64, 64, |x, y| ((x * 5 + y * 11 + (x * y) / 7) % 90) as u8);
        let bright = GrayImage::from_fn(64, 64, |x, y| img.get(x, y) * 2 + 20);
        let a = extract_local(&img, 30);
        let b = extract_local(&bright, 30);
        assert_eq!(a.len(), b.len());
        for i in 0..a.len() {
            assert_eq!(a.keypoints[i].x, b.keypoints[i].x);
            let dot: f32 = a.descriptor(i).iter().zip(b.descriptor(i)).map(|(p, q)| p * q).sum();
            assert!(dot > 0.999, "{dot}");
        }
    }
}
