//! Contrast-limited adaptive histogram equalization for 8-bit images.
//!
//! Follows the OpenCV formulation: per-tile histograms clipped at
//! `clip_limit · tile_area / 256` with uniform redistribution of the excess,
//! tile LUTs blended bilinearly. Images whose size is not a multiple of the
//! tile grid are extended with reflect-101 borders for the LUT computation.

use crate::io::GrayImage;

const BINS: usize = 256;

fn reflect101(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * n - 2;
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// CLAHE with a `tiles × tiles` grid. A constant image is returned unchanged.
pub fn clahe(img: &GrayImage, clip_limit: f64, tiles: usize) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    if img.is_empty() {
        return img.clone();
    }
    let (lo, hi) = img
        .pixels()
        .iter()
        .fold((u8::MAX, u8::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return img.clone();
    }
    let tiles = tiles.max(1);
    let ext_w = w.div_ceil(tiles) * tiles;
    let ext_h = h.div_ceil(tiles) * tiles;
    let tile_w = ext_w / tiles;
    let tile_h = ext_h / tiles;
    let tile_area = tile_w * tile_h;

    let clip = if clip_limit > 0.0 {
        ((clip_limit * tile_area as f64 / BINS as f64) as i64).max(1)
    } else {
        i64::MAX
    };
    let lut_scale = (BINS - 1) as f32 / tile_area as f32;

    let mut luts = vec![0u8; tiles * tiles * BINS];
    let mut hist = [0i64; BINS];
    for ty in 0..tiles {
        for tx in 0..tiles {
            hist.fill(0);
            for y in ty * tile_h..(ty + 1) * tile_h {
                let sy = if y < h { y } else { reflect101(y, h) };
                let row = img.row(sy);
                for x in tx * tile_w..(tx + 1) * tile_w {
                    let sx = if x < w { x } else { reflect101(x, w) };
                    hist[row[sx] as usize] += 1;
                }
            }
            let mut clipped = 0;
            for v in hist.iter_mut() {
                if *v > clip {
                    clipped += *v - clip;
                    *v = clip;
                }
            }
            let batch = clipped / BINS as i64;
            let mut residual = clipped - batch * BINS as i64;
            for v in hist.iter_mut() {
                *v += batch;
            }
            if residual > 0 {
                let step = (BINS as i64 / residual).max(1) as usize;
                let mut i = 0;
                while i < BINS && residual > 0 {
                    hist[i] += 1;
                    i += step;
                    residual -= 1;
                }
            }
            let lut = &mut luts[(ty * tiles + tx) * BINS..][..BINS];
            let mut sum = 0i64;
            for (l, &v) in lut.iter_mut().zip(hist.iter()) {
                sum += v;
                *l = saturate_u8(sum as f32 * lut_scale);
            }
        }
    }

    let axis = |n: usize, tile: usize| -> Vec<(usize, usize, f32)> {
        let inv = 1.0f32 / tile as f32;
        (0..n)
            .map(|i| {
                let f = i as f32 * inv - 0.5;
                let t1 = f.floor();
                let a = f - t1;
                let t1 = t1 as i64;
                let lo = t1.max(0) as usize;
                let hi = ((t1 + 1) as usize).min(tiles - 1);
                (lo, hi, a)
            })
            .collect()
    };
    let xs = axis(w, tile_w);
    let ys = axis(h, tile_h);

    let mut out = GrayImage::new(w, h);
    for (y, &(ty1, ty2, ya)) in ys.iter().enumerate() {
        let ya1 = 1.0 - ya;
        let row = img.row(y);
        let plane1 = &luts[ty1 * tiles * BINS..];
        let plane2 = &luts[ty2 * tiles * BINS..];
        for (x, &(tx1, tx2, xa)) in xs.iter().enumerate() {
            let xa1 = 1.0 - xa;
            let v = row[x] as usize;
            let (i1, i2) = (tx1 * BINS + v, tx2 * BINS + v);
            let res = (plane1[i1] as f32 * xa1 + plane1[i2] as f32 * xa) * ya1
                + (plane2[i1] as f32 * xa1 + plane2[i2] as f32 * xa) * ya;
            out.set(x, y, saturate_u8(res));
        }
    }
    out
}

#[inline]
fn saturate_u8(v: f32) -> u8 {
    v.round_ties_even().clamp(0.0, 255.0) as u8
}
