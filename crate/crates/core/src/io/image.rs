use std::path::Path;

use super::IoError;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, IoError> {
        if pixels.len() != width * height {
            return Err(IoError::InvalidImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Sub-image `[x0, x0+w) × [y0, y0+h)`; must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> GrayImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage {
            width: w,
            height: h,
            pixels,
        }
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        if self.is_empty() {
            return GrayImage::new(width, height);
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let coord = |d: usize, s: f64, n: usize| {
            let f = ((d as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = f.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, f - i0 as f64)
        };
        let xs: Vec<_> = (0..width).map(|x| coord(x, sx, self.width)).collect();
        GrayImage::from_fn(width, height, |x, y| {
            let (y0, y1, fy) = coord(y, sy, self.height);
            let (x0, x1, fx) = xs[x];
            let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
            let bot = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
            (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8
        })
    }

    /// Box-filter downsampling: each output pixel averages the source area it
    /// covers (fractional overlap weighted). Falls back to bilinear when
    /// upsampling along either axis.
    pub fn resize_area(&self, width: usize, height: usize) -> GrayImage {
        if width > self.width || height > self.height || self.is_empty() {
            return self.resize_bilinear(width, height);
        }
        let spans = |n_src: usize, n_dst: usize| -> Vec<Vec<(usize, f64)>> {
            let s = n_src as f64 / n_dst as f64;
            (0..n_dst)
                .map(|d| {
                    let (a, b) = (d as f64 * s, (d + 1) as f64 * s);
                    let mut out = Vec::new();
                    let mut i = a.floor() as usize;
                    while (i as f64) < b && i < n_src {
                        let w = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                        if w > 0.0 {
                            out.push((i, w / s));
                        }
                        i += 1;
                    }
                    out
                })
                .collect()
        };
        let xs = spans(self.width, width);
        let ys = spans(self.height, height);
        GrayImage::from_fn(width, height, |x, y| {
            let mut acc = 0.0;
            for &(sy, wy) in &ys[y] {
                let row = self.row(sy);
                for &(sx, wx) in &xs[x] {
                    acc += row[sx] as f64 * wx * wy;
                }
            }
            acc.round().clamp(0.0, 255.0) as u8
        })
    }
}

/// Luma with 0.299/0.587/0.114 weights, rounded.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round().clamp(0.0, 255.0) as u8
}

pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, IoError> {
    let bad = |m: &str| IoError::InvalidImage(format!("PGM: {m}"));
    if !bytes.starts_with(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(bad("missing separator after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let data = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| bad("truncated pixel data"))?;
    let pixels = if maxval == 255 {
        data.to_vec()
    } else {
        data.iter()
            .map(|&v| ((v as f64) * 255.0 / maxval as f64).round().min(255.0) as u8)
            .collect()
    };
    GrayImage::from_raw(width, height, pixels)
}

pub fn save_pgm(path: &Path, img: &GrayImage) -> Result<(), IoError> {
    super::write_file(path, &write_pgm(img))
}

/// Loads a PGM (P5) or PNG; color PNGs are converted with luma weights.
pub fn load_image(path: &Path) -> Result<GrayImage, IoError> {
    let bytes = super::read_file(path)?;
    if bytes.starts_with(b"P5") {
        return read_pgm(&bytes);
    }
    let dynimg = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| IoError::InvalidImage(format!("{}: {e}", path.display())))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let pixels = match dynimg {
        image::DynamicImage::ImageLuma8(g) => g.into_raw(),
        image::DynamicImage::ImageLuma16(_) | image::DynamicImage::ImageLumaA8(_) | image::DynamicImage::ImageLumaA16(_) => {
            dynimg.to_luma8().into_raw()
        }
        other => other.to_rgb8().pixels().map(|p| luma(p[0], p[1], p[2])).collect(),
    };
    GrayImage::from_raw(w, h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = read_pgm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.get(2, 1), 6);
        assert!(read_pgm(b"P5\n3 2\n255\n\x01").is_err());
        assert!(read_pgm(b"P2\n1 1\n255\n0").is_err());
    }

    #[test]
    fn luma_weights() {
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(255, 0, 0), 76);
        assert_eq!(luma(0, 255, 0), 150);
        assert_eq!(luma(0, 0, 255), 29);
    }

    #[test]
    fn png_color_and_gray() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let rgb = image::RgbImage::from_fn(2, 1, |x, _| if x == 0 { image::Rgb([255, 0, 0]) } else { image::Rgb([0, 0, 255]) });
        rgb.save(&p).unwrap();
        let g = load_image(&p).unwrap();
        assert_eq!(g.pixels(), &[76, 29]);

        let p2 = dir.path().join("g.png");
        image::GrayImage::from_raw(2, 2, vec![0, 50, 100, 200]).unwrap().save(&p2).unwrap();
        assert_eq!(load_image(&p2).unwrap().pixels(), &[0, 50, 100, 200]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 30 + y) as u8);
        assert_eq!(img.resize_bilinear(7, 5), img);
        let c = GrayImage::filled(33, 17, 90);
        assert!(c.resize_area(8, 4).pixels().iter().all(|&v| v == 90));
        assert!(c.resize_bilinear(50, 20).pixels().iter().all(|&v| v == 90));
    }

    #[test]
    fn area_downsample_averages_blocks() {
        let img = GrayImage::from_fn(4, 2, |x, _| if x < 2 { 0 } else { 200 });
        assert_eq!(img.resize_area(2, 1).pixels(), &[0, 200]);
        let img = GrayImage::from_fn(3, 1, |x, _| [0, 90, 180][x]);
        // Output pixel 0 covers source [0, 1.5): (0·1 + 90·0.5) / 1.5 = 30.
        assert_eq!(img.resize_area(2, 1).pixels(), &[30, 150]);
    }

    proptest! {
        #[test]
        fn pgm_roundtrip(w in 0usize..20, h in 0usize..20, seed in any::<u64>()) {
            let img = GrayImage::from_fn(w, h, |x, y| ((x as u64 * 31 + y as u64 * 17 + seed) % 256) as u8);
            prop_assert_eq!(read_pgm(&write_pgm(&img)).unwrap(), img);
        }
    }
}
