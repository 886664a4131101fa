use crate::io::PointCloud;

/// Global histogram equalization of raw intensities onto `[0, 255]`.
///
/// Each point gets `round(255 · rank / (N − 1))`, where tied values share
/// their average rank. A single point maps to 0.
pub fn equalize_map_intensity(cloud: &PointCloud) -> PointCloud {
    let n = cloud.len();
    let mut out = cloud.clone();
    if n == 0 {
        return out;
    }
    if n == 1 {
        out.points[0].intensity_eq = Some(0);
        return out;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cloud.points[a].intensity_raw.total_cmp(&cloud.points[b].intensity_raw));
    let scale = 255.0 / (n - 1) as f64;
    let mut start = 0;
    while start < n {
        let value = cloud.points[order[start]].intensity_raw;
        let mut end = start + 1;
        while end < n && cloud.points[order[end]].intensity_raw == value {
            end += 1;
        }
        let rank = (start + end - 1) as f64 / 2.0;
        let eq = (rank * scale).round() as u8;
        for &i in &order[start..end] {
            out.points[i].intensity_eq = Some(eq);
        }
        start = end;
    }
    out
}

/// Min-max linear scaling of raw intensities onto `[0, 255]`; used when
/// equalization is disabled. A constant cloud maps to 0.
pub fn linear_intensity_scaling(cloud: &PointCloud) -> PointCloud {
    let mut out = cloud.clone();
    let (lo, hi) = cloud
        .points
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.intensity_raw), hi.max(p.intensity_raw))
        });
    let span = (hi - lo) as f64;
    for p in &mut out.points {
        let v = if span > 0.0 {
            (255.0 * (p.intensity_raw - lo) as f64 / span).round()
        } else {
            0.0
        };
        p.intensity_eq = Some(v.clamp(0.0, 255.0) as u8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(raw: &[f32]) -> PointCloud {
        PointCloud::from_samples(raw.iter().map(|&r| ([0.0, 0.0, 0.0], r))).unwrap()
    }

    fn eq(c: &PointCloud) -> Vec<u8> {
        c.points.iter().map(|p| p.intensity_eq.unwrap()).collect()
    }

    #[test]
    fn three_values() {
        assert_eq!(eq(&equalize_map_intensity(&cloud(&[0.1, 0.5, 0.9]))), vec![0, 128, 255]);
        assert_eq!(eq(&equalize_map_intensity(&cloud(&[0.9, 0.1, 0.5]))), vec![255, 0, 128]);
    }

    #[test]
    fn degenerate_sizes_and_ties() {
        assert!(equalize_map_intensity(&PointCloud::default()).is_empty());
        assert_eq!(eq(&equalize_map_intensity(&cloud(&[3.0]))), vec![0]);
        let all = eq(&equalize_map_intensity(&cloud(&[2.0; 7])));
        assert!(all.iter().all(|&v| v == all[0]));
        // ties share the average rank: ranks (0.5, 0.5, 2) of 3 → (64, 64, 255)
        assert_eq!(eq(&equalize_map_intensity(&cloud(&[1.0, 1.0, 5.0]))), vec![64, 64, 255]);
    }

    #[test]
    fn linear_scaling() {
        assert_eq!(eq(&linear_intensity_scaling(&cloud(&[1.0, 2.0, 3.0]))), vec![0, 128, 255]);
        assert_eq!(eq(&linear_intensity_scaling(&cloud(&[4.0, 4.0]))), vec![0, 0]);
    }

    proptest! {
        #[test]
        fn preserves_order(raw in prop::collection::vec(0f32..100.0, 1..300)) {
            let out = equalize_map_intensity(&cloud(&raw));
            for i in 0..raw.len() {
                for j in 0..raw.len() {
                    if raw[i] < raw[j] {
                        prop_assert!(out.points[i].intensity_eq <= out.points[j].intensity_eq);
                    }
                }
            }
        }
    }
}
