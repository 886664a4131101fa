use nalgebra::DMatrix;

use super::{LocalFeatureSet, Match, MatchSet};

#[inline]
fn dist_from_dot(d: f32) -> f32 {
    (2.0 - 2.0 * d).max(0.0).sqrt()
}

/// Running best and second-best dot product.
#[derive(Clone, Copy)]
struct BestTwo {
    idx: usize,
    best: f32,
    second: Option<f32>,
}

impl BestTwo {
    const EMPTY: BestTwo = BestTwo {
        idx: usize::MAX,
        best: f32::NEG_INFINITY,
        second: None,
    };

    #[inline]
    fn push(&mut self, j: usize, d: f32) {
        if d > self.best {
            if self.idx != usize::MAX {
                self.second = Some(self.best);
            }
            self.idx = j;
            self.best = d;
        } else if self.second.is_none_or(|s| d > s) {
            self.second = Some(d);
        }
    }
}

fn passes_ratio(best: f32, second: Option<f32>, ratio: f32) -> bool {
    match second {
        None => true,
        Some(s) => dist_from_dot(best) < ratio * dist_from_dot(s),
    }
}

/// Mutual nearest neighbours under L2 distance with Lowe's ratio test
/// applied from both sides. The test is skipped on a side that offers only
/// one candidate. Matches are ordered by query index.
pub fn match_features(query: &LocalFeatureSet, map: &LocalFeatureSet, ratio: f32) -> MatchSet {
    let (na, nb) = (query.len(), map.len());
    if na == 0 || nb == 0 || query.dim() != map.dim() {
        return MatchSet::default();
    }
    // column-major na × nb similarity matrix
    let a = DMatrix::from_row_slice(na, query.dim(), query.descriptors());
    let b = DMatrix::from_row_slice(nb, map.dim(), map.descriptors());
    let dots = &a * b.transpose();
    let mut rows = vec![BestTwo::EMPTY; na];
    let mut cols = vec![BestTwo::EMPTY; nb];
    for (j, col) in dots.column_iter().enumerate() {
        let c = &mut cols[j];
        for (i, &d) in col.iter().enumerate() {
            rows[i].push(j, d);
            c.push(i, d);
        }
    }
    let rows: Vec<_> = rows.iter().map(|r| (r.idx, r.best, r.second)).collect();
    let cols: Vec<_> = cols.iter().map(|c| (c.idx, c.best, c.second)).collect();

    let mut pairs = Vec::new();
    for (i, &(j, d, second)) in rows.iter().enumerate() {
        let (back, _, col_second) = cols[j];
        if back != i || !passes_ratio(d, second, ratio) || !passes_ratio(d, col_second, ratio) {
            continue;
        }
        pairs.push(Match {
            query_idx: i,
            map_idx: j,
            score: (1.0 - dist_from_dot(d) / 2.0).clamp(0.0, 1.0),
        });
    }
    MatchSet { pairs }
}
