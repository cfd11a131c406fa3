//! Cosine similarity between horizontally adjacent patches.

use rayon::prelude::*;

use crate::grid_io::{FrameGridPair, GridShape};

/// Similarities of each patch to its right neighbour, shape `(t, h, w - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrid {
    shape: GridShape,
    data: Vec<f32>,
}

impl SimilarityGrid {
    /// Wraps precomputed similarities; `data` must hold `t * h * (w - 1)` values.
    pub fn from_raw(shape: GridShape, data: Vec<f32>) -> Option<Self> {
        (shape.cols >= 1 && data.len() == shape.row_count() * (shape.cols - 1))
            .then_some(Self { shape, data })
    }

    /// Shape of the patch grid the similarities were computed on.
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.cols - 1
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Entry `k` is the similarity between columns `k` and `k + 1`.
    pub fn row(&self, frame: usize, row: usize) -> &[f32] {
        let width = self.width();
        let start = (frame * self.shape.rows + row) * width;
        &self.data[start..start + width]
    }

    /// Rows in raster order (frame-major).
    pub fn rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        let width = self.width();
        (0..self.shape.row_count()).map(move |i| &self.data[i * width..(i + 1) * width])
    }
}

/// Cosine similarity with f64 accumulation. Zero-norm inputs give 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    finish(dot, na, nb)
}

fn finish(dot: f64, na: f64, nb: f64) -> f32 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) as f32
}

fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

/// Fills `out[k]` with the similarity of columns `k` and `k + 1` of one row.
///
/// Each squared norm is computed once, so a row costs `O(w * d)`.
pub fn row_similarities(row: &[f32], dim: usize, out: &mut [f32]) {
    let mut vectors = row.chunks_exact(dim);
    let Some(mut prev) = vectors.next() else {
        return;
    };
    let mut prev_norm = sq_norm(prev);
    for (slot, cur) in out.iter_mut().zip(vectors) {
        let cur_norm = sq_norm(cur);
        let dot: f64 = prev
            .iter()
            .zip(cur)
            .map(|(&x, &y)| f64::from(x) * f64::from(y))
            .sum();
        *slot = finish(dot, prev_norm, cur_norm);
        prev = cur;
        prev_norm = cur_norm;
    }
}

/// Computes adjacent similarities on the vision tensor. Rows run in parallel.
pub fn adjacent_cosine(grid: &FrameGridPair) -> SimilarityGrid {
    let shape = grid.shape();
    let width = shape.cols - 1;
    let mut data = vec![0.0f32; shape.row_count() * width];
    if width > 0 {
        let row_len = shape.cols * grid.d_clip();
        data.par_chunks_mut(width)
            .zip(grid.vision().par_chunks(row_len))
            .for_each(|(out, row)| row_similarities(row, grid.d_clip(), out));
    }
    SimilarityGrid { shape, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_row(vectors: &[&[f32]]) -> FrameGridPair {
        let d = vectors[0].len();
        let data: Vec<f32> = vectors.iter().flat_map(|v| v.iter().copied()).collect();
        FrameGridPair::shared(GridShape::new(1, 1, vectors.len()), d, data).unwrap()
    }

    /// Textbook cosine, one pair at a time.
    fn oracle(grid: &FrameGridPair) -> Vec<f64> {
        let s = grid.shape();
        let mut out = Vec::new();
        for f in 0..s.frames {
            for r in 0..s.rows {
                for c in 1..s.cols {
                    let a = grid.vision_at(f, r, c - 1);
                    let b = grid.vision_at(f, r, c);
                    let dot: f64 = (0..a.len()).map(|i| a[i] as f64 * b[i] as f64).sum();
                    let na = (0..a.len()).map(|i| (a[i] as f64).powi(2)).sum::<f64>().sqrt();
                    let nb = (0..b.len()).map(|i| (b[i] as f64).powi(2)).sum::<f64>().sqrt();
                    out.push(if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) });
                }
            }
        }
        out
    }

    #[test]
    fn worked_row() {
        let g = one_row(&[&[1.0, 0.0], &[0.8, 0.6], &[0.0, 1.0], &[0.0, 1.0]]);
        let s = adjacent_cosine(&g);
        let expected = [0.8f32, 0.6, 1.0];
        for (got, want) in s.row(0, 0).iter().zip(expected) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        for (got, want) in s.as_slice().iter().zip(oracle(&g)) {
            assert!((*got as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_vectors_give_one() {
        let v: &[f32] = &[0.3, -1.2, 4.0];
        let s = adjacent_cosine(&one_row(&[v, v, v, v]));
        assert!(s.as_slice().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn orthogonal_vectors_give_zero() {
        let s = adjacent_cosine(&one_row(&[
            &[1.0, 0.0, 0.0],
            &[0.0, 2.0, 0.0],
            &[0.0, 0.0, 3.0],
            &[5.0, 0.0, 0.0],
        ]));
        assert_eq!(s.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_vector_gives_zero() {
        let s = adjacent_cosine(&one_row(&[&[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0]]));
        assert_eq!(s.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn single_column_has_empty_width() {
        let g = FrameGridPair::shared(GridShape::new(2, 3, 1), 2, vec![1.0; 12]).unwrap();
        let s = adjacent_cosine(&g);
        assert_eq!(s.width(), 0);
        assert!(s.as_slice().is_empty());
        assert!(s.row(1, 2).is_empty());
    }

    fn grid_strategy() -> impl Strategy<Value = FrameGridPair> {
        (1usize..=4, 1usize..=14, 1usize..=14, 1usize..=64).prop_flat_map(|(t, h, w, d)| {
            proptest::collection::vec(-10.0f32..10.0, t * h * w * d).prop_map(move |v| {
                FrameGridPair::shared(GridShape::new(t, h, w), d, v).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_oracle(grid in grid_strategy()) {
            let s = adjacent_cosine(&grid);
            prop_assert_eq!(s.as_slice().len(), grid.shape().row_count() * (grid.cols() - 1));
            for (got, want) in s.as_slice().iter().zip(oracle(&grid)) {
                prop_assert!((*got as f64 - want).abs() < 1e-6);
                prop_assert!((-1.0..=1.0).contains(got));
            }
        }

        #[test]
        fn positive_scaling_is_invariant(
            grid in grid_strategy(),
            factors in proptest::collection::vec(0.01f32..100.0, 14 * 14 * 4),
        ) {
            let f = &factors[..grid.shape().patches()];
            let scaled = grid.scale_vision(f).unwrap();
            let a = adjacent_cosine(&grid);
            let b = adjacent_cosine(&scaled);
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn reversed_row_reverses_similarities(
            d in 1usize..16,
            vals in proptest::collection::vec(-5.0f32..5.0, 16 * 16),
            w in 1usize..16,
        ) {
            let row = &vals[..w * d];
            let rev: Vec<f32> = row.chunks_exact(d).rev().flatten().copied().collect();
            let fwd = adjacent_cosine(&FrameGridPair::shared(GridShape::new(1, 1, w), d, row.to_vec()).unwrap());
            let bwd = adjacent_cosine(&FrameGridPair::shared(GridShape::new(1, 1, w), d, rev).unwrap());
            let mut back = bwd.as_slice().to_vec();
            back.reverse();
            for (x, y) in fwd.as_slice().iter().zip(&back) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
