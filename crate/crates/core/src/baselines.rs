//! Static window pooling, used both as preprocessing and as a fixed-budget baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{flatten_baseline, CompressedSequence};
use crate::grid_io::{FrameGridPair, GridShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Equal-weight 2x2 averaging at stride 2; other configurations are rejected.
    Bilinear,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub mode: PoolMode,
}

impl PoolSpec {
    /// 2x2 bilinear pooling at stride 2 (28x28 -> 14x14).
    pub fn bilinear2() -> Self {
        Self {
            kernel: (2, 2),
            stride: (2, 2),
            mode: PoolMode::Bilinear,
        }
    }

    pub fn mean(kernel: usize, stride: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            mode: PoolMode::Mean,
        }
    }

    /// Output grid shape for an input of `shape`.
    pub fn output_shape(&self, shape: GridShape) -> Result<GridShape> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::InvalidPool("kernel and stride must be positive".into()));
        }
        if self.mode == PoolMode::Bilinear && (self.kernel != (2, 2) || self.stride != (2, 2)) {
            return Err(Error::InvalidPool(
                "bilinear mode is only defined for kernel 2, stride 2; use mean mode".into(),
            ));
        }
        let out = |n: usize, k: usize, s: usize, axis: &str| {
            if n < k || !(n - k).is_multiple_of(s) {
                Err(Error::InvalidPool(format!(
                    "{axis} {n} not divisible by kernel {k} / stride {s}"
                )))
            } else {
                Ok((n - k) / s + 1)
            }
        };
        Ok(GridShape::new(
            shape.frames,
            out(shape.rows, kh, sh, "rows")?,
            out(shape.cols, kw, sw, "cols")?,
        ))
    }
}

fn pool_tensor(data: &[f32], shape: GridShape, d: usize, spec: &PoolSpec, out_shape: GridShape) -> Vec<f32> {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let n = (kh * kw) as f64;
    let mut out = Vec::with_capacity(out_shape.patches() * d);
    let mut acc = vec![0.0f64; d];
    for f in 0..shape.frames {
        for oy in 0..out_shape.rows {
            for ox in 0..out_shape.cols {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for y in oy * sh..oy * sh + kh {
                    for x in ox * sw..ox * sw + kw {
                        let at = ((f * shape.rows + y) * shape.cols + x) * d;
                        acc.iter_mut()
                            .zip(&data[at..at + d])
                            .for_each(|(a, &v)| *a += f64::from(v));
                    }
                }
                out.extend(acc.iter().map(|a| (a / n) as f32));
            }
        }
    }
    out
}

/// Pools the vision and embedding tensors with the same windows.
pub fn pool(grid: &FrameGridPair, spec: &PoolSpec) -> Result<FrameGridPair> {
    let shape = grid.shape();
    let out_shape = spec.output_shape(shape)?;
    let vision = pool_tensor(grid.vision(), shape, grid.d_clip(), spec, out_shape);
    if grid.embedding_is_vision() {
        FrameGridPair::shared(out_shape, grid.d_clip(), vision)
    } else {
        let emb = pool_tensor(grid.embedding(), shape, grid.d_emb(), spec, out_shape);
        FrameGridPair::new(out_shape, grid.d_clip(), vision, grid.d_emb(), emb)
    }
}

/// Pool, then keep every pooled token. The length depends only on the shape.
pub fn static_compress(grid: &FrameGridPair, spec: &PoolSpec) -> Result<CompressedSequence> {
    Ok(flatten_baseline(&pool(grid, spec)?))
}
