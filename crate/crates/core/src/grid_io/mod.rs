//! Feature-grid containers, the DTG binary format, and the synthetic scene generator.
//!
//! A [`FrameGridPair`] holds two tensors over the same `(t, h, w)` patch grid:
//! the vision-space features used for similarity and the embedding-space
//! tokens that get fused. Both are stored row-major as `(t, h, w, d)`.

mod dtg;
mod synthetic;

pub use dtg::{load_grid, save_grid, GridFileHeader, FLAG_EMBEDDING_IS_VISION, HEADER_LEN, MAGIC, VERSION};
pub use synthetic::{generate_synthetic, jitter_radius, RowSpec, SceneSpec, Segment, SegmentMode};

use crate::error::{Error, Result};

/// Leading `(t, h, w)` shape shared by every tensor derived from one grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct GridShape {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(frames: usize, rows: usize, cols: usize) -> Self {
        Self { frames, rows, cols }
    }

    /// Number of patches, `t * h * w`.
    pub fn patches(&self) -> usize {
        self.frames * self.rows * self.cols
    }

    /// Number of patch rows across all frames, `t * h`.
    pub fn row_count(&self) -> usize {
        self.frames * self.rows
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.frames, self.rows, self.cols)
    }
}

/// Paired vision/embedding grids for a clip of `t` frames.
///
/// When the embedding tensor is not supplied it aliases the vision tensor
/// (`d_emb == d_clip`), which is also what the on-disk flag records.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGridPair {
    shape: GridShape,
    d_clip: usize,
    d_emb: usize,
    vision: Vec<f32>,
    embedding: Option<Vec<f32>>,
}

impl FrameGridPair {
    /// Builds a pair with distinct vision and embedding tensors.
    ///
    /// Only shapes are checked here; finiteness is checked by [`check_finite`](Self::check_finite),
    /// which `load_grid` and `save_grid` both call.
    pub fn new(
        shape: GridShape,
        d_clip: usize,
        vision: Vec<f32>,
        d_emb: usize,
        embedding: Vec<f32>,
    ) -> Result<Self> {
        check_dims(shape, d_clip, d_emb)?;
        check_len("vision", shape, d_clip, vision.len())?;
        check_len("embedding", shape, d_emb, embedding.len())?;
        Ok(Self {
            shape,
            d_clip,
            d_emb,
            vision,
            embedding: Some(embedding),
        })
    }

    /// Builds a pair whose embedding space is the vision space itself.
    pub fn shared(shape: GridShape, dim: usize, vision: Vec<f32>) -> Result<Self> {
        check_dims(shape, dim, dim)?;
        check_len("vision", shape, dim, vision.len())?;
        Ok(Self {
            shape,
            d_clip: dim,
            d_emb: dim,
            vision,
            embedding: None,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn frames(&self) -> usize {
        self.shape.frames
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn d_clip(&self) -> usize {
        self.d_clip
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn embedding_is_vision(&self) -> bool {
        self.embedding.is_none()
    }

    /// Flat `(t, h, w, d_clip)` vision tensor.
    pub fn vision(&self) -> &[f32] {
        &self.vision
    }

    /// Flat `(t, h, w, d_emb)` embedding tensor.
    pub fn embedding(&self) -> &[f32] {
        self.embedding.as_deref().unwrap_or(&self.vision)
    }

    /// Vision vectors of one patch row, `w * d_clip` floats.
    pub fn vision_row(&self, frame: usize, row: usize) -> &[f32] {
        let stride = self.shape.cols * self.d_clip;
        let start = (frame * self.shape.rows + row) * stride;
        &self.vision[start..start + stride]
    }

    /// Embedding vectors of one patch row, `w * d_emb` floats.
    pub fn embedding_row(&self, frame: usize, row: usize) -> &[f32] {
        let stride = self.shape.cols * self.d_emb;
        let start = (frame * self.shape.rows + row) * stride;
        &self.embedding()[start..start + stride]
    }

    pub fn vision_at(&self, frame: usize, row: usize, col: usize) -> &[f32] {
        let d = self.d_clip;
        &self.vision_row(frame, row)[col * d..(col + 1) * d]
    }

    pub fn embedding_at(&self, frame: usize, row: usize, col: usize) -> &[f32] {
        let d = self.d_emb;
        &self.embedding_row(frame, row)[col * d..(col + 1) * d]
    }

    /// Returns the first NaN/Inf, reported with its DTG byte offset.
    pub fn check_finite(&self) -> Result<()> {
        if let Some(index) = self.vision.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "vision",
                index,
                offset: HEADER_LEN + index * 4,
            });
        }
        if let Some(emb) = &self.embedding {
            if let Some(index) = emb.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    tensor: "embedding",
                    index,
                    offset: HEADER_LEN + (self.vision.len() + index) * 4,
                });
            }
        }
        Ok(())
    }

    /// Same grid with every vision vector multiplied by its own factor.
    ///
    /// `factors` has one entry per patch in raster order.
    pub fn scale_vision(&self, factors: &[f32]) -> Result<Self> {
        if factors.len() != self.shape.patches() {
            return Err(Error::ShapeMismatch(format!(
                "{} scale factors for {} patches",
                factors.len(),
                self.shape.patches()
            )));
        }
        let vision: Vec<f32> = self
            .vision
            .chunks_exact(self.d_clip)
            .zip(factors)
            .flat_map(|(v, &s)| v.iter().map(move |x| x * s))
            .collect();
        // The embedding keeps its original values even when it aliased the vision tensor.
        let embedding = self.embedding().to_vec();
        Self::new(self.shape, self.d_clip, vision, self.d_emb, embedding)
    }

    pub(crate) fn from_parts(
        shape: GridShape,
        d_clip: usize,
        vision: Vec<f32>,
        d_emb: usize,
        embedding: Option<Vec<f32>>,
    ) -> Result<Self> {
        match embedding {
            Some(e) => Self::new(shape, d_clip, vision, d_emb, e),
            None => Self::shared(shape, d_clip, vision),
        }
    }
}

fn check_dims(shape: GridShape, d_clip: usize, d_emb: usize) -> Result<()> {
    if shape.frames == 0 {
        return Err(Error::InvalidShape("frame count t must be at least 1".into()));
    }
    if shape.rows == 0 || shape.cols == 0 {
        return Err(Error::InvalidShape(format!("empty patch grid {shape}")));
    }
    if d_clip == 0 || d_emb == 0 {
        return Err(Error::InvalidShape(format!(
            "feature dimensions must be positive (d_clip={d_clip}, d_emb={d_emb})"
        )));
    }
    Ok(())
}

fn check_len(name: &str, shape: GridShape, dim: usize, len: usize) -> Result<()> {
    let expected = shape
        .patches()
        .checked_mul(dim)
        .ok_or_else(|| Error::InvalidShape(format!("{name} tensor size overflows")))?;
    if expected != len {
        return Err(Error::ShapeMismatch(format!(
            "{name} tensor has {len} values, shape {shape} x {dim} needs {expected}"
        )));
    }
    Ok(())
}
