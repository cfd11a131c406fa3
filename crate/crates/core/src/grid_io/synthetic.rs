//! Deterministic synthetic feature grids.
//!
//! A [`SceneSpec`] lays out every patch row as a sequence of segments. Each
//! segment fills `len` consecutive columns in one of three modes:
//!
//! * `constant`: one random vector repeated, so neighbours inside the
//!   segment have similarity exactly 1.
//! * `jittered`: a random unit direction `u` plus a perturbation of norm at
//!   most `r = sqrt(eps / 2)`. Each vector is then within angle `asin(r)` of
//!   `u`, so any two vectors of the segment have cosine similarity at least
//!   `cos(2 asin r) = 1 - 2 r^2 = 1 - eps` (before the final f32 rounding).
//! * `random`: independent isotropic Gaussian vectors; expected pairwise
//!   cosine is 0 and concentrates around 0 as `d_clip` grows.
//!
//! When a `constant` or `jittered` segment follows another segment in the
//! same row (and `d_clip >= 2`), its base vector is built to be exactly
//! orthogonal to the preceding vector `p`, even after rounding to f32:
//! coordinates are paired `(0,1), (2,3), ...` and each pair gets
//! `c * (p[j], -p[i])` with `c = +-2^e`. Power-of-two factors keep every
//! product exact, so each pair contributes exactly zero to the dot product.
//! A constant segment after a constant segment therefore meets it with
//! similarity exactly 0.
//!
//! Embeddings are either the vision vectors themselves (`d_emb` omitted) or
//! a fixed random linear projection of them, drawn once per scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FrameGridPair, GridShape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SegmentMode {
    Constant,
    Jittered { eps: f64 },
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub len: usize,
    #[serde(flatten)]
    pub mode: SegmentMode,
}

impl Segment {
    pub fn new(len: usize, mode: SegmentMode) -> Self {
        Self { len, mode }
    }
}

/// Segment layout for one or more identical-layout rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    #[serde(default = "one")]
    pub repeat: usize,
    pub segments: Vec<Segment>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub frames: usize,
    pub cols: usize,
    pub d_clip: usize,
    /// `None` stores the embedding as the vision tensor itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_emb: Option<usize>,
    pub rows: Vec<RowSpec>,
}

impl SceneSpec {
    /// Every row is one constant segment spanning all columns.
    pub fn constant_rows(frames: usize, rows: usize, cols: usize, d_clip: usize, d_emb: Option<usize>) -> Self {
        Self {
            frames,
            cols,
            d_clip,
            d_emb,
            rows: vec![RowSpec {
                repeat: rows,
                segments: vec![Segment::new(cols, SegmentMode::Constant)],
            }],
        }
    }

    /// Every patch is its own constant segment, orthogonal to its left neighbour.
    pub fn orthogonal(frames: usize, rows: usize, cols: usize, d_clip: usize, d_emb: Option<usize>) -> Self {
        Self {
            frames,
            cols,
            d_clip,
            d_emb,
            rows: vec![RowSpec {
                repeat: rows,
                segments: vec![Segment::new(1, SegmentMode::Constant); cols],
            }],
        }
    }

    pub fn row_count(&self) -> usize {
        self.rows.iter().map(|r| r.repeat).sum()
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.frames, self.row_count(), self.cols)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidScene("frames must be at least 1".into()));
        }
        if self.cols == 0 || self.row_count() == 0 {
            return Err(Error::InvalidScene("scene has no patches".into()));
        }
        if self.d_clip == 0 || self.d_emb == Some(0) {
            return Err(Error::InvalidScene("feature dimensions must be positive".into()));
        }
        for (i, row) in self.rows.iter().enumerate() {
            let total: usize = row.segments.iter().map(|s| s.len).sum();
            if total != self.cols {
                return Err(Error::InvalidScene(format!(
                    "row spec {i}: segment lengths sum to {total}, expected w={}",
                    self.cols
                )));
            }
            for seg in &row.segments {
                if seg.len == 0 {
                    return Err(Error::InvalidScene(format!("row spec {i}: empty segment")));
                }
                if let SegmentMode::Jittered { eps } = seg.mode {
                    if !(0.0..=1.0).contains(&eps) {
                        return Err(Error::InvalidScene(format!(
                            "row spec {i}: jitter eps {eps} outside [0, 1]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Perturbation radius giving pairwise cosine `>= 1 - eps` inside a jittered segment.
pub fn jitter_radius(eps: f64) -> f64 {
    (eps / 2.0).sqrt()
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Random vector exactly orthogonal to `prev` in f32 arithmetic.
///
/// `prev` must already hold f32-representable values. The result is scaled
/// by a power of two to a norm in `[0.5, 2)`, which keeps it exact.
fn exact_orthogonal(rng: &mut ChaCha8Rng, prev: &[f64]) -> Option<Vec<f64>> {
    let mut v = vec![0.0; prev.len()];
    for (pair, out) in prev.chunks_exact(2).zip(v.chunks_exact_mut(2)) {
        let exp = rng.random_range(-2i32..=2);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let c = sign * 2f64.powi(exp);
        out[0] = c * pair[1];
        out[1] = -c * pair[0];
    }
    let n = norm(&v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    let rescale = 2f64.powi(-(n.log2().round() as i32));
    v.iter_mut().for_each(|x| *x *= rescale);
    Some(v)
}

/// Base vector for a constant or jittered segment.
fn base_direction(rng: &mut ChaCha8Rng, d: usize, prev: Option<&[f64]>) -> Vec<f64> {
    if let Some(p) = prev.filter(|_| d >= 2) {
        if let Some(v) = exact_orthogonal(rng, p) {
            return v;
        }
    }
    unit(gaussian(rng, d))
}

fn round_f32(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| f64::from(x as f32)).collect()
}

pub fn generate_synthetic(spec: &SceneSpec, seed: u64) -> Result<FrameGridPair> {
    spec.validate()?;
    let shape = spec.shape();
    let d = spec.d_clip;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let projection: Option<Vec<f64>> = spec.d_emb.map(|de| {
        let scale = 1.0 / (d as f64).sqrt();
        gaussian(&mut rng, de * d).into_iter().map(|x| x * scale).collect()
    });

    let mut vision = Vec::with_capacity(shape.patches() * d);
    for _ in 0..spec.frames {
        for row in &spec.rows {
            for _ in 0..row.repeat {
                let mut prev: Option<Vec<f64>> = None;
                for seg in &row.segments {
                    match seg.mode {
                        SegmentMode::Constant => {
                            let v = round_f32(base_direction(&mut rng, d, prev.as_deref()));
                            for _ in 0..seg.len {
                                vision.extend(v.iter().map(|&x| x as f32));
                            }
                            prev = Some(v);
                        }
                        SegmentMode::Jittered { eps } => {
                            let u = unit(base_direction(&mut rng, d, prev.as_deref()));
                            let radius = jitter_radius(eps);
                            let mut last = u.clone();
                            for _ in 0..seg.len {
                                let dir = unit(gaussian(&mut rng, d));
                                let r = radius * rng.random::<f64>();
                                last = round_f32(u.iter().zip(&dir).map(|(a, b)| a + r * b).collect());
                                vision.extend(last.iter().map(|&x| x as f32));
                            }
                            prev = Some(last);
                        }
                        SegmentMode::Random => {
                            for _ in 0..seg.len {
                                let v = round_f32(gaussian(&mut rng, d));
                                vision.extend(v.iter().map(|&x| x as f32));
                                prev = Some(v);
                            }
                        }
                    }
                }
            }
        }
    }

    match (spec.d_emb, projection) {
        (Some(de), Some(p)) => {
            let embedding = vision
                .chunks_exact(d)
                .flat_map(|x| {
                    p.chunks_exact(d).map(move |prow| {
                        prow.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum::<f64>() as f32
                    })
                })
                .collect::<Vec<_>>();
            debug_assert_eq!(embedding.len(), shape.patches() * de);
            FrameGridPair::new(shape, d, vision, de, embedding)
        }
        _ => FrameGridPair::shared(shape, d, vision),
    }
}
