//! Token accounting: compression statistics, threshold sweeps, and frame budgets.
//!
//! The kept-token ratio counts row markers on both sides:
//! `(fused + markers) / (t*h*w + markers)`. With that convention the
//! uncompressed 96-frame, 14x14 clip is `96 * (196 + 14) = 20160` tokens.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{CompressedSequence, Entry};
use crate::grid_io::{FrameGridPair, GridShape};
use crate::grouping::{build_groups, group_counts, GroupMap, Threshold};
use crate::similarity::adjacent_cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    /// `t * h * w`
    pub original: usize,
    /// Fused token count `l`.
    pub fused: usize,
    /// `t * h`
    pub markers: usize,
    pub ratio: f64,
    /// Group count per row -> number of rows with that count.
    pub histogram: BTreeMap<usize, usize>,
    pub threshold: Option<Threshold>,
}

impl CompressionStats {
    fn from_row_counts(shape: GridShape, counts: impl IntoIterator<Item = usize>, threshold: Option<Threshold>) -> Self {
        let mut histogram = BTreeMap::new();
        let mut fused = 0;
        for c in counts {
            *histogram.entry(c).or_insert(0) += 1;
            fused += c;
        }
        let original = shape.patches();
        let markers = shape.row_count();
        Self {
            original,
            fused,
            markers,
            ratio: (fused + markers) as f64 / (original + markers) as f64,
            histogram,
            threshold,
        }
    }

    /// Sequence length after compression, `fused + markers`.
    pub fn total(&self) -> usize {
        self.fused + self.markers
    }

    /// Uncompressed sequence length, `original + markers`.
    pub fn baseline_total(&self) -> usize {
        self.original + self.markers
    }

    pub fn with_threshold(mut self, threshold: Option<Threshold>) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Statistics for a compressed sequence checked against the original grid shape.
pub fn compute_stats(seq: &CompressedSequence, original: GridShape) -> Result<CompressionStats> {
    if seq.shape() != original {
        return Err(Error::ShapeMismatch(format!(
            "sequence was built from {} but original is {original}",
            seq.shape()
        )));
    }
    seq.validate()?;
    let mut counts = Vec::with_capacity(original.row_count());
    let mut current = 0;
    for e in seq.entries() {
        match e {
            Entry::Fused { .. } => current += 1,
            Entry::RowMarker { .. } => {
                counts.push(current);
                current = 0;
            }
        }
    }
    Ok(CompressionStats::from_row_counts(original, counts, None))
}

/// Statistics read directly off a group map, without fusing.
pub fn stats_from_groups(map: &GroupMap) -> CompressionStats {
    CompressionStats::from_row_counts(map.shape(), group_counts(map), map.threshold())
}

/// Runs grouping at each threshold, reusing one similarity pass.
pub fn threshold_sweep(grid: &FrameGridPair, thresholds: &[Threshold]) -> Result<Vec<CompressionStats>> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("empty threshold list".into()));
    }
    if thresholds.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::InvalidArgument(
            "thresholds must be strictly ascending".into(),
        ));
    }
    let sims = adjacent_cosine(grid);
    Ok(thresholds
        .par_iter()
        .map(|&t| stats_from_groups(&build_groups(&sims, t)))
        .collect())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    threshold: f32,
    ratio: f64,
    fused: usize,
    total: usize,
}

/// CSV with columns `threshold,ratio,fused,total`.
pub fn sweep_csv(stats: &[CompressionStats]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in stats {
        w.serialize(SweepRow {
            threshold: s.threshold.map_or(f32::NAN, Threshold::value),
            ratio: s.ratio,
            fused: s.fused,
            total: s.total(),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Token count for a clip at a given frame count and kept-token ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub frames: usize,
    pub ratio: f64,
    /// `round(ratio * h * w + h)`
    pub per_frame: u64,
    pub total_tokens: u64,
}

/// One point per (ratio, frame count), ratios outermost.
pub fn budget_curve(rows: usize, cols: usize, frame_counts: &[usize], ratios: &[f64]) -> Result<Vec<BudgetPoint>> {
    if frame_counts.is_empty() || ratios.is_empty() {
        return Err(Error::InvalidArgument("frame and ratio lists must be non-empty".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("grid must have at least one patch".into()));
    }
    if let Some(f) = frame_counts.iter().find(|&&f| f == 0) {
        return Err(Error::InvalidArgument(format!("frame count {f} must be positive")));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::InvalidArgument(format!("ratio {r} outside (0, 1]")));
    }
    Ok(ratios
        .iter()
        .flat_map(|&ratio| {
            let per_frame = (ratio * (rows * cols) as f64 + rows as f64).round() as u64;
            frame_counts.iter().map(move |&frames| BudgetPoint {
                frames,
                ratio,
                per_frame,
                total_tokens: frames as u64 * per_frame,
            })
        })
        .collect())
}

/// CSV with columns `frames,ratio,per_frame,total_tokens`.
pub fn budget_csv(points: &[BudgetPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
