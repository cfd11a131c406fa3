//! End-to-end compression: optional pooling, similarity, grouping, fusion.

use crate::analysis::{compute_stats, CompressionStats};
use crate::baselines::{pool, PoolSpec};
use crate::error::Result;
use crate::fusion::{fuse, CompressedSequence};
use crate::grid_io::FrameGridPair;
use crate::grouping::{build_groups, GroupMap, Threshold};
use crate::similarity::{adjacent_cosine, SimilarityGrid};

/// Everything produced by one compression run.
#[derive(Debug, Clone)]
pub struct Compressed {
    /// The grid grouping ran on (pooled when pooling was requested).
    pub grid: FrameGridPair,
    pub similarities: SimilarityGrid,
    pub groups: GroupMap,
    pub sequence: CompressedSequence,
    pub stats: CompressionStats,
}

pub fn compress(
    grid: &FrameGridPair,
    threshold: Threshold,
    pooling: Option<&PoolSpec>,
) -> Result<Compressed> {
    let grid = match pooling {
        Some(spec) => pool(grid, spec)?,
        None => grid.clone(),
    };
    let similarities = adjacent_cosine(&grid);
    let groups = build_groups(&similarities, threshold);
    let sequence = fuse(&grid, &groups)?;
    let stats = compute_stats(&sequence, grid.shape())?.with_threshold(Some(threshold));
    Ok(Compressed {
        grid,
        similarities,
        groups,
        sequence,
        stats,
    })
}
