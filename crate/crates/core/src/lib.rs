//! Dynamic visual-token compression for video feature grids.
//!
//! Each row of a frame's patch grid is split into runs of neighbouring
//! patches whose vision-space cosine similarity exceeds a threshold. Every
//! run is averaged into a single embedding-space token, and a row marker is
//! appended after each row so the row structure survives the variable
//! token count.
//!
//! ```
//! use dyntok::{generate_synthetic, compress, PoolSpec, SceneSpec, Threshold};
//!
//! let scene = SceneSpec::constant_rows(1, 28, 28, 16, None);
//! let grid = generate_synthetic(&scene, 7).unwrap();
//! let out = compress(&grid, Threshold::new(0.6).unwrap(), Some(&PoolSpec::bilinear2())).unwrap();
//! // 14 pooled rows, one fused token and one marker each
//! assert_eq!(out.sequence.len(), 28);
//! ```

pub mod analysis;
pub mod baselines;
pub mod cli;
pub mod error;
mod fsutil;
pub mod fusion;
pub mod grid_io;
pub mod grouping;
pub mod pipeline;
pub mod render;
pub mod similarity;

pub use analysis::{budget_curve, compute_stats, threshold_sweep, BudgetPoint, CompressionStats};
pub use baselines::{pool, static_compress, PoolMode, PoolSpec};
pub use error::{Error, Result};
pub use fusion::{flatten_baseline, fuse, CompressedSequence, Entry, Span};
pub use grid_io::{generate_synthetic, load_grid, save_grid, FrameGridPair, GridShape, SceneSpec};
pub use grouping::{build_groups, group_counts, GroupMap, Threshold, TRAINING_THRESHOLDS};
pub use pipeline::{compress, Compressed};
pub use render::{render_mask, render_sweep, MaskImage};
pub use similarity::{adjacent_cosine, SimilarityGrid};
