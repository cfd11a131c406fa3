//! Row-wise dynamic grouping.
//!
//! Column 0 of every row opens a group. Column `k >= 1` joins the group of
//! column `k - 1` when their similarity is strictly greater than the
//! threshold, otherwise it opens a new group. A similarity equal to the
//! threshold therefore splits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_io::GridShape;
use crate::similarity::SimilarityGrid;

/// Thresholds the merge rule was trained with; also the default sweep.
pub const TRAINING_THRESHOLDS: [f32; 5] = [0.4, 0.45, 0.5, 0.55, 0.6];

/// Merge threshold `S_th`, in `(-1, 1]`.
///
/// Stored as `f32` so that it compares against `f32` similarities without
/// widening: a similarity of `0.6f32` ties with threshold `0.6`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f32")]
pub struct Threshold(f32);

impl Threshold {
    pub fn new(value: f64) -> Result<Self> {
        let v = value as f32;
        if value.is_finite() && v > -1.0 && v <= 1.0 {
            Ok(Self(v))
        } else {
            Err(Error::InvalidThreshold(value))
        }
    }

    pub fn value(self) -> f32 {
        self.0
    }

    /// Whether a column with this similarity to its left neighbour joins that neighbour's group.
    #[inline]
    pub fn joins(self, similarity: f32) -> bool {
        similarity > self.0
    }
}

// Never NaN, so equality is total.
impl Eq for Threshold {}

impl Default for Threshold {
    fn default() -> Self {
        Self(0.6)
    }
}

impl TryFrom<f64> for Threshold {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Threshold> for f32 {
    fn from(t: Threshold) -> f32 {
        t.0
    }
}

impl std::fmt::Display for Threshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for Threshold {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("not a number: {s:?}")))?;
        Self::new(v)
    }
}

/// Per-row partition of columns into contiguous groups.
///
/// Each row is stored as its ascending list of group-start columns, always
/// beginning with 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMap {
    shape: GridShape,
    threshold: Option<Threshold>,
    starts: Vec<Vec<u32>>,
}

impl GroupMap {
    /// Every column its own group.
    pub fn identity(shape: GridShape) -> Self {
        let row: Vec<u32> = (0..shape.cols as u32).collect();
        Self {
            shape,
            threshold: None,
            starts: vec![row; shape.row_count()],
        }
    }

    /// Builds a map from explicit per-row start lists, validating each row.
    pub fn from_starts(
        shape: GridShape,
        threshold: Option<Threshold>,
        starts: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if starts.len() != shape.row_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows of group starts for grid {shape}",
                starts.len()
            )));
        }
        for (i, row) in starts.iter().enumerate() {
            let ok = row.first() == Some(&0)
                && row.windows(2).all(|p| p[0] < p[1])
                && row.last().is_some_and(|&s| (s as usize) < shape.cols);
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: group starts {row:?} are not a partition of 0..{}",
                    shape.cols
                )));
            }
        }
        Ok(Self {
            shape,
            threshold,
            starts,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// `None` for maps not produced by thresholding, such as the identity map.
    pub fn threshold(&self) -> Option<Threshold> {
        self.threshold
    }

    pub fn starts(&self, frame: usize, row: usize) -> &[u32] {
        &self.starts[frame * self.shape.rows + row]
    }

    /// Start lists for every row in raster order.
    pub fn all_starts(&self) -> &[Vec<u32>] {
        &self.starts
    }

    /// Half-open column ranges of the groups in one row.
    pub fn spans(&self, frame: usize, row: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let starts = self.starts(frame, row);
        let w = self.shape.cols;
        starts.iter().enumerate().map(move |(i, &s)| {
            let end = starts.get(i + 1).map_or(w, |&e| e as usize);
            (s as usize, end)
        })
    }

    /// Whether column `col` opens a group.
    pub fn is_start(&self, frame: usize, row: usize, col: usize) -> bool {
        self.starts(frame, row).binary_search(&(col as u32)).is_ok()
    }

    /// Total number of groups, i.e. fused tokens.
    pub fn total_groups(&self) -> usize {
        self.starts.iter().map(Vec::len).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GroupMapDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GroupMapDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// JSON form: `groups[frame][row]` is that row's start-column list.
#[derive(Debug, Serialize, Deserialize)]
struct GroupMapDoc {
    threshold: Option<Threshold>,
    frames: usize,
    rows: usize,
    cols: usize,
    groups: Vec<Vec<Vec<u32>>>,
}

impl From<&GroupMap> for GroupMapDoc {
    fn from(map: &GroupMap) -> Self {
        let s = map.shape;
        Self {
            threshold: map.threshold,
            frames: s.frames,
            rows: s.rows,
            cols: s.cols,
            groups: map.starts.chunks(s.rows.max(1)).map(<[_]>::to_vec).collect(),
        }
    }
}

impl TryFrom<GroupMapDoc> for GroupMap {
    type Error = Error;
    fn try_from(doc: GroupMapDoc) -> Result<Self> {
        let shape = GridShape::new(doc.frames, doc.rows, doc.cols);
        if doc.groups.len() != doc.frames || doc.groups.iter().any(|f| f.len() != doc.rows) {
            return Err(Error::ShapeMismatch(format!(
                "group document does not match grid {shape}"
            )));
        }
        GroupMap::from_starts(shape, doc.threshold, doc.groups.into_iter().flatten().collect())
    }
}

/// Group starts for one row of similarities (`w - 1` values).
pub fn row_starts(sims: &[f32], threshold: Threshold) -> Vec<u32> {
    let mut starts = Vec::with_capacity(sims.len() + 1);
    starts.push(0);
    for (k, &s) in sims.iter().enumerate() {
        if !threshold.joins(s) {
            starts.push(k as u32 + 1);
        }
    }
    starts
}

pub fn build_groups(sims: &SimilarityGrid, threshold: Threshold) -> GroupMap {
    let shape = sims.shape();
    let width = sims.width();
    let starts = if width == 0 {
        vec![vec![0]; shape.row_count()]
    } else {
        sims.as_slice()
            .par_chunks(width)
            .map(|row| row_starts(row, threshold))
            .collect()
    };
    GroupMap {
        shape,
        threshold: Some(threshold),
        starts,
    }
}

/// Group count `h'` per row, shape `(t, h)` flattened frame-major.
pub fn group_counts(map: &GroupMap) -> Vec<usize> {
    map.starts.iter().map(Vec::len).collect()
}
