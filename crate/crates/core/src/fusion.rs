//! Group-mean fusion and the compressed token sequence.
//!
//! Each group's embedding vectors are averaged into one token. A row marker
//! follows the last token of every row, and rows and frames are
//! concatenated in raster order.
//!
//! Binary layout of a serialized sequence (DTCS v1, little-endian):
//!
//! | offset | field                                 |
//! |--------|---------------------------------------|
//! | 0      | magic `DTCS`                          |
//! | 4      | u32 version = 1                       |
//! | 8      | u32 flags = 0                         |
//! | 12     | u32 t, h, w, d_emb (16 bytes)         |
//! | 28     | u32 fused token count `l`             |
//! | 32     | u32 entry count `l + t*h`             |
//! | 36     | `l * d_emb` f32 fused payload         |
//! | ...    | entry table, 20 bytes per entry       |
//!
//! Entry record: `u32 kind` (0 fused, 1 row marker), `u32 frame`, `u32 row`,
//! `u32 start`, `u32 end`. Fused entries carry the half-open column span
//! `[start, end)`; markers carry [`MARKER_SENTINEL`] in both span fields.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_io::{FrameGridPair, GridShape};
use crate::grouping::GroupMap;

pub const SEQ_MAGIC: [u8; 4] = *b"DTCS";
pub const SEQ_VERSION: u32 = 1;
pub const SEQ_HEADER_LEN: usize = 36;
pub const ENTRY_LEN: usize = 20;
/// Span value written for row markers in the entry table.
pub const MARKER_SENTINEL: u32 = u32::MAX;

/// Where a fused token came from: columns `[start, end)` of one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub frame: u32,
    pub row: u32,
    pub start: u32,
    pub end: u32,
}

impl Span {
    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entry {
    /// Index into the fused payload plus its provenance.
    Fused { index: u32, span: Span },
    RowMarker { frame: u32, row: u32 },
}

/// Fused tokens interleaved with row markers.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSequence {
    shape: GridShape,
    d_emb: usize,
    fused: Vec<f32>,
    entries: Vec<Entry>,
}

impl CompressedSequence {
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Total sequence length, fused tokens plus markers.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fused token count `l`.
    pub fn fused_count(&self) -> usize {
        self.fused.len() / self.d_emb
    }

    pub fn marker_count(&self) -> usize {
        self.entries.len() - self.fused_count()
    }

    /// Fused payload as a flat `(l, d_emb)` matrix.
    pub fn fused_data(&self) -> &[f32] {
        &self.fused
    }

    pub fn fused_token(&self, index: usize) -> &[f32] {
        &self.fused[index * self.d_emb..(index + 1) * self.d_emb]
    }

    /// Fused tokens with their spans, in sequence order.
    pub fn fused_tokens(&self) -> impl Iterator<Item = (Span, &[f32])> + '_ {
        self.entries.iter().filter_map(|e| match *e {
            Entry::Fused { index, span } => Some((span, self.fused_token(index as usize))),
            Entry::RowMarker { .. } => None,
        })
    }

    /// Positions of the row markers within the sequence.
    pub fn marker_positions(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e, Entry::RowMarker { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks raster ordering, one marker per row, and that spans tile every row.
    pub fn validate(&self) -> Result<()> {
        let s = self.shape;
        let mut entries = self.entries.iter();
        let mut next_index = 0u32;
        for frame in 0..s.frames as u32 {
            for row in 0..s.rows as u32 {
                let mut col = 0u32;
                loop {
                    match entries.next() {
                        Some(Entry::Fused { index, span }) => {
                            if *index != next_index
                                || span.frame != frame
                                || span.row != row
                                || span.start != col
                                || span.end <= span.start
                            {
                                return Err(Error::ShapeMismatch(format!(
                                    "entry {span:?} out of raster order at frame {frame} row {row} col {col}"
                                )));
                            }
                            next_index += 1;
                            col = span.end;
                        }
                        Some(Entry::RowMarker { frame: f, row: r }) => {
                            if *f != frame || *r != row || col as usize != s.cols {
                                return Err(Error::ShapeMismatch(format!(
                                    "row marker ({f}, {r}) at frame {frame} row {row} after column {col} of {}",
                                    s.cols
                                )));
                            }
                            break;
                        }
                        None => {
                            return Err(Error::ShapeMismatch(format!(
                                "sequence ends inside frame {frame} row {row}"
                            )))
                        }
                    }
                }
            }
        }
        if entries.next().is_some() || next_index as usize != self.fused_count() {
            return Err(Error::ShapeMismatch("trailing sequence entries".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let narrow = |v: usize| {
            u32::try_from(v).map_err(|_| Error::InvalidShape(format!("{v} exceeds u32")))
        };
        let header = [
            SEQ_VERSION,
            0,
            narrow(self.shape.frames)?,
            narrow(self.shape.rows)?,
            narrow(self.shape.cols)?,
            narrow(self.d_emb)?,
            narrow(self.fused_count())?,
            narrow(self.entries.len())?,
        ];
        let mut out = Vec::with_capacity(
            SEQ_HEADER_LEN + self.fused.len() * 4 + self.entries.len() * ENTRY_LEN,
        );
        out.extend_from_slice(&SEQ_MAGIC);
        out.extend(header.iter().flat_map(|v| v.to_le_bytes()));
        out.extend(self.fused.iter().flat_map(|v| v.to_le_bytes()));
        for e in &self.entries {
            let rec = match *e {
                Entry::Fused { span, .. } => [0, span.frame, span.row, span.start, span.end],
                Entry::RowMarker { frame, row } => {
                    [1, frame, row, MARKER_SENTINEL, MARKER_SENTINEL]
                }
            };
            out.extend(rec.iter().flat_map(|v| v.to_le_bytes()));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |offset: usize, reason: String| Error::MalformedHeader { offset, reason };
        if bytes.len() < SEQ_HEADER_LEN {
            return Err(malformed(bytes.len(), "sequence header truncated".into()));
        }
        if bytes[..4] != SEQ_MAGIC {
            return Err(malformed(0, format!("bad magic {:?}", &bytes[..4])));
        }
        let u = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        if u(4) != SEQ_VERSION {
            return Err(malformed(4, format!("unsupported version {}", u(4))));
        }
        let shape = GridShape::new(u(12) as usize, u(16) as usize, u(20) as usize);
        let d_emb = u(24) as usize;
        let fused_count = u(28) as usize;
        let entry_count = u(32) as usize;
        if d_emb == 0 {
            return Err(malformed(24, "d_emb must be at least 1".into()));
        }
        let expected = fused_count as u64 * d_emb as u64 * 4 + entry_count as u64 * ENTRY_LEN as u64;
        let actual = (bytes.len() - SEQ_HEADER_LEN) as u64;
        if expected != actual {
            return Err(Error::PayloadMismatch { expected, actual });
        }
        let payload_end = SEQ_HEADER_LEN + fused_count * d_emb * 4;
        let fused: Vec<f32> = bytes[SEQ_HEADER_LEN..payload_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut entries = Vec::with_capacity(entry_count);
        let mut index = 0u32;
        for (i, rec) in bytes[payload_end..].chunks_exact(ENTRY_LEN).enumerate() {
            let f = |k: usize| u32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            entries.push(match f(0) {
                0 => {
                    let span = Span {
                        frame: f(1),
                        row: f(2),
                        start: f(3),
                        end: f(4),
                    };
                    index += 1;
                    Entry::Fused { index: index - 1, span }
                }
                1 => Entry::RowMarker { frame: f(1), row: f(2) },
                kind => {
                    return Err(malformed(
                        payload_end + i * ENTRY_LEN,
                        format!("unknown entry kind {kind}"),
                    ))
                }
            });
        }
        let seq = Self {
            shape,
            d_emb,
            fused,
            entries,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Count-only JSON summary.
    pub fn summary(&self) -> SequenceSummary {
        SequenceSummary {
            frames: self.shape.frames,
            rows: self.shape.rows,
            cols: self.shape.cols,
            d_emb: self.d_emb,
            fused: self.fused_count(),
            markers: self.marker_count(),
            length: self.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SequenceSummary {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub d_emb: usize,
    pub fused: usize,
    pub markers: usize,
    pub length: usize,
}

/// Averages embedding vectors within each group of `map`.
pub fn fuse(grid: &FrameGridPair, map: &GroupMap) -> Result<CompressedSequence> {
    let shape = grid.shape();
    if map.shape() != shape {
        return Err(Error::ShapeMismatch(format!(
            "group map covers {} but grid is {}",
            map.shape(),
            shape
        )));
    }
    let d = grid.d_emb();

    // Per-frame work in parallel, stitched back in frame order.
    let per_frame: Vec<(Vec<f32>, Vec<Span>)> = (0..shape.frames)
        .into_par_iter()
        .map(|frame| {
            let mut data = Vec::new();
            let mut spans = Vec::new();
            let mut acc = vec![0.0f64; d];
            for row in 0..shape.rows {
                let emb = grid.embedding_row(frame, row);
                for (start, end) in map.spans(frame, row) {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for v in emb[start * d..end * d].chunks_exact(d) {
                        acc.iter_mut().zip(v).for_each(|(a, &x)| *a += f64::from(x));
                    }
                    let n = (end - start) as f64;
                    data.extend(acc.iter().map(|a| (a / n) as f32));
                    spans.push(Span {
                        frame: frame as u32,
                        row: row as u32,
                        start: start as u32,
                        end: end as u32,
                    });
                }
            }
            (data, spans)
        })
        .collect();

    let total: usize = per_frame.iter().map(|(_, s)| s.len()).sum();
    let mut fused = Vec::with_capacity(total * d);
    let mut entries = Vec::with_capacity(total + shape.row_count());
    let mut index = 0u32;
    for (data, spans) in per_frame {
        fused.extend_from_slice(&data);
        let mut spans = spans.into_iter().peekable();
        while let Some(span) = spans.next() {
            entries.push(Entry::Fused { index, span });
            index += 1;
            let row_done = spans.peek().is_none_or(|n| n.row != span.row);
            if row_done {
                entries.push(Entry::RowMarker {
                    frame: span.frame,
                    row: span.row,
                });
            }
        }
    }
    Ok(CompressedSequence {
        shape,
        d_emb: d,
        fused,
        entries,
    })
}

/// The uncompressed sequence: every patch kept, one marker per row.
pub fn flatten_baseline(grid: &FrameGridPair) -> CompressedSequence {
    fuse(grid, &GroupMap::identity(grid.shape())).expect("identity map matches its own grid")
}
