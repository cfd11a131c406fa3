//! DTG v1 feature-grid files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! | offset | field   | notes                                   |
//! |--------|---------|-----------------------------------------|
//! | 0      | magic   | ASCII `DTGR`                            |
//! | 4      | version | `1`                                     |
//! | 8      | flags   | bit 0: embedding tensor equals vision   |
//! | 12     | t       | frames                                  |
//! | 16     | h       | patch rows                              |
//! | 20     | w       | patch columns                           |
//! | 24     | d_clip  | vision feature width                    |
//! | 28     | d_emb   | embedding width (== d_clip if bit 0)    |
//! | 32     | payload | f32 LE, vision `(t,h,w,d_clip)` row-major, then embedding `(t,h,w,d_emb)` unless bit 0 is set |

use std::path::Path;

use super::{FrameGridPair, GridShape};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const MAGIC: [u8; 4] = *b"DTGR";
pub const VERSION: u32 = 1;
pub const FLAG_EMBEDDING_IS_VISION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridFileHeader {
    pub version: u32,
    pub flags: u32,
    pub frames: u32,
    pub rows: u32,
    pub cols: u32,
    pub d_clip: u32,
    pub d_emb: u32,
}

impl GridFileHeader {
    pub fn for_grid(grid: &FrameGridPair) -> Result<Self> {
        let narrow = |name: &str, v: usize| {
            u32::try_from(v).map_err(|_| Error::InvalidShape(format!("{name}={v} exceeds u32")))
        };
        Ok(Self {
            version: VERSION,
            flags: if grid.embedding_is_vision() {
                FLAG_EMBEDDING_IS_VISION
            } else {
                0
            },
            frames: narrow("t", grid.frames())?,
            rows: narrow("h", grid.rows())?,
            cols: narrow("w", grid.cols())?,
            d_clip: narrow("d_clip", grid.d_clip())?,
            d_emb: narrow("d_emb", grid.d_emb())?,
        })
    }

    pub fn embedding_is_vision(&self) -> bool {
        self.flags & FLAG_EMBEDDING_IS_VISION != 0
    }

    /// Payload length in bytes implied by the header, `None` on overflow.
    pub fn payload_len(&self) -> Option<u64> {
        let patches = u64::from(self.frames)
            .checked_mul(u64::from(self.rows))?
            .checked_mul(u64::from(self.cols))?;
        let dims = if self.embedding_is_vision() {
            u64::from(self.d_clip)
        } else {
            u64::from(self.d_clip) + u64::from(self.d_emb)
        };
        patches.checked_mul(dims)?.checked_mul(4)
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&MAGIC);
        let fields = [
            self.version,
            self.flags,
            self.frames,
            self.rows,
            self.cols,
            self.d_clip,
            self.d_emb,
        ];
        for (i, f) in fields.iter().enumerate() {
            out[4 + 4 * i..8 + 4 * i].copy_from_slice(&f.to_le_bytes());
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedHeader {
                offset: bytes.len(),
                reason: format!("file is {} bytes, header needs {HEADER_LEN}", bytes.len()),
            });
        }
        if bytes[..4] != MAGIC {
            return Err(Error::MalformedHeader {
                offset: 0,
                reason: format!("bad magic {:?}", &bytes[..4]),
            });
        }
        let field = |i: usize| read_u32(bytes, 4 + 4 * i);
        let header = Self {
            version: field(0),
            flags: field(1),
            frames: field(2),
            rows: field(3),
            cols: field(4),
            d_clip: field(5),
            d_emb: field(6),
        };
        if header.version != VERSION {
            return Err(Error::MalformedHeader {
                offset: 4,
                reason: format!("unsupported version {}", header.version),
            });
        }
        if header.flags & !FLAG_EMBEDDING_IS_VISION != 0 {
            return Err(Error::MalformedHeader {
                offset: 8,
                reason: format!("unknown flag bits {:#x}", header.flags),
            });
        }
        let dims = [
            ("t", header.frames),
            ("h", header.rows),
            ("w", header.cols),
            ("d_clip", header.d_clip),
            ("d_emb", header.d_emb),
        ];
        for (i, (name, v)) in dims.iter().enumerate() {
            if *v == 0 {
                return Err(Error::MalformedHeader {
                    offset: 12 + 4 * i,
                    reason: format!("{name} must be at least 1"),
                });
            }
        }
        if header.embedding_is_vision() && header.d_emb != header.d_clip {
            return Err(Error::MalformedHeader {
                offset: 28,
                reason: format!(
                    "shared-embedding flag set but d_emb={} != d_clip={}",
                    header.d_emb, header.d_clip
                ),
            });
        }
        Ok(header)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn decode_floats(
    bytes: &[u8],
    tensor: &'static str,
    base_offset: usize,
) -> Result<Vec<f32>> {
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(index, c)| {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite {
                    tensor,
                    index,
                    offset: base_offset + index * 4,
                })
            }
        })
        .collect()
}

impl FrameGridPair {
    /// Serializes to DTG v1 bytes. Fails on non-finite values.
    pub fn to_dtg_bytes(&self) -> Result<Vec<u8>> {
        self.check_finite()?;
        let header = GridFileHeader::for_grid(self)?;
        let mut out = Vec::with_capacity(HEADER_LEN + header.payload_len().unwrap_or(0) as usize);
        out.extend_from_slice(&header.to_bytes());
        out.extend(self.vision().iter().flat_map(|v| v.to_le_bytes()));
        if !self.embedding_is_vision() {
            out.extend(self.embedding().iter().flat_map(|v| v.to_le_bytes()));
        }
        Ok(out)
    }

    pub fn from_dtg_bytes(bytes: &[u8]) -> Result<Self> {
        let header = GridFileHeader::parse(bytes)?;
        let actual = (bytes.len() - HEADER_LEN) as u64;
        let expected = header.payload_len().ok_or_else(|| Error::MalformedHeader {
            offset: 12,
            reason: "declared shape overflows".into(),
        })?;
        if expected != actual {
            return Err(Error::PayloadMismatch { expected, actual });
        }
        let shape = GridShape::new(
            header.frames as usize,
            header.rows as usize,
            header.cols as usize,
        );
        let d_clip = header.d_clip as usize;
        let d_emb = header.d_emb as usize;
        let vision_bytes = shape.patches() * d_clip * 4;
        let payload = &bytes[HEADER_LEN..];
        let vision = decode_floats(&payload[..vision_bytes], "vision", HEADER_LEN)?;
        let embedding = if header.embedding_is_vision() {
            None
        } else {
            Some(decode_floats(
                &payload[vision_bytes..],
                "embedding",
                HEADER_LEN + vision_bytes,
            )?)
        };
        FrameGridPair::from_parts(shape, d_clip, vision, d_emb, embedding)
    }
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<FrameGridPair> {
    let bytes = std::fs::read(path)?;
    FrameGridPair::from_dtg_bytes(&bytes)
}

pub fn save_grid(grid: &FrameGridPair, path: impl AsRef<Path>) -> Result<()> {
    let bytes = grid.to_dtg_bytes()?;
    write_atomic(path.as_ref(), &bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(shared: bool) -> FrameGridPair {
        let shape = GridShape::new(1, 2, 2);
        let vision: Vec<f32> = (0..12).map(|i| i as f32 * 0.5).collect();
        if shared {
            FrameGridPair::shared(shape, 3, vision).unwrap()
        } else {
            let emb: Vec<f32> = (0..16).map(|i| -(i as f32)).collect();
            FrameGridPair::new(shape, 3, vision, 4, emb).unwrap()
        }
    }

    #[test]
    fn header_arithmetic_matches_payload() {
        let bytes = sample(false).to_dtg_bytes().unwrap();
        // 1*2*2*(3+4)*4 = 112 payload bytes
        assert_eq!(bytes.len(), HEADER_LEN + 112);
        assert_eq!(&bytes[..4], b"DTGR");
        let grid = FrameGridPair::from_dtg_bytes(&bytes).unwrap();
        assert_eq!(grid.shape(), GridShape::new(1, 2, 2));
        assert_eq!((grid.d_clip(), grid.d_emb()), (3, 4));
    }

    #[test]
    fn header_bytes_are_little_endian() {
        let bytes = sample(true).to_dtg_bytes().unwrap();
        assert_eq!(
            &bytes[..HEADER_LEN],
            &[
                b'D', b'T', b'G', b'R', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0,
                0, 3, 0, 0, 0, 3, 0, 0, 0
            ]
        );
        assert_eq!(bytes.len(), HEADER_LEN + 48);
    }

    #[test]
    fn short_payload_is_rejected() {
        let mut bytes = sample(false).to_dtg_bytes().unwrap();
        bytes.truncate(bytes.len() - 4);
        match FrameGridPair::from_dtg_bytes(&bytes).unwrap_err() {
            Error::PayloadMismatch { expected, actual } => {
                assert_eq!((expected, actual), (112, 108));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample(true).to_dtg_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            FrameGridPair::from_dtg_bytes(&bytes),
            Err(Error::MalformedHeader { offset: 0, .. })
        ));
        let mut bytes = sample(true).to_dtg_bytes().unwrap();
        bytes[4] = 2;
        assert!(matches!(
            FrameGridPair::from_dtg_bytes(&bytes),
            Err(Error::MalformedHeader { offset: 4, .. })
        ));
        assert!(matches!(
            FrameGridPair::from_dtg_bytes(b"DTG"),
            Err(Error::MalformedHeader { offset: 3, .. })
        ));
    }

    #[test]
    fn zero_frames_in_header_rejected() {
        let mut bytes = sample(true).to_dtg_bytes().unwrap();
        bytes[12..16].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            FrameGridPair::from_dtg_bytes(&bytes),
            Err(Error::MalformedHeader { offset: 12, .. })
        ));
    }

    #[test]
    fn nan_in_payload_names_offset() {
        let mut bytes = sample(false).to_dtg_bytes().unwrap();
        let at = HEADER_LEN + 48 + 8;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match FrameGridPair::from_dtg_bytes(&bytes).unwrap_err() {
            Error::NonFinite { tensor, index, offset } => {
                assert_eq!((tensor, index, offset), ("embedding", 2, at));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn nan_grid_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dtg");
        let grid = FrameGridPair::shared(GridShape::new(1, 1, 2), 1, vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(save_grid(&grid, &path), Err(Error::NonFinite { .. })));
        assert!(!path.exists());
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.dtg");
        let grid = sample(false);
        save_grid(&grid, &path).unwrap();
        assert_eq!(load_grid(&path).unwrap(), grid);
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            t in 1usize..3, h in 1usize..4, w in 1usize..5, dc in 1usize..5, de in 1usize..5,
            shared in any::<bool>(), seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let shape = GridShape::new(t, h, w);
            let mut draw = |n: usize| -> Vec<f32> {
                (0..n).map(|_| f32::from_bits(rng.random::<u32>() & 0xBFFF_FFFF)).collect()
            };
            let vision = draw(shape.patches() * dc);
            let grid = if shared {
                FrameGridPair::shared(shape, dc, vision).unwrap()
            } else {
                let emb = draw(shape.patches() * de);
                FrameGridPair::new(shape, dc, vision, de, emb).unwrap()
            };
            let back = FrameGridPair::from_dtg_bytes(&grid.to_dtg_bytes().unwrap()).unwrap();
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.vision()), bits(grid.vision()));
            prop_assert_eq!(bits(back.embedding()), bits(grid.embedding()));
            prop_assert_eq!(back.embedding_is_vision(), shared);
        }
    }
}
