//! Merge-mask rendering.
//!
//! A patch is drawn gray when it merged into its left neighbour's group and
//! white when it starts a group. Masks are written as binary PGM (P5);
//! overlays on a caller-supplied raster are written as binary PPM (P6).

use crate::error::{Error, Result};
use crate::grouping::{GroupMap, Threshold};

pub const GRAY: u8 = 128;
pub const WHITE: u8 = 255;

/// 8-bit raster, grayscale (`channels == 1`) or RGB (`channels == 3`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Pixels per patch side; 0 for rasters that did not come from a patch grid.
    pub scale: usize,
    pub pixels: Vec<u8>,
}

impl MaskImage {
    fn blank(width: usize, height: usize, scale: usize) -> Self {
        Self {
            width,
            height,
            channels: 1,
            scale,
            pixels: vec![WHITE; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let at = (y * self.width + x) * self.channels;
        &self.pixels[at..at + self.channels]
    }

    fn fill_block(&mut self, x0: usize, y0: usize, size: usize, value: u8) {
        for y in y0..y0 + size {
            let at = y * self.width + x0;
            self.pixels[at..at + size].fill(value);
        }
    }

    /// Number of `GRAY` pixels in a grayscale image.
    pub fn gray_pixels(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == GRAY).count()
    }

    /// Binary PNM bytes: P5 for grayscale, P6 for RGB.
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parses a binary P5/P6 image with maxval 255.
    pub fn from_pnm(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidArgument(format!("bad PNM image: {reason}"));
        let mut pos = 0;
        let mut token = || -> Option<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let channels = match token().as_deref() {
            Some("P5") => 1,
            Some("P6") => 3,
            _ => return Err(bad("expected P5 or P6")),
        };
        let mut num = || token().and_then(|t| t.parse::<usize>().ok());
        let (width, height, maxval) = match (num(), num(), num()) {
            (Some(w), Some(h), Some(m)) => (w, h, m),
            _ => return Err(bad("missing dimensions")),
        };
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        // exactly one whitespace byte separates the header from the raster
        let data = &bytes[(pos + 1).min(bytes.len())..];
        let need = width * height * channels;
        if data.len() != need {
            return Err(bad(&format!("raster has {} bytes, expected {need}", data.len())));
        }
        Ok(Self {
            width,
            height,
            channels,
            scale: 0,
            pixels: data.to_vec(),
        })
    }
}

fn check_scale(scale: usize) -> Result<()> {
    if scale == 0 {
        Err(Error::InvalidArgument("scale must be a positive integer".into()))
    } else {
        Ok(())
    }
}

fn draw_frame(map: &GroupMap, frame: usize, img: &mut MaskImage, x_offset: usize, scale: usize) {
    let s = map.shape();
    for row in 0..s.rows {
        for col in 0..s.cols {
            if !map.is_start(frame, row, col) {
                img.fill_block(x_offset + col * scale, row * scale, scale, GRAY);
            }
        }
    }
}

/// One `(w*scale) x (h*scale)` mask per frame.
pub fn render_mask(map: &GroupMap, scale: usize) -> Result<Vec<MaskImage>> {
    check_scale(scale)?;
    let s = map.shape();
    Ok((0..s.frames)
        .map(|frame| {
            let mut img = MaskImage::blank(s.cols * scale, s.rows * scale, scale);
            draw_frame(map, frame, &mut img, 0, scale);
            img
        })
        .collect())
}

/// Masks for several thresholds tiled left to right in ascending threshold
/// order, separated by a one-patch white gutter. One image per frame.
pub fn render_sweep(maps: &[GroupMap], scale: usize) -> Result<Vec<MaskImage>> {
    check_scale(scale)?;
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("no group maps to render".into()))?;
    let s = first.shape();
    if let Some(m) = maps.iter().find(|m| m.shape() != s) {
        return Err(Error::ShapeMismatch(format!(
            "group maps cover {} and {}",
            s,
            m.shape()
        )));
    }
    let mut ordered: Vec<&GroupMap> = maps.iter().collect();
    ordered.sort_by(|a, b| {
        let key = |m: &GroupMap| m.threshold().map_or(f32::NEG_INFINITY, Threshold::value);
        key(a).total_cmp(&key(b))
    });
    let tile = s.cols * scale;
    let width = maps.len() * tile + (maps.len() - 1) * scale;
    Ok((0..s.frames)
        .map(|frame| {
            let mut img = MaskImage::blank(width, s.rows * scale, scale);
            for (i, map) in ordered.iter().enumerate() {
                draw_frame(map, frame, &mut img, i * (tile + scale), scale);
            }
            img
        })
        .collect())
}

/// Blends the mask of one frame over `base`, whose size must be a whole
/// multiple of the patch grid. Merged patches are averaged with `GRAY`.
pub fn overlay(map: &GroupMap, frame: usize, base: &MaskImage) -> Result<MaskImage> {
    let s = map.shape();
    if frame >= s.frames {
        return Err(Error::InvalidArgument(format!(
            "frame {frame} out of range for {} frames",
            s.frames
        )));
    }
    if base.width == 0 || !base.width.is_multiple_of(s.cols) || !base.height.is_multiple_of(s.rows)
        || base.width / s.cols != base.height / s.rows
    {
        return Err(Error::ShapeMismatch(format!(
            "raster {}x{} does not tile a {}x{} patch grid",
            base.width, base.height, s.cols, s.rows
        )));
    }
    let scale = base.width / s.cols;
    let mut pixels = Vec::with_capacity(base.width * base.height * 3);
    for y in 0..base.height {
        for x in 0..base.width {
            let px = base.pixel(x, y);
            let rgb = if base.channels == 3 { [px[0], px[1], px[2]] } else { [px[0]; 3] };
            let merged = !map.is_start(frame, y / scale, x / scale);
            pixels.extend(rgb.iter().map(|&c| {
                if merged {
                    ((u16::from(c) + u16::from(GRAY)) / 2) as u8
                } else {
                    c
                }
            }));
        }
    }
    Ok(MaskImage {
        width: base.width,
        height: base.height,
        channels: 3,
        scale,
        pixels,
    })
}

/// `<stem>_f<frame>_t<threshold>.pgm`
pub fn mask_file_name(stem: &str, frame: usize, threshold: Option<Threshold>) -> String {
    match threshold {
        Some(t) => format!("{stem}_f{frame}_t{t}.pgm"),
        None => format!("{stem}_f{frame}_tnone.pgm"),
    }
}
