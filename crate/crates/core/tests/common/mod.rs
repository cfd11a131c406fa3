#![allow(dead_code)]

//! Helpers shared by the integration and acceptance tests: random grids,
//! brute-force oracles, and the golden-file runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dyntok::grid_io::{RowSpec, Segment, SegmentMode};
use dyntok::{generate_synthetic, FrameGridPair, GridShape, SceneSpec};
use rand::Rng;
use sha2::{Digest, Sha256};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dyntok")
}

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

/// Golden cases: name and CLI arguments, run from the corpus directory.
pub const GOLDEN_CASES: &[(&str, &[&str])] = &[
    (
        "desk_compress",
        &["compress", "--scene", "scenes/desk.json", "--seed", "7", "--threshold", "0.6", "--pool2", "--scale", "4"],
    ),
    (
        "desk_sweep",
        &["sweep", "--scene", "scenes/desk.json", "--seed", "7", "--pool2", "--scale", "4"],
    ),
    (
        "constant_compress",
        &["compress", "--scene", "scenes/constant.json", "--seed", "7", "--scale", "4"],
    ),
    (
        "orthogonal_compress",
        &["compress", "--scene", "scenes/orthogonal.json", "--seed", "7", "--threshold", "0.6", "--scale", "4"],
    ),
];

/// Runs the CLI from the corpus directory with `--out <out>` appended.
pub fn run_in_corpus(args: &[&str], out: &Path, threads: Option<usize>) -> Output {
    let mut cmd = Command::new(bin());
    cmd.current_dir(corpus_dir()).args(args).arg("--out").arg(out);
    if let Some(n) = threads {
        cmd.env("DYNTOK_THREADS", n.to_string());
    }
    cmd.output().expect("failed to launch dyntok")
}

/// `<sha256>  <relative path>` for every file under `dir`, sorted by path.
pub fn digest_dir(dir: &Path) -> String {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                let hash = hex::encode(Sha256::digest(fs::read(&path).unwrap()));
                out.push((rel, hash));
            }
        }
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files);
    files.sort();
    files.iter().map(|(p, h)| format!("{h}  {p}\n")).collect()
}

pub fn golden_path(case: &str) -> PathBuf {
    corpus_dir().join("golden").join(format!("{case}.sha256"))
}

/// Compares a digest listing with its golden file. `DYNTOK_BLESS=1` rewrites it.
pub fn check_golden(case: &str, digest: &str) -> Result<(), String> {
    let path = golden_path(case);
    if std::env::var("DYNTOK_BLESS").is_ok_and(|v| v == "1") {
        fs::write(&path, digest).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let want = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if want == digest {
        Ok(())
    } else {
        Err(format!("{case}: outputs differ from {}\n--- golden\n{want}--- got\n{digest}", path.display()))
    }
}

/// Cosine similarity, written out longhand.
pub fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        na += a[i] as f64 * a[i] as f64;
        nb += b[i] as f64 * b[i] as f64;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Group starts re-derived by walking left from every column while the
/// similarity to the left neighbour exceeds the threshold.
pub fn oracle_group_starts(sims: &[f32], threshold: f32) -> Vec<u32> {
    let w = sims.len() + 1;
    let mut starts: Vec<u32> = Vec::new();
    for k in 0..w {
        let mut head = k;
        while head > 0 && sims[head - 1] > threshold {
            head -= 1;
        }
        if starts.last() != Some(&(head as u32)) {
            starts.push(head as u32);
        }
    }
    starts
}

/// Row of `w` vectors where each column either copies its left neighbour
/// with noise or is drawn fresh, giving similarities across the whole range.
pub fn random_row<R: Rng>(rng: &mut R, w: usize, d: usize) -> Vec<f32> {
    let mut out: Vec<f32> = Vec::with_capacity(w * d);
    for k in 0..w {
        let fresh = k == 0 || rng.random_bool(0.4);
        let noise = rng.random_range(0.0f32..1.5);
        for i in 0..d {
            let g: f32 = rng.random_range(-1.0..1.0);
            let v = if fresh {
                g
            } else {
                out[(k - 1) * d + i] + noise * g
            };
            out.push(v);
        }
        if rng.random_bool(0.02) {
            let at = out.len() - d;
            out[at..].fill(0.0);
        }
    }
    out
}

pub fn random_grid<R: Rng>(rng: &mut R, shape: GridShape, d_clip: usize, d_emb: usize) -> FrameGridPair {
    let mut vision = Vec::with_capacity(shape.patches() * d_clip);
    for _ in 0..shape.row_count() {
        vision.extend(random_row(rng, shape.cols, d_clip));
    }
    let embedding: Vec<f32> = (0..shape.patches() * d_emb)
        .map(|_| rng.random_range(-10.0f32..10.0))
        .collect();
    FrameGridPair::new(shape, d_clip, vision, d_emb, embedding).unwrap()
}

/// Random segment layout for a scene of the given size.
pub fn random_scene<R: Rng>(
    rng: &mut R,
    frames: usize,
    rows: usize,
    cols: usize,
    d_clip: usize,
    d_emb: Option<usize>,
) -> SceneSpec {
    let rows = (0..rows)
        .map(|_| {
            let mut left = cols;
            let mut segments = Vec::new();
            while left > 0 {
                let len = rng.random_range(1..=left);
                let mode = match rng.random_range(0..3) {
                    0 => SegmentMode::Constant,
                    1 => SegmentMode::Jittered { eps: rng.random_range(0.0..=1.0) },
                    _ => SegmentMode::Random,
                };
                segments.push(Segment::new(len, mode));
                left -= len;
            }
            RowSpec { repeat: 1, segments }
        })
        .collect();
    SceneSpec { frames, cols, d_clip, d_emb, rows }
}

/// Either a random-scene grid or a noisy-copy grid, chosen at random.
pub fn mixed_grid<R: Rng>(rng: &mut R, shape: GridShape, d_clip: usize, d_emb: usize) -> FrameGridPair {
    if rng.random_bool(0.5) {
        let spec = random_scene(rng, shape.frames, shape.rows, shape.cols, d_clip, Some(d_emb));
        generate_synthetic(&spec, rng.random()).unwrap()
    } else {
        random_grid(rng, shape, d_clip, d_emb)
    }
}
