//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.
//! `DYNTOK_THREADS` caps worker threads (unset or 0 = one per core).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{budget_csv, budget_curve, stats_from_groups, sweep_csv, threshold_sweep};
use crate::baselines::PoolSpec;
use crate::error::Error;
use crate::fsutil::write_atomic;
use crate::grid_io::{generate_synthetic, load_grid, FrameGridPair, SceneSpec};
use crate::grouping::{build_groups, Threshold};
use crate::pipeline::compress;
use crate::render::{mask_file_name, overlay, render_mask, render_sweep, MaskImage};
use crate::similarity::adjacent_cosine;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_THRESHOLDS: &str = "0.4,0.45,0.5,0.55,0.6";

#[derive(Debug, Parser)]
#[command(name = "dyntok", version, about = "Dynamic row-wise visual token compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic feature grid to a DTG file.
    Generate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress one grid at a single threshold.
    Compress {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "0.6", value_parser = parse_threshold)]
        threshold: Threshold,
        #[arg(long)]
        pool2: bool,
        /// Also write per-frame merge masks at this many pixels per patch.
        #[arg(long, value_parser = parse_scale)]
        scale: Option<usize>,
    },
    /// Kept-token ratio across a threshold ladder.
    Sweep {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_THRESHOLDS, value_delimiter = ',', value_parser = parse_threshold)]
        thresholds: Vec<Threshold>,
        #[arg(long)]
        pool2: bool,
        #[arg(long, default_value_t = 4, value_parser = parse_scale)]
        scale: usize,
    },
    /// Token totals for frame counts x kept-token ratios.
    Budget {
        #[arg(long, default_value = "32,64,96,128,160", value_delimiter = ',')]
        frames: Vec<usize>,
        #[arg(long, default_value = "1.0,0.444,0.3,0.2", value_delimiter = ',', value_parser = parse_ratio)]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 14)]
        rows: usize,
        #[arg(long, default_value_t = 14)]
        cols: usize,
        /// Write budget.csv here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render merge masks, tiled when several thresholds are given.
    Render {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "0.6", value_delimiter = ',', value_parser = parse_threshold)]
        thresholds: Vec<Threshold>,
        #[arg(long)]
        pool2: bool,
        #[arg(long, default_value_t = 8, value_parser = parse_scale)]
        scale: usize,
        /// Binary PGM/PPM raster to blend the mask over.
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Frame used with --overlay.
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
}

#[derive(Debug, Args, Serialize)]
struct InputArgs {
    /// DTG feature grid.
    #[arg(long = "in", required_unless_present = "scene", conflicts_with = "scene")]
    input: Option<PathBuf>,
    /// Scene spec JSON; the grid is generated from it with --seed.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_threshold(s: &str) -> Result<Threshold, String> {
    s.parse::<Threshold>().map_err(|e| e.to_string())
}

fn parse_scale(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("scale must be a positive integer, got {s:?}")),
    }
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("ratio {v} outside (0, 1]"))
    }
}

/// A runtime failure tagged with the pipeline stage it came from.
#[derive(Debug)]
struct Failure {
    stage: &'static str,
    error: Error,
}

type CmdResult = Result<(), Failure>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T, E: Into<Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            stage,
            error: e.into(),
        })
    }
}

/// Files written by a command, recorded in `manifest.json`.
#[derive(Default, Serialize)]
struct Artifacts(Vec<Artifact>);

#[derive(Serialize)]
struct Artifact {
    path: String,
    bytes: usize,
}

impl Artifacts {
    fn write(&mut self, dir: &Path, rel: &str, bytes: &[u8]) -> CmdResult {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).stage("write")?;
        }
        write_atomic(&path, bytes).stage("write")?;
        self.0.push(Artifact {
            path: rel.to_string(),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn finish<C: Serialize>(self, dir: &Path, command: &str, config: C) -> CmdResult {
        #[derive(Serialize)]
        struct Manifest<'a, C> {
            command: &'a str,
            version: &'a str,
            config: C,
            artifacts: Vec<Artifact>,
        }
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            artifacts: self.0,
        };
        let json = serde_json::to_string_pretty(&manifest).stage("write")?;
        write_atomic(&dir.join("manifest.json"), json.as_bytes()).stage("write")
    }
}

fn load_input(input: &InputArgs) -> Result<(FrameGridPair, bool), Failure> {
    match (&input.input, &input.scene) {
        (Some(path), _) => Ok((load_grid(path).stage("load")?, false)),
        (None, Some(scene)) => {
            let text = fs::read_to_string(scene).stage("scene")?;
            let spec: SceneSpec = serde_json::from_str(&text).stage("scene")?;
            Ok((generate_synthetic(&spec, input.seed).stage("scene")?, true))
        }
        (None, None) => unreachable!("clap requires one input"),
    }
}

fn pooling(pool2: bool) -> Option<PoolSpec> {
    pool2.then(PoolSpec::bilinear2)
}

fn write_masks(
    artifacts: &mut Artifacts,
    dir: &Path,
    stem: &str,
    images: &[MaskImage],
    threshold: Option<Threshold>,
) -> CmdResult {
    for (frame, img) in images.iter().enumerate() {
        let name = format!("masks/{}", mask_file_name(stem, frame, threshold));
        artifacts.write(dir, &name, &img.to_pnm())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CompressConfig<'a> {
    input: &'a InputArgs,
    threshold: Threshold,
    pool2: bool,
    scale: Option<usize>,
}

fn cmd_compress(input: &InputArgs, out: &Path, threshold: Threshold, pool2: bool, scale: Option<usize>) -> CmdResult {
    let (grid, generated) = load_input(input)?;
    fs::create_dir_all(out).stage("write")?;
    let mut artifacts = Artifacts::default();
    if generated {
        artifacts.write(out, "grid.dtg", &grid.to_dtg_bytes().stage("write")?)?;
    }
    let result = compress(&grid, threshold, pooling(pool2).as_ref()).stage("compress")?;
    artifacts.write(out, "sequence.dtcs", &result.sequence.to_bytes().stage("compress")?)?;
    artifacts.write(out, "groups.json", result.groups.to_json().stage("compress")?.as_bytes())?;
    artifacts.write(out, "stats.json", result.stats.to_json().stage("stats")?.as_bytes())?;
    let summary = serde_json::to_string_pretty(&result.sequence.summary()).stage("stats")?;
    artifacts.write(out, "summary.json", summary.as_bytes())?;
    if let Some(scale) = scale {
        let images = render_mask(&result.groups, scale).stage("render")?;
        write_masks(&mut artifacts, out, "mask", &images, Some(threshold))?;
    }
    artifacts.finish(
        out,
        "compress",
        CompressConfig {
            input,
            threshold,
            pool2,
            scale,
        },
    )?;
    let s = &result.stats;
    println!(
        "threshold {threshold}: {} -> {} tokens, kept ratio {:.3} ({:.2}x)",
        s.baseline_total(),
        s.total(),
        s.ratio,
        1.0 / s.ratio
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepConfig<'a> {
    input: &'a InputArgs,
    thresholds: &'a [Threshold],
    pool2: bool,
    scale: usize,
}

fn cmd_sweep(input: &InputArgs, out: &Path, thresholds: &[Threshold], pool2: bool, scale: usize) -> CmdResult {
    let (grid, _) = load_input(input)?;
    let grid = match pooling(pool2) {
        Some(spec) => crate::baselines::pool(&grid, &spec).stage("pool")?,
        None => grid,
    };
    let stats = threshold_sweep(&grid, thresholds).stage("sweep")?;
    fs::create_dir_all(out).stage("write")?;
    let mut artifacts = Artifacts::default();
    artifacts.write(out, "sweep.csv", sweep_csv(&stats).stage("sweep")?.as_bytes())?;
    let sims = adjacent_cosine(&grid);
    let maps: Vec<_> = thresholds.iter().map(|&t| build_groups(&sims, t)).collect();
    let tiles = render_sweep(&maps, scale).stage("render")?;
    for (frame, img) in tiles.iter().enumerate() {
        let name = format!(
            "masks/sweep_f{frame}_t{}-{}.pgm",
            thresholds[0],
            thresholds[thresholds.len() - 1]
        );
        artifacts.write(out, &name, &img.to_pnm())?;
    }
    artifacts.finish(
        out,
        "sweep",
        SweepConfig {
            input,
            thresholds,
            pool2,
            scale,
        },
    )?;
    for s in &stats {
        let t = s.threshold.map(Threshold::value).unwrap_or(f32::NAN);
        println!("threshold {t}: kept ratio {:.3} ({} of {} tokens)", s.ratio, s.total(), s.baseline_total());
    }
    Ok(())
}

#[derive(Serialize)]
struct BudgetConfig<'a> {
    frames: &'a [usize],
    ratios: &'a [f64],
    rows: usize,
    cols: usize,
}

fn cmd_budget(frames: &[usize], ratios: &[f64], rows: usize, cols: usize, out: Option<&Path>) -> CmdResult {
    let points = budget_curve(rows, cols, frames, ratios).stage("budget")?;
    let csv = budget_csv(&points).stage("budget")?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).stage("write")?;
            let mut artifacts = Artifacts::default();
            artifacts.write(dir, "budget.csv", csv.as_bytes())?;
            artifacts.finish(dir, "budget", BudgetConfig { frames, ratios, rows, cols })?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct RenderConfig<'a> {
    input: &'a InputArgs,
    thresholds: &'a [Threshold],
    pool2: bool,
    scale: usize,
    overlay: Option<&'a Path>,
    frame: usize,
}

fn cmd_render(
    input: &InputArgs,
    out: &Path,
    thresholds: &[Threshold],
    pool2: bool,
    scale: usize,
    overlay_path: Option<&Path>,
    frame: usize,
) -> CmdResult {
    let (grid, _) = load_input(input)?;
    let grid = match pooling(pool2) {
        Some(spec) => crate::baselines::pool(&grid, &spec).stage("pool")?,
        None => grid,
    };
    let sims = adjacent_cosine(&grid);
    let maps: Vec<_> = thresholds.iter().map(|&t| build_groups(&sims, t)).collect();
    fs::create_dir_all(out).stage("write")?;
    let mut artifacts = Artifacts::default();
    if let [map] = maps.as_slice() {
        let images = render_mask(map, scale).stage("render")?;
        write_masks(&mut artifacts, out, "mask", &images, map.threshold())?;
    } else {
        let tiles = render_sweep(&maps, scale).stage("render")?;
        for (f, img) in tiles.iter().enumerate() {
            let name = format!(
                "masks/sweep_f{f}_t{}-{}.pgm",
                thresholds[0],
                thresholds[thresholds.len() - 1]
            );
            artifacts.write(out, &name, &img.to_pnm())?;
        }
    }
    if let Some(path) = overlay_path {
        let base = MaskImage::from_pnm(&fs::read(path).stage("overlay")?).stage("overlay")?;
        for map in &maps {
            let img = overlay(map, frame, &base).stage("overlay")?;
            let t = map.threshold().map(|t| t.to_string()).unwrap_or_default();
            artifacts.write(out, &format!("overlay_f{frame}_t{t}.ppm"), &img.to_pnm())?;
        }
    }
    artifacts.finish(
        out,
        "render",
        RenderConfig {
            input,
            thresholds,
            pool2,
            scale,
            overlay: overlay_path,
            frame,
        },
    )?;
    for map in &maps {
        let s = stats_from_groups(map);
        println!(
            "threshold {}: {} merged patches",
            map.threshold().map(|t| t.to_string()).unwrap_or_default(),
            s.original - s.fused
        );
    }
    Ok(())
}

fn cmd_generate(scene: &Path, seed: u64, out: &Path) -> CmdResult {
    let text = fs::read_to_string(scene).stage("scene")?;
    let spec: SceneSpec = serde_json::from_str(&text).stage("scene")?;
    let grid = generate_synthetic(&spec, seed).stage("scene")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).stage("write")?;
    }
    write_atomic(out, &grid.to_dtg_bytes().stage("write")?).stage("write")?;
    println!("wrote {} grid {} x (d_clip {}, d_emb {})", out.display(), grid.shape(), grid.d_clip(), grid.d_emb());
    Ok(())
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Generate { scene, seed, out } => cmd_generate(&scene, seed, &out),
        Command::Compress {
            input,
            out,
            threshold,
            pool2,
            scale,
        } => cmd_compress(&input, &out, threshold, pool2, scale),
        Command::Sweep {
            input,
            out,
            mut thresholds,
            pool2,
            scale,
        } => {
            thresholds.sort_by(|a, b| a.value().total_cmp(&b.value()));
            thresholds.dedup();
            cmd_sweep(&input, &out, &thresholds, pool2, scale)
        }
        Command::Budget {
            frames,
            ratios,
            rows,
            cols,
            out,
        } => cmd_budget(&frames, &ratios, rows, cols, out.as_deref()),
        Command::Render {
            input,
            out,
            mut thresholds,
            pool2,
            scale,
            overlay,
            frame,
        } => {
            thresholds.sort_by(|a, b| a.value().total_cmp(&b.value()));
            thresholds.dedup();
            cmd_render(&input, &out, &thresholds, pool2, scale, overlay.as_deref(), frame)
        }
    }
}

fn thread_count() -> Result<usize, String> {
    match std::env::var("DYNTOK_THREADS") {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("DYNTOK_THREADS must be a non-negative integer, got {v:?}")),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = match thread_count() {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error [setup]: {e}");
            return EXIT_FAILURE;
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(()) => EXIT_OK,
        Err(Failure { stage, error }) => {
            eprintln!("error [{stage}]: {error}");
            EXIT_FAILURE
        }
    }
}
