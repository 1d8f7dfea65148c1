//! Command-line front end: `transfer`, `synth`, `eval` and `plot`.
//!
//! Exit codes: 0 success, 2 input error, 3 pipeline failure, 4 planning
//! failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, SourceSide};
use crate::pipeline::{run_transfer, Mode};
use crate::scene_io::{bounds_of, load_scene, load_trajectory, save_scene, save_trajectory, Scene, Trajectory};
use crate::synth::{generate_pair, SynthSpec};
use crate::Point;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PIPELINE: i32 = 3;
pub const EXIT_PLANNING: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "traj-analogy", version, about = "Transfer trajectories between analogous 3D scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config file plus `key=value` overrides, shared by every subcommand.
#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set refine_steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        config.apply_overrides(&self.overrides)?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Dense,
    Waypoint,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dense => Mode::Dense,
            ModeArg::Waypoint => Mode::Waypoint,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transfer a trajectory from the target scene to the reference scene.
    Transfer {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, value_enum, default_value = "dense")]
        mode: ModeArg,
        /// Output trajectory (ATTT).
        #[arg(long)]
        out: PathBuf,
        /// JSON run report.
        #[arg(long)]
        report: Option<PathBuf>,
        /// JSON stage timings (not reproducible, hence separate).
        #[arg(long)]
        timings: Option<PathBuf>,
        /// Also write the next N assignments as `<out stem>_top{k}.attt`.
        #[arg(long, default_value_t = 0)]
        top: usize,
        /// Ground-truth trajectories; adds metrics to the report.
        #[arg(long)]
        gt: Vec<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a synthetic scene pair with ground truth.
    Synth {
        /// Spec file (`key = value`); omitted keys are drawn from the seed.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Spec seed when no spec file is given.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a predicted trajectory against one or more ground truths.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        #[arg(long)]
        reference: PathBuf,
        /// Source trajectory; with `--target` enables feature distance and
        /// length distortion.
        #[arg(long, requires = "target")]
        source: Option<PathBuf>,
        #[arg(long, requires = "source")]
        target: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Top-down PNG of a scene with trajectories overlaid.
    Plot {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long = "traj")]
        trajectories: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Image width in pixels.
        #[arg(long, default_value_t = 800)]
        width: u32,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_planning() {
        EXIT_PLANNING
    } else if err.is_input() {
        EXIT_INPUT
    } else {
        EXIT_PIPELINE
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            exit_code(&e)
        }
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Transfer {
            target,
            reference,
            trajectory,
            mode,
            out,
            report,
            timings,
            top,
            gt,
            config,
        } => cmd_transfer(&TransferArgs {
            target,
            reference,
            trajectory,
            mode: (*mode).into(),
            out,
            report: report.as_deref(),
            timings: timings.as_deref(),
            top: *top,
            gt,
            config: &config.resolve()?,
        }),
        Command::Synth {
            spec,
            seed,
            out_dir,
            config,
        } => {
            let spec = match spec {
                Some(path) => SynthSpec::parse(&read_text(path)?)?,
                None => SynthSpec::random(*seed),
            };
            cmd_synth(&spec, &config.resolve()?, out_dir)
        }
        Command::Eval {
            pred,
            gt,
            reference,
            source,
            target,
            out,
            config,
        } => {
            let config = config.resolve()?;
            let text = cmd_eval(pred, gt, reference, source.as_deref().zip(target.as_deref()), &config)?;
            match out {
                Some(path) => write_bytes(path, text.as_bytes()),
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Command::Plot {
            scene,
            trajectories,
            out,
            width,
        } => {
            let scene = load_scene(scene)?;
            let trajs: Vec<Trajectory> = trajectories.iter().map(load_trajectory).collect::<Result<_>>()?;
            plot(&scene, &trajs, *width)?
                .save(out)
                .map_err(|e| Error::Image(e.to_string()))
        }
    }
}

pub struct TransferArgs<'a> {
    pub target: &'a Path,
    pub reference: &'a Path,
    pub trajectory: &'a Path,
    pub mode: Mode,
    pub out: &'a Path,
    pub report: Option<&'a Path>,
    pub timings: Option<&'a Path>,
    pub top: usize,
    pub gt: &'a [PathBuf],
    pub config: &'a Config,
}

pub fn cmd_transfer(args: &TransferArgs<'_>) -> Result<()> {
    let target = load_scene(args.target)?;
    let reference = load_scene(args.reference)?;
    let traj = load_trajectory(args.trajectory)?;
    let gts: Vec<Trajectory> = args.gt.iter().map(load_trajectory).collect::<Result<_>>()?;

    let mut out = run_transfer(&target, &reference, &traj, args.mode, args.config, args.top)?;
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    if !gts.is_empty() {
        let source = SourceSide {
            trajectory: &traj,
            scene: &target,
        };
        out.report.metrics = Some(evaluate(&out.trajectory, &gts, &reference, Some(source), args.config)?);
    }

    save_trajectory(args.out, &out.trajectory)?;
    for (k, alt) in out.alternatives.iter().enumerate() {
        save_trajectory(top_path(args.out, k + 1), alt)?;
    }
    if let Some(path) = args.report {
        write_bytes(path, to_json(&out.report)?.as_bytes())?;
    }
    if let Some(path) = args.timings {
        write_bytes(path, to_json(&out.timings)?.as_bytes())?;
    }
    Ok(())
}

/// `<stem>_top{k}.<ext>` next to `out`.
pub fn top_path(out: &Path, k: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_top{k}.{ext}"),
        None => format!("{stem}_top{k}"),
    };
    out.with_file_name(name)
}

/// Writes `target.atts`, `reference.atts`, `source.attt`, `gt_reference.attt`
/// and `gt.json` into `dir`.
pub fn cmd_synth(spec: &SynthSpec, config: &Config, dir: &Path) -> Result<()> {
    let pair = generate_pair(spec, config)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_scene(dir.join("target.atts"), &pair.target)?;
    save_scene(dir.join("reference.atts"), &pair.reference)?;
    save_trajectory(dir.join("source.attt"), &pair.source)?;
    save_trajectory(dir.join("gt_reference.attt"), &pair.gt_reference)?;
    write_bytes(&dir.join("gt.json"), to_json(&pair.sidecar())?.as_bytes())
}

/// Metric report as JSON text.
pub fn cmd_eval(
    pred: &Path,
    gts: &[PathBuf],
    reference: &Path,
    source: Option<(&Path, &Path)>,
    config: &Config,
) -> Result<String> {
    let pred = load_trajectory(pred)?;
    let gts: Vec<Trajectory> = gts.iter().map(load_trajectory).collect::<Result<_>>()?;
    let reference = load_scene(reference)?;
    let loaded = match source {
        Some((traj, scene)) => Some((load_trajectory(traj)?, load_scene(scene)?)),
        None => None,
    };
    let side = loaded.as_ref().map(|(t, s)| SourceSide { trajectory: t, scene: s });
    to_json(&evaluate(&pred, &gts, &reference, side, config)?)
}

const OPEN_SPACE_COLOR: Rgb<u8> = Rgb([225, 225, 225]);
const TRAJECTORY_COLORS: [[u8; 3]; 6] = [
    [220, 30, 30],
    [30, 90, 220],
    [20, 160, 60],
    [230, 140, 0],
    [150, 40, 180],
    [0, 160, 170],
];

/// Stable pseudo-random colour per instance id.
fn instance_color(id: i32) -> Rgb<u8> {
    let mut h = (id as u32).wrapping_mul(0x9E37_79B9) ^ 0x5bd1_e995;
    h ^= h >> 15;
    h = h.wrapping_mul(0x2c1b_3c6d);
    h ^= h >> 12;
    let c = |shift: u32| 40 + ((h >> shift) & 0xff) as u8 % 160;
    Rgb([c(0), c(8), c(16)])
}

/// Top-down XZ raster: scene points coloured by instance (open space light
/// grey), trajectories drawn as polylines with waypoint markers.
pub fn plot(scene: &Scene, trajectories: &[Trajectory], width: u32) -> Result<RgbImage> {
    if width < 16 {
        return Err(Error::InvalidParameter(format!("plot width {width}")));
    }
    let mut all: Vec<Point> = scene.points().to_vec();
    for t in trajectories {
        all.extend_from_slice(t.points());
    }
    let (lo, hi) = bounds_of(&all);
    let margin = 10.0;
    let span_x = (hi.x - lo.x).max(1e-6);
    let span_z = (hi.z - lo.z).max(1e-6);
    let scale = (width as f64 - 2.0 * margin) / span_x;
    let height = ((span_z * scale + 2.0 * margin).ceil() as u32).clamp(16, 8 * width);
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let to_px = |p: &Point| ((p.x - lo.x) * scale + margin, (p.z - lo.z) * scale + margin);

    // open space first so objects stay visible
    let mut order: Vec<usize> = (0..scene.len()).collect();
    order.sort_by_key(|&i| !scene.is_open_space(i));
    for i in order {
        let color = if scene.is_open_space(i) {
            OPEN_SPACE_COLOR
        } else {
            instance_color(scene.instance_id(i))
        };
        let (x, y) = to_px(scene.point(i));
        put_disc(&mut img, x, y, 1.5, color);
    }
    for (k, t) in trajectories.iter().enumerate() {
        let color = Rgb(TRAJECTORY_COLORS[k % TRAJECTORY_COLORS.len()]);
        for w in t.points().windows(2) {
            let (a, b) = (to_px(&w[0]), to_px(&w[1]));
            draw_line(&mut img, a, b, color);
        }
        for p in t.waypoints().unwrap_or_default() {
            let (x, y) = to_px(&p);
            put_disc(&mut img, x, y, 4.0, color);
        }
    }
    Ok(img)
}

fn put_disc(img: &mut RgbImage, cx: f64, cy: f64, r: f64, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, x1) = ((cx - r).floor() as i64, (cx + r).ceil() as i64);
    let (y0, y1) = ((cy - r).floor() as i64, (cy + r).ceil() as i64);
    for y in y0.max(0)..=y1.min(h - 1) {
        for x in x0.max(0)..=x1.min(w - 1) {
            if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        put_disc(img, a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t, 1.0, color);
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::format("json", e.to_string()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
