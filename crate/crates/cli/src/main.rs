use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evdepth::data::{synth_scene, write_f32_array, write_static_exclusions, Profile, SceneConfig};
use evdepth::eval::{evaluate, infer, plot, Alignment, CropRegion, EvalOptions, InferOptions, MetricOptions};
use evdepth::events::{read_events, slice_windows, voxelize, DEFAULT_BINS, DEFAULT_WINDOW_SECS};
use evdepth::train::{fit, Ablation, FitOptions, TrainConfig};
use evdepth::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "evdepth", version, about = "Self-supervised monocular depth from event cameras")]
struct Cli {
    /// Seed for scene synthesis and training (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Input geometry: pad to 288x352, centre-crop to 320 rows, or as is.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut an event file into windows and write one voxel grid per window.
    Voxelize(VoxelizeArgs),
    /// Render a synthetic textured-plane sequence with events, frames and depth.
    Synth(SynthArgs),
    /// Train depth and pose networks.
    Train(TrainArgs),
    /// Predict depth from events alone.
    Infer(InferArgs),
    /// Score a checkpoint against ground-truth depth.
    Evaluate(EvaluateArgs),
    /// Render loss curves and qualitative panels.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct VoxelizeArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Window length in seconds.
    #[arg(long, default_value_t = DEFAULT_WINDOW_SECS)]
    window: f64,
    /// Window end times, one per line; default tiles the stream.
    #[arg(long)]
    timestamps: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    frames: usize,
    /// Also write `val/` with this many frames (the main sequence goes to `train/`).
    #[arg(long, default_value_t = 0)]
    val_frames: usize,
    /// Also write `test/` with this many frames.
    #[arg(long, default_value_t = 0)]
    test_frames: usize,
    /// Scene description (JSON); default is the 64x64 toy scene.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    max_val_samples: Option<usize>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sequence directory or event file (.bin or .csv).
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW_SECS)]
    window: f64,
    #[arg(long)]
    timestamps: Option<PathBuf>,
    /// Also write colour-mapped PNGs.
    #[arg(long)]
    colormap: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sequence directory, or a dataset root holding `test/`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 20.0, 30.0])]
    cutoffs: Vec<f64>,
    /// `top,left,height,width` or `mvsec`; default is the full frame.
    #[arg(long)]
    crop: Option<CropRegion>,
    #[arg(long, default_value_t = Alignment::Median)]
    alignment: Alignment,
    /// Qualitative samples kept for plotting.
    #[arg(long, default_value_t = 3)]
    samples: usize,
    #[arg(long)]
    max_frames: Option<usize>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Training logs, `samples.json` files or directories holding them.
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn voxelize_cmd(a: &VoxelizeArgs) -> Result<()> {
    let (header, events) = read_events(&a.events)?;
    let stamps = match &a.timestamps {
        Some(p) => evdepth::data::read_timestamps(p)?,
        None => match (events.first(), events.last()) {
            (Some(f), Some(l)) => {
                let n = ((l.t - f.t) / a.window).floor() as usize + 1;
                (1..=n).map(|k| f.t + k as f64 * a.window).collect()
            }
            _ => Vec::new(),
        },
    };
    let windows = slice_windows(&events, &stamps, a.window)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    for (k, w) in windows.iter().enumerate() {
        let v = voxelize(w, a.bins, header.height, header.width)?;
        write_f32_array(
            &a.out.join(format!("{k:06}.bin")),
            &[v.bins(), v.height(), v.width()],
            v.data.iter().copied(),
        )?;
    }
    println!("{} windows, {} events", windows.len(), events.len());
    Ok(())
}

fn synth_one(cfg: &SceneConfig, out: &Path) -> Result<()> {
    let s = synth_scene(cfg, out)?;
    // Frames whose window is nearly empty give no training signal.
    write_static_exclusions(out, 1)?;
    println!(
        "{}: {} frames, {} events, depth {:.2}..{:.2}",
        out.display(),
        s.frames,
        s.events,
        s.depth_min,
        s.depth_max
    );
    Ok(())
}

fn synth_cmd(a: &SynthArgs, seed: u64) -> Result<()> {
    let scene = |seed: u64, frames: usize| -> Result<SceneConfig> {
        match &a.config {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                let mut cfg: SceneConfig =
                    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                cfg.texture.seed = seed;
                Ok(cfg)
            }
            None => Ok(SceneConfig::toy(seed, frames)),
        }
    };
    if a.val_frames == 0 && a.test_frames == 0 {
        return synth_one(&scene(seed, a.frames)?, &a.out);
    }
    synth_one(&scene(seed, a.frames)?, &a.out.join("train"))?;
    for (k, (name, n)) in [("val", a.val_frames), ("test", a.test_frames)].into_iter().enumerate() {
        if n > 0 {
            synth_one(&scene(seed.wrapping_add(1000 + k as u64), n)?, &a.out.join(name))?;
        }
    }
    Ok(())
}

fn train_cmd(a: &TrainArgs, cli: &Cli) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.profile {
        cfg.profile = p;
    }
    if let Some(ab) = a.ablation {
        cfg.ablation = ab;
    }
    let opts = FitOptions {
        resume: a.resume.clone(),
        stop_after_steps: a.max_steps,
        max_val_samples: a.max_val_samples,
    };
    let r = fit(&cfg, &a.data, &a.out, &opts)?;
    println!("{} steps, checkpoint {}", r.steps, r.checkpoint.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Voxelize(a) => voxelize_cmd(a),
        Command::Synth(a) => synth_cmd(a, cli.seed.unwrap_or(0)),
        Command::Train(a) => train_cmd(a, cli),
        Command::Infer(a) => {
            let opts = InferOptions {
                window: a.window,
                profile: cli.profile,
                timestamps: a.timestamps.clone(),
                colormap: a.colormap,
            };
            let r = infer(&a.checkpoint, &a.events, &a.out, &opts)?;
            println!(
                "{} depth maps, {:.2} ms mean latency",
                r.depth_files.len(),
                r.timing.mean_ms
            );
            Ok(())
        }
        Command::Evaluate(a) => {
            let opts = EvalOptions {
                metrics: MetricOptions {
                    cutoffs: a.cutoffs.clone(),
                    alignment: a.alignment,
                    crop: a.crop,
                },
                profile: cli.profile,
                samples: a.samples,
                max_frames: a.max_frames,
            };
            let r = evaluate(&a.checkpoint, &a.data, &a.out, &opts)?;
            print!("{}", r.table());
            Ok(())
        }
        Command::Plot(a) => {
            let files = plot(&a.inputs, &a.out)?;
            println!("{} images", files.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.deterministic {
        // The tensor backend sizes its thread pool from this on first use.
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
