use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::plot::render_depth;
use crate::data::{preprocess_voxel, read_timestamps, write_depth, DatasetOptions, Profile, Sequence, EVENTS_FILE};
use crate::error::{Error, Result};
use crate::events::{read_events, slice_windows, voxelize_with, EventWindow, VoxelGrid, DEFAULT_WINDOW_SECS};
use crate::geometry::DepthRange;
use crate::models::{Checkpoint, DepthNet};
use crate::train::{load_depth_net, TrainConfig};

pub const TIMING_FILE: &str = "timing.json";
pub const DEPTH_OUT_DIR: &str = "depth";

#[derive(Clone, Debug, PartialEq)]
pub struct InferOptions {
    /// Window length in seconds.
    pub window: f64,
    /// Overrides the profile stored with the checkpoint.
    pub profile: Option<Profile>,
    /// Frame timestamps for a bare event file; without them windows tile
    /// the stream back to back from its first event.
    pub timestamps: Option<PathBuf>,
    /// Also write a colour-mapped PNG per window.
    pub colormap: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            window: DEFAULT_WINDOW_SECS,
            profile: None,
            timestamps: None,
            colormap: false,
        }
    }
}

/// Per-window latency (voxelization plus forward pass), milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub windows: usize,
    pub total_ms: f64,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl TimingReport {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let at = |q: f64| if n == 0 { 0.0 } else { ms[((n - 1) as f64 * q).round() as usize] };
        TimingReport {
            windows: n,
            total_ms: ms.iter().sum(),
            mean_ms: if n == 0 { 0.0 } else { ms.iter().sum::<f64>() / n as f64 },
            median_ms: at(0.5),
            p95_ms: at(0.95),
            max_ms: at(1.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct InferReport {
    pub depth_files: Vec<PathBuf>,
    pub timing: TimingReport,
}

/// A depth network restored for inference together with the settings it
/// was trained under.
pub struct Predictor {
    pub net: DepthNet,
    pub range: DepthRange,
    pub profile: Profile,
    pub bins: usize,
    input_size: Option<[usize; 2]>,
}

impl Predictor {
    pub fn load(checkpoint: &Path, profile: Option<Profile>) -> Result<Self> {
        let ckpt = Checkpoint::load(checkpoint)?;
        let stored = if ckpt.manifest.train.is_null() {
            None
        } else {
            serde_json::from_value::<TrainConfig>(ckpt.manifest.train.clone()).ok().map(|c| c.profile)
        };
        Ok(Predictor {
            net: load_depth_net(&ckpt)?,
            range: ckpt.manifest.range,
            profile: profile.or(stored).unwrap_or_default(),
            bins: ckpt.manifest.model.bins,
            input_size: ckpt.manifest.input_size,
        })
    }

    /// Output size of the profile for a `height × width` sensor, checked
    /// against the size the checkpoint was trained at.
    pub fn check_sensor(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (h, w) = self.profile.output_size(height, width)?;
        if let Some([th, tw]) = self.input_size {
            if (h, w) != (th, tw) {
                return Err(Error::Shape(format!(
                    "{width}x{height} sensor becomes {w}x{h} under profile {}, the checkpoint expects {tw}x{th}",
                    self.profile
                )));
            }
        }
        Ok((h, w))
    }

    /// Full-resolution depth for one (unpreprocessed) voxel grid.
    pub fn depth(&self, voxel: &VoxelGrid) -> Result<Array2<f32>> {
        let v = preprocess_voxel(voxel, self.profile)?;
        let mut out = self.net.predict(std::slice::from_ref(&v), self.range)?;
        Ok(out.remove(0).1.values)
    }
}

fn windows_from_file(path: &Path, opts: &InferOptions) -> Result<(Vec<EventWindow>, usize, usize)> {
    let (header, events) = read_events(path)?;
    let stamps = match &opts.timestamps {
        Some(p) => read_timestamps(p)?,
        None => {
            let (Some(first), Some(last)) = (events.first(), events.last()) else {
                return Ok((Vec::new(), header.height, header.width));
            };
            let n = (((last.t - first.t) / opts.window).floor() as usize) + 1;
            (1..=n).map(|k| first.t + k as f64 * opts.window).collect()
        }
    };
    Ok((slice_windows(&events, &stamps, opts.window)?, header.height, header.width))
}

/// Predicts one depth map per event window of `events` (a sequence
/// directory or an event file) and writes them to `out/depth/`.
pub fn infer(checkpoint: &Path, events: &Path, out: &Path, opts: &InferOptions) -> Result<InferReport> {
    let predictor = Predictor::load(checkpoint, opts.profile)?;
    let dopts = DatasetOptions {
        bins: predictor.bins,
        window: opts.window,
        ..Default::default()
    };
    let (windows, height, width) = if events.is_dir() && events.join(EVENTS_FILE).exists() {
        let seq = Sequence::open(events, dopts)?;
        let ws = (0..seq.frame_count()).filter_map(|i| seq.window(i).cloned()).collect();
        (ws, seq.camera().height, seq.camera().width)
    } else {
        windows_from_file(events, opts)?
    };
    predictor.check_sensor(height, width)?;

    let dir = out.join(DEPTH_OUT_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::with_capacity(windows.len());
    let mut latencies = Vec::with_capacity(windows.len());
    for (k, w) in windows.iter().enumerate() {
        let t0 = Instant::now();
        let voxel = voxelize_with(w, dopts.bins, height, width, dopts.time_origin)?;
        let depth = predictor.depth(&voxel)?;
        latencies.push(t0.elapsed().as_secs_f64() * 1e3);

        let path = dir.join(format!("{k:06}.bin"));
        write_depth(&path, &depth)?;
        if opts.colormap {
            let png = path.with_extension("png");
            render_depth(&depth, predictor.range.min as f32, predictor.range.max as f32)
                .save(&png)
                .map_err(|e| Error::io(&png, std::io::Error::other(e.to_string())))?;
        }
        files.push(path);
    }

    let timing = TimingReport::from_samples(latencies);
    let tp = out.join(TIMING_FILE);
    std::fs::write(&tp, serde_json::to_vec_pretty(&timing)?).map_err(|e| Error::io(&tp, e))?;
    log::info!(
        "{} windows, {:.2} ms mean latency ({:.2} ms p95)",
        timing.windows,
        timing.mean_ms,
        timing.p95_ms
    );
    Ok(InferReport {
        depth_files: files,
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_quantiles() {
        let t = TimingReport::from_samples((1..=20).map(|v| v as f64).collect());
        assert_eq!((t.windows, t.median_ms, t.max_ms), (20, 11.0, 20.0));
        assert_eq!(t.p95_ms, 19.0);
        assert_eq!(TimingReport::from_samples(Vec::new()).mean_ms, 0.0);
    }
}
