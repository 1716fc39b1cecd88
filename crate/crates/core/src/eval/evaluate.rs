use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::infer::Predictor;
use super::metrics::{aggregate, constant_baseline, gt_validity, mean_error_at_cutoffs, AggregateMetrics, MetricOptions};
use super::plot::{SampleRecord, SampleSet, SAMPLES_FILE};
use crate::data::{preprocess_depth, write_f32_array, DatasetOptions, Profile, Sequence, EVENTS_FILE};
use crate::error::{Error, Result};

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
const SAMPLES_DIR: &str = "samples";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub metrics: MetricOptions,
    /// Overrides the profile stored with the checkpoint.
    pub profile: Option<Profile>,
    /// Qualitative samples saved for plotting, spread evenly over the index.
    pub samples: usize,
    /// Evaluate at most this many frames, evenly spaced.
    pub max_frames: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            metrics: MetricOptions::default(),
            profile: None,
            samples: 3,
            max_frames: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub profile: Profile,
    pub options: MetricOptions,
    pub model: AggregateMetrics,
    /// Per-frame best constant depth (the median of the scored ground truth).
    pub baseline: AggregateMetrics,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let crop = match self.options.crop {
            Some(c) => format!("{}x{} at ({}, {})", c.height, c.width, c.top, c.left),
            None => "full frame".into(),
        };
        let _ = writeln!(
            s,
            "alignment: {}  crop: {crop}  frames: {}",
            self.options.alignment, self.model.frames
        );
        let _ = writeln!(s, "{:>8}  {:>10}  {:>10}  {:>10}", "cutoff", "model", "baseline", "pixels");
        let fmt = |e: Option<f64>| e.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for (m, b) in self.model.cutoffs.iter().zip(&self.baseline.cutoffs) {
            let _ = writeln!(
                s,
                "{:>8}  {:>10}  {:>10}  {:>10}",
                m.cutoff,
                fmt(m.error),
                fmt(b.error),
                m.n_valid
            );
        }
        s
    }
}

/// Sequence to evaluate: `root/test/` when present, otherwise `root` itself.
fn test_dir(root: &Path) -> Result<PathBuf> {
    if root.join("test").join(EVENTS_FILE).exists() {
        Ok(root.join("test"))
    } else if root.join(EVENTS_FILE).exists() {
        Ok(root.to_path_buf())
    } else {
        Err(Error::InvalidInput(format!(
            "{}: neither a sequence directory nor a dataset with test/",
            root.display()
        )))
    }
}

fn spread(indices: &[usize], n: usize) -> Vec<usize> {
    if n >= indices.len() {
        return indices.to_vec();
    }
    (0..n).map(|k| indices[k * indices.len() / n]).collect()
}

/// Scores depth predicted from events alone against ground truth for every
/// evaluation frame, writing `metrics.json`, `metrics.txt` and the
/// qualitative samples to `out`.
pub fn evaluate(checkpoint: &Path, dataset: &Path, out: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    opts.metrics.validate()?;
    let predictor = Predictor::load(checkpoint, opts.profile)?;
    let dir = test_dir(dataset)?;
    let seq = Sequence::open(
        &dir,
        DatasetOptions {
            bins: predictor.bins,
            ..Default::default()
        },
    )?;
    let cam = seq.camera();
    predictor.check_sensor(cam.height, cam.width)?;

    let all = seq.frame_indices();
    let indices = match opts.max_frames {
        Some(n) => spread(&all, n),
        None => all,
    };
    if indices.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no frames to evaluate", dir.display())));
    }
    let keep: Vec<usize> = spread(&indices, opts.samples);

    let sample_dir = out.join(SAMPLES_DIR);
    std::fs::create_dir_all(&sample_dir).map_err(|e| Error::io(&sample_dir, e))?;
    let (mut model, mut baseline, mut samples) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &indices {
        let gt = seq
            .depth(i)?
            .ok_or_else(|| Error::InvalidInput(format!("frame {i} of {} has no ground-truth depth", dir.display())))?;
        let gt = preprocess_depth(&gt, predictor.profile)?;
        let voxel = seq.voxel(i)?;
        let pred = predictor.depth(&voxel)?;
        let mask = gt_validity(&gt);
        let m = mean_error_at_cutoffs(&pred, &gt, &mask, &opts.metrics)?;
        let flat = constant_baseline(&gt, &mask, opts.metrics.crop);
        baseline.push(mean_error_at_cutoffs(
            &flat,
            &gt,
            &mask,
            &MetricOptions {
                alignment: super::Alignment::None,
                ..opts.metrics.clone()
            },
        )?);

        if keep.contains(&i) {
            let save = |name: &str, a: &Array2<f32>| -> Result<PathBuf> {
                let rel = PathBuf::from(SAMPLES_DIR).join(format!("{i:06}_{name}.bin"));
                write_f32_array(&out.join(&rel), &[a.nrows(), a.ncols()], a.iter().copied())?;
                Ok(rel)
            };
            let events = crate::data::preprocess_voxel(&voxel, predictor.profile)?.collapsed();
            samples.push(SampleRecord {
                index: i,
                scale: m.scale,
                events: save("events", &events)?,
                pred: save("pred", &pred)?,
                gt: Some(save("gt", &gt)?),
            });
        }
        model.push(m);
    }

    let report = EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        dataset: dir,
        profile: predictor.profile,
        options: opts.metrics.clone(),
        model: aggregate(&model, &opts.metrics),
        baseline: aggregate(&baseline, &opts.metrics),
    };
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write(METRICS_JSON, &serde_json::to_vec_pretty(&report)?)?;
    write(METRICS_TXT, report.table().as_bytes())?;
    write(SAMPLES_FILE, &serde_json::to_vec_pretty(&SampleSet { samples })?)?;
    Ok(report)
}
