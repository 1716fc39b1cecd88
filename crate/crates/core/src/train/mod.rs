//! Optimization of the depth and pose networks under the view-synthesis
//! loss: configuration, learning-rate schedule, the training step, the
//! epoch loop with validation, logging, checkpointing and resumption.

mod adam;
mod fit;

pub use adam::Adam;
pub use fit::{epoch_order, fit, read_log, FitOptions, FitReport, LogRecord, FINAL_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE};

use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::data::{Profile, TrainingSample};
use crate::error::{Error, Result};
use crate::events::VoxelGrid;
use crate::geometry::{CameraTensors, DepthRange, PoseTensors};
use crate::models::{Checkpoint, DepthNet, Manifest, ModelConfig, ParamStore, PoseNet, SkipMode};
use crate::photometric::{total_loss, LossBreakdown, LossTerms, PhotometricConfig, SourcePoses, TripletTensors};

/// Which supervision signal and decoder graph to train.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Intensity frames supervise the event-driven depth network.
    #[default]
    CrossModal,
    /// Neighbouring voxel grids replace the frames as the photometric signal.
    EventConsistency,
    /// Cross-modal signal with a plain skip-connection decoder.
    BaselineSkip,
}

impl Ablation {
    pub fn name(&self) -> &'static str {
        match self {
            Ablation::CrossModal => "cross-modal",
            Ablation::EventConsistency => "event-consistency",
            Ablation::BaselineSkip => "baseline-skip",
        }
    }

    pub fn skip_mode(&self) -> SkipMode {
        match self {
            Ablation::BaselineSkip => SkipMode::Baseline,
            _ => SkipMode::MultiScale,
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-modal" => Ok(Ablation::CrossModal),
            "event-consistency" => Ok(Ablation::EventConsistency),
            "baseline-skip" => Ok(Ablation::BaselineSkip),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?} (expected cross-modal, event-consistency or baseline-skip)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub lr_drop_epoch: usize,
    pub betas: (f64, f64),
    pub scales: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub profile: Profile,
    pub seed: u64,
    pub ablation: Ablation,
    /// Divides every network width; 1 keeps the full-size networks.
    #[serde(default = "default_width_divisor")]
    pub width_divisor: usize,
}

fn default_width_divisor() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr_initial: 1e-4,
            lr_final: 1e-5,
            lr_drop_epoch: 8,
            betas: (0.9, 0.999),
            scales: 4,
            d_min: 0.1,
            d_max: 100.0,
            profile: Profile::MvsecLike,
            seed: 0,
            ablation: Ablation::CrossModal,
            width_divisor: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.lr_drop_epoch >= self.epochs {
            return Err(Error::Config(format!(
                "lr_drop_epoch ({}) must be below epochs ({})",
                self.lr_drop_epoch, self.epochs
            )));
        }
        if !(self.lr_initial > 0.0 && self.lr_final > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(1..=4).contains(&self.scales) {
            return Err(Error::Config(format!("scales must be in 1..=4, got {}", self.scales)));
        }
        if self.width_divisor == 0 {
            return Err(Error::Config("width_divisor must be at least 1".into()));
        }
        DepthRange::new(self.d_min, self.d_max).map_err(|e| Error::Config(e.to_string()))?;
        Adam::new(self.betas.0, self.betas.1)?;
        Ok(())
    }

    pub fn range(&self) -> DepthRange {
        DepthRange {
            min: self.d_min,
            max: self.d_max,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Network configuration for frames with `frame_channels` channels and
    /// voxels with `bins` bins.
    pub fn model_config(&self, bins: usize, frame_channels: usize) -> ModelConfig {
        let pose_channels = match self.ablation {
            Ablation::EventConsistency => bins,
            _ => frame_channels,
        };
        ModelConfig {
            bins,
            frame_channels: pose_channels,
            scales: self.scales,
            skip: self.ablation.skip_mode(),
            ..ModelConfig::default()
        }
        .narrowed(self.width_divisor)
    }

    /// Fields that must agree between a checkpoint and a resumed run.
    fn resume_key(&self) -> (usize, f64, f64, usize, String, String, u64, usize) {
        (
            self.batch_size,
            self.d_min,
            self.d_max,
            self.scales,
            self.profile.name().to_string(),
            self.ablation.name().to_string(),
            self.seed,
            self.width_divisor,
        )
    }
}

/// `lr_initial` before `lr_drop_epoch`, `lr_final` from then on.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.lr_drop_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_final
    }
}

/// Maps voxel values into `[0, 1]` so they can stand in for intensity
/// frames in the event-consistency ablation.
pub fn voxel_as_frame(v: &VoxelGrid) -> Array3<f32> {
    v.data.mapv(|x| 0.5 + 0.5 * x.tanh())
}

fn stack(arrays: &[&Array3<f32>], dtype: DType) -> Result<Tensor> {
    let (c, h, w) = arrays[0].dim();
    let mut data = Vec::with_capacity(arrays.len() * c * h * w);
    for a in arrays {
        if a.dim() != (c, h, w) {
            return Err(Error::Shape(format!("batch mixes {:?} and {:?}", (c, h, w), a.dim())));
        }
        data.extend(a.iter().copied());
    }
    Ok(Tensor::from_vec(data, (arrays.len(), c, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Tensors of one batch.
pub struct Batch {
    pub voxels: Tensor,
    pub frames: TripletTensors,
    pub camera: CameraTensors,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn new(samples: &[TrainingSample], dtype: DType) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let voxels: Vec<&Array3<f32>> = samples.iter().map(|s| &s.voxel.data).collect();
        let pick = |f: fn(&TrainingSample) -> &Array3<f32>| stack(&samples.iter().map(f).collect::<Vec<_>>(), dtype);
        let cams: Vec<_> = samples.iter().map(|s| s.triplet.camera).collect();
        Ok(Batch {
            voxels: stack(&voxels, dtype)?,
            frames: TripletTensors {
                prev: pick(|s| &s.triplet.prev)?,
                target: pick(|s| &s.triplet.target)?,
                next: pick(|s| &s.triplet.next)?,
            },
            camera: CameraTensors::new(&cams, dtype, &Device::Cpu)?,
            indices: samples.iter().map(|s| s.index).collect(),
        })
    }
}

/// Networks, optimizer and step counter.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: ModelConfig,
    store: ParamStore,
    depth: DepthNet,
    pose: PoseNet,
    adam: Adam,
    photometric: PhotometricConfig,
    pub step: u64,
    /// `[height, width]` of the preprocessed inputs, recorded in checkpoints.
    pub input_size: Option<[usize; 2]>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(cfg.seed, DType::F32);
        let depth = DepthNet::new(&store, &model)?;
        let pose = PoseNet::new(&store, &model)?;
        Ok(Trainer {
            adam: Adam::new(cfg.betas.0, cfg.betas.1)?,
            photometric: PhotometricConfig::with_scales(cfg.scales),
            cfg,
            model,
            store,
            depth,
            pose,
            step: 0,
            input_size: None,
        })
    }

    pub fn depth_net(&self) -> &DepthNet {
        &self.depth
    }

    pub fn pose_net(&self) -> &PoseNet {
        &self.pose
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Forward pass and loss. `train` selects batch statistics in the
    /// normalization layers (and updates their running averages).
    pub fn loss(&self, batch: &Batch, train: bool) -> Result<LossTerms> {
        let disp = self.depth.forward(&batch.voxels, train)?;
        let f = &batch.frames;
        let v_prev = self.pose.forward(&f.prev, &f.target, train)?;
        let v_next = self.pose.forward(&f.target, &f.next, train)?;
        let poses = SourcePoses {
            prev: PoseTensors::from_pose_vectors(&v_prev, true)?,
            next: PoseTensors::from_pose_vectors(&v_next, false)?,
        };
        total_loss(&disp, f, &poses, &batch.camera, self.cfg.range(), &self.photometric)
    }

    /// Pose vectors for the pair `(a, b)` in inference mode.
    pub fn predict_pose(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.pose.forward(a, b, false)
    }

    /// One optimizer update. A non-finite loss or gradient rejects the step
    /// without touching the parameters.
    pub fn train_step(&mut self, batch: &Batch, lr: f64) -> Result<LossBreakdown> {
        let terms = self.loss(batch, true)?;
        let report = terms.breakdown()?;
        if !report.total.is_finite() || report.per_scale.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: self.step,
                detail: format!("batch {:?}, loss {:?}", batch.indices, report),
            });
        }
        let grads = terms.total.backward()?;
        let params = self.store.trainable();
        for (name, var) in &params {
            if let Some(g) = grads.get(var.as_tensor()) {
                let s = g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                if !s.is_finite() {
                    return Err(Error::NonFinite {
                        step: self.step,
                        detail: format!("batch {:?}, gradient of {name}, loss {:?}", batch.indices, report),
                    });
                }
            }
        }
        self.adam.step(&params, &grads, lr)?;
        self.step += 1;
        Ok(report)
    }

    /// Parameters, optimizer moments and progress as a checkpoint.
    pub fn checkpoint(&self, epoch: usize, batch_in_epoch: usize) -> Result<Checkpoint> {
        let mut tensors = self.store.snapshot()?;
        tensors.extend(self.adam.state_tensors());
        let mut manifest = Manifest::new(self.model.clone(), self.cfg.range());
        manifest.step = self.step;
        manifest.input_size = self.input_size;
        manifest.epoch = epoch;
        manifest.batch_in_epoch = batch_in_epoch;
        manifest.train = serde_json::to_value(&self.cfg)?;
        Ok(Checkpoint { manifest, tensors })
    }

    /// Restores a trainer from `ckpt`. `cfg` may extend the run (more
    /// epochs, another schedule) but must match everything that shapes the
    /// model, the data order or the loss.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        if !ckpt.manifest.train.is_null() {
            let saved: TrainConfig = serde_json::from_value(ckpt.manifest.train.clone())
                .map_err(|e| Error::Checkpoint(format!("stored training config: {e}")))?;
            if saved.resume_key() != cfg.resume_key() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was trained with {saved:?}, which is incompatible with {cfg:?}"
                )));
            }
        }
        let mut t = Trainer::new(cfg, ckpt.manifest.model.clone())?;
        t.store.load(&ckpt.tensors)?;
        t.adam.load_state(&ckpt.tensors, ckpt.manifest.step)?;
        t.step = ckpt.manifest.step;
        t.input_size = ckpt.manifest.input_size;
        Ok(t)
    }
}

/// Rebuilds the depth network from a checkpoint for inference.
pub fn load_depth_net(ckpt: &Checkpoint) -> Result<DepthNet> {
    let store = ParamStore::new(0, DType::F32);
    let net = DepthNet::new(&store, &ckpt.manifest.model)?;
    let depth_only: std::collections::BTreeMap<_, _> = ckpt
        .tensors
        .iter()
        .filter(|(k, _)| k.starts_with("depth."))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    store.load(&depth_only)?;
    Ok(net)
}
