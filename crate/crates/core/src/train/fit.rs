use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lr_schedule, voxel_as_frame, Ablation, Batch, TrainConfig, Trainer};
use crate::data::{augment, preprocess, preprocess_voxel, split_dirs, DatasetOptions, Profile, Sequence, TrainingSample};
use crate::error::{Error, Result};
use crate::models::Checkpoint;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";
/// Consecutive rejected steps after which training gives up.
const MAX_REJECTED_STEPS: usize = 10;

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub resume: Option<PathBuf>,
    /// Stop (after checkpointing) once this many optimizer steps exist.
    pub stop_after_steps: Option<u64>,
    /// Cap on validation samples per epoch.
    pub max_val_samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// `train` or `val`.
    pub kind: String,
    pub step: u64,
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    pub loss: f64,
    pub per_scale: Vec<f64>,
    pub mask_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub steps: u64,
    /// True when every configured epoch ran.
    pub finished: bool,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Loads, preprocesses and (for the event-consistency ablation) converts
/// one sample, without augmentation.
pub(crate) fn prepare_sample(seq: &Sequence, index: usize, cfg: &TrainConfig) -> Result<TrainingSample> {
    let mut s = preprocess(&seq.load_sample(index)?, cfg.profile)?;
    if cfg.ablation == Ablation::EventConsistency {
        let prev = preprocess_voxel(&seq.voxel(index - 1)?, cfg.profile)?;
        let next = preprocess_voxel(&seq.voxel(index + 1)?, cfg.profile)?;
        s.triplet.prev = voxel_as_frame(&prev);
        s.triplet.target = voxel_as_frame(&s.voxel);
        s.triplet.next = voxel_as_frame(&next);
    }
    Ok(s)
}

fn training_sample(seq: &Sequence, index: usize, epoch: usize, cfg: &TrainConfig) -> Result<TrainingSample> {
    let s = prepare_sample(seq, index, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(cfg.seed, epoch as u64 + 1), index as u64));
    // Voxel-derived frames are never color-jittered.
    let profile = match cfg.ablation {
        Ablation::EventConsistency => Profile::None,
        _ => cfg.profile,
    };
    Ok(augment(&s, &mut rng, profile))
}

/// Sample order of `epoch`, a seeded permutation of `indices`.
pub fn epoch_order(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64)));
    order
}

struct Log {
    file: std::fs::File,
    path: PathBuf,
}

impl Log {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Log {
            file,
            path: path.to_path_buf(),
        })
    }

    fn write(&mut self, rec: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(rec)?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::format("training log", e.to_string()))
        })
        .collect()
}

fn validation_loss(trainer: &Trainer, seq: &Sequence, cfg: &TrainConfig, cap: Option<usize>) -> Result<Option<LogRecord>> {
    let mut idx = seq.sample_indices();
    if let Some(c) = cap {
        idx.truncate(c);
    }
    if idx.is_empty() {
        return Ok(None);
    }
    let (mut loss, mut mask, mut per_scale) = (0.0, 0.0, vec![0.0; cfg.scales]);
    for chunk in idx.chunks(cfg.batch_size) {
        let samples = chunk.iter().map(|&i| prepare_sample(seq, i, cfg)).collect::<Result<Vec<_>>>()?;
        let batch = Batch::new(&samples, DType::F32)?;
        let b = trainer.loss(&batch, false)?.breakdown()?;
        let w = chunk.len() as f64;
        loss += b.total * w;
        mask += b.mask_fraction * w;
        for (acc, v) in per_scale.iter_mut().zip(&b.per_scale) {
            *acc += v * w;
        }
    }
    let n = idx.len() as f64;
    Ok(Some(LogRecord {
        kind: "val".into(),
        step: trainer.step,
        epoch: 0,
        lr: None,
        loss: loss / n,
        per_scale: per_scale.into_iter().map(|v| v / n).collect(),
        mask_fraction: mask / n,
    }))
}

fn dump_rejected(out: &Path, err: &Error) -> Result<()> {
    if let Error::NonFinite { step, detail } = err {
        let p = out.join(format!("rejected_step_{step}.json"));
        let body = serde_json::json!({ "step": step, "detail": detail });
        std::fs::write(&p, serde_json::to_vec_pretty(&body)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Trains on the dataset at `data` (a sequence directory, or a root with
/// `train/` and optional `val/`), writing the JSON-lines log and
/// checkpoints to `out`.
pub fn fit(cfg: &TrainConfig, data: &Path, out: &Path, opts: &FitOptions) -> Result<FitReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (train_dir, val_dir) = split_dirs(data)?;
    let dopts = DatasetOptions::default();
    let train = Sequence::open(&train_dir, dopts)?;
    let val = val_dir.map(|d| Sequence::open(&d, dopts)).transpose()?;
    let indices = train.sample_indices();
    if indices.len() < cfg.batch_size {
        return Err(Error::InvalidInput(format!(
            "{} usable samples cannot fill one batch of {}",
            indices.len(),
            cfg.batch_size
        )));
    }

    let (mut trainer, start_epoch, start_batch) = match &opts.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            let (e, b) = (ckpt.manifest.epoch, ckpt.manifest.batch_in_epoch);
            (Trainer::from_checkpoint(&ckpt, cfg.clone())?, e, b)
        }
        None => {
            let first = prepare_sample(&train, indices[0], cfg)?;
            let model = cfg.model_config(first.voxel.bins(), first.triplet.channels());
            let mut t = Trainer::new(cfg.clone(), model)?;
            t.input_size = Some([first.voxel.height(), first.voxel.width()]);
            (t, 0, 0)
        }
    };
    let log_path = out.join(LOG_FILE);
    let mut log = Log::open(&log_path, opts.resume.is_some())?;
    let last = out.join(LAST_CHECKPOINT);
    let batches_per_epoch = indices.len() / cfg.batch_size;

    for epoch in start_epoch..cfg.epochs {
        let order = epoch_order(&indices, cfg.seed, epoch);
        let lr = lr_schedule(epoch, cfg);
        let first = if epoch == start_epoch { start_batch } else { 0 };
        let mut rejected = 0;
        for b in first..batches_per_epoch {
            let chunk = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let samples = chunk
                .iter()
                .map(|&i| training_sample(&train, i, epoch, cfg))
                .collect::<Result<Vec<_>>>()?;
            let batch = Batch::new(&samples, DType::F32)?;
            match trainer.train_step(&batch, lr) {
                Ok(r) => {
                    rejected = 0;
                    log.write(&LogRecord {
                        kind: "train".into(),
                        step: trainer.step,
                        epoch,
                        lr: Some(lr),
                        loss: r.total,
                        per_scale: r.per_scale,
                        mask_fraction: r.mask_fraction,
                    })?;
                    log::debug!("epoch {epoch} step {} loss {:.5}", trainer.step, r.total);
                }
                Err(e @ Error::NonFinite { .. }) => {
                    log::warn!("{e}");
                    dump_rejected(out, &e)?;
                    rejected += 1;
                    if rejected >= MAX_REJECTED_STEPS {
                        return Err(e);
                    }
                }
                Err(e) => return Err(e),
            }
            if opts.stop_after_steps.is_some_and(|s| trainer.step >= s) {
                trainer.checkpoint(epoch, b + 1)?.save(&last)?;
                return Ok(FitReport {
                    checkpoint: last,
                    log: log_path,
                    steps: trainer.step,
                    finished: false,
                });
            }
        }
        if let Some(v) = &val {
            if let Some(mut rec) = validation_loss(&trainer, v, cfg, opts.max_val_samples)? {
                rec.epoch = epoch;
                log::info!("epoch {epoch}: validation loss {:.5}", rec.loss);
                log.write(&rec)?;
            }
        }
        let ckpt = trainer.checkpoint(epoch + 1, 0)?;
        ckpt.save(&out.join(format!("epoch_{:03}.safetensors", epoch + 1)))?;
        ckpt.save(&last)?;
    }
    let final_path = out.join(FINAL_CHECKPOINT);
    trainer.checkpoint(cfg.epochs, 0)?.save(&final_path)?;
    Ok(FitReport {
        checkpoint: final_path,
        log: log_path,
        steps: trainer.step,
        finished: true,
    })
}
