use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::geometry::DepthRange;

pub const CHECKPOINT_FORMAT: u32 = 1;
const MANIFEST_KEY: &str = "manifest";

/// Everything needed to rebuild the networks and resume training, stored in
/// the archive header next to the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub model: ModelConfig,
    pub range: DepthRange,
    /// `[height, width]` of the network input after preprocessing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_size: Option<[usize; 2]>,
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    /// Batches of the current epoch already consumed.
    #[serde(default)]
    pub batch_in_epoch: usize,
    /// Training configuration the run was started with, if any.
    #[serde(default)]
    pub train: serde_json::Value,
}

impl Manifest {
    pub fn new(model: ModelConfig, range: DepthRange) -> Self {
        Manifest {
            format: CHECKPOINT_FORMAT,
            model,
            range,
            input_size: None,
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
            train: serde_json::Value::Null,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Writes the archive atomically: a temporary file in the target
    /// directory is renamed over `path` once fully written.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut info = HashMap::new();
        info.insert(MANIFEST_KEY.to_string(), serde_json::to_string(&self.manifest)?);
        let bytes = safetensors::serialize(self.tensors.iter().map(|(k, v)| (k.as_str(), v)), Some(info))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let text = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get(MANIFEST_KEY))
            .ok_or_else(|| Error::Checkpoint(format!("{}: no manifest in archive header", path.display())))?;
        let manifest: Manifest = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("{}: bad manifest: {e}", path.display())))?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {} (expected {CHECKPOINT_FORMAT})",
                manifest.format
            )));
        }
        manifest.model.validate()?;
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?
            .into_iter()
            .collect();
        Ok(Checkpoint { manifest, tensors })
    }
}
