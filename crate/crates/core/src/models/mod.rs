//! Depth network (residual encoder, multi-scale skip decoder, disparity
//! heads), pose network and checkpoint archives.

mod checkpoint;
mod decoder;
mod layers;
mod params;
mod resnet;

pub use checkpoint::{Checkpoint, Manifest, CHECKPOINT_FORMAT};
pub use decoder::{node_input_channels, DecoderOutput, MultiScaleDecoder, SkipMode};
pub use layers::{BatchNorm2d, Conv2d, ConvSpec, Padding};
pub use params::{Init, ParamStore, Scope};
pub use resnet::{ResNetEncoder, ENCODER_STRIDE};

use candle_core::{DType, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::VoxelGrid;
use crate::geometry::{disparity_to_depth, DepthMap, DepthRange};

pub const RESNET18_WIDTHS: [usize; 5] = [64, 64, 128, 256, 512];
pub const DECODER_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];
/// Output scaling of the pose head.
pub const POSE_SCALE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Voxel bins, i.e. Depth-Net input channels.
    pub bins: usize,
    /// Channels of one frame fed to the Pose-Net (which sees two).
    pub frame_channels: usize,
    pub scales: usize,
    pub encoder_widths: [usize; 5],
    pub decoder_widths: [usize; 5],
    pub pose_width: usize,
    #[serde(default)]
    pub skip: SkipMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            bins: crate::events::DEFAULT_BINS,
            frame_channels: 1,
            scales: 4,
            encoder_widths: RESNET18_WIDTHS,
            decoder_widths: DECODER_WIDTHS,
            pose_width: 256,
            skip: SkipMode::MultiScale,
        }
    }
}

impl ModelConfig {
    /// Every width divided by `divisor` (at least one channel each).
    pub fn narrowed(mut self, divisor: usize) -> Self {
        let d = divisor.max(1);
        for w in self.encoder_widths.iter_mut().chain(self.decoder_widths.iter_mut()) {
            *w = (*w / d).max(1);
        }
        self.pose_width = (self.pose_width / d).max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.frame_channels == 0 || self.pose_width == 0 {
            return Err(Error::Config("channel counts must be nonzero".into()));
        }
        if !(1..=4).contains(&self.scales) {
            return Err(Error::Config(format!("scales must be in 1..=4, got {}", self.scales)));
        }
        if self.encoder_widths.contains(&0) || self.decoder_widths.contains(&0) {
            return Err(Error::Config("layer widths must be nonzero".into()));
        }
        Ok(())
    }
}

pub struct DepthNet {
    encoder: ResNetEncoder,
    decoder: MultiScaleDecoder,
    dtype: DType,
}

impl DepthNet {
    pub fn new(store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let root = Scope::root(store, "depth");
        Ok(DepthNet {
            encoder: ResNetEncoder::new(&root.sub("encoder"), cfg.bins, cfg.encoder_widths)?,
            decoder: MultiScaleDecoder::new(&root.sub("decoder"), cfg.encoder_widths, cfg.decoder_widths, cfg.scales, cfg.skip)?,
            dtype: store.dtype(),
        })
    }

    pub fn encoder(&self) -> &ResNetEncoder {
        &self.encoder
    }

    pub fn encode(&self, x: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        self.encoder.forward(x, train)
    }

    /// `(N, B, H, W)` voxels to the disparity pyramid, finest first.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        Ok(self.decoder.forward(&self.encoder.forward(x, train)?)?.disparities)
    }

    pub fn forward_full(&self, x: &Tensor, train: bool) -> Result<DecoderOutput> {
        self.decoder.forward(&self.encoder.forward(x, train)?)
    }

    /// Inference on event voxels alone: disparity pyramid (as arrays) and
    /// full-resolution depth for each grid.
    pub fn predict(&self, voxels: &[VoxelGrid], range: DepthRange) -> Result<Vec<(Vec<Array2<f32>>, DepthMap)>> {
        if voxels.is_empty() {
            return Ok(Vec::new());
        }
        let x = voxels_to_tensor(voxels, self.encoder.in_channels())?;
        let pyramid = self.forward(&x.to_dtype(self.dtype)?, false)?;
        let mut out = Vec::with_capacity(voxels.len());
        for n in 0..voxels.len() {
            let maps = pyramid
                .iter()
                .map(|s| tensor_to_array2(&s.get(n)?.get(0)?))
                .collect::<Result<Vec<_>>>()?;
            let depth = disparity_to_depth(&maps[0], range)?;
            out.push((maps, depth));
        }
        Ok(out)
    }
}

/// Stacks voxel grids into an `(N, B, H, W)` f32 tensor.
pub fn voxels_to_tensor(voxels: &[VoxelGrid], bins: usize) -> Result<Tensor> {
    let (h, w) = (voxels[0].height(), voxels[0].width());
    let mut data = Vec::with_capacity(voxels.len() * bins * h * w);
    for v in voxels {
        if v.bins() != bins || (v.height(), v.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "voxel grid {}x{}x{} does not match {bins}x{h}x{w}",
                v.bins(),
                v.height(),
                v.width()
            )));
        }
        data.extend(v.data.iter().copied());
    }
    Ok(Tensor::from_vec(data, (voxels.len(), bins, h, w), &candle_core::Device::Cpu)?)
}

pub(crate) fn tensor_to_array2(t: &Tensor) -> Result<Array2<f32>> {
    let (h, w) = t.dims2()?;
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(Array2::from_shape_vec((h, w), v).map_err(|e| Error::Shape(e.to_string()))?)
}

/// Relative-pose regressor on channel-concatenated frame pairs.
pub struct PoseNet {
    encoder: ResNetEncoder,
    squeeze: Conv2d,
    conv1: Conv2d,
    conv2: Conv2d,
    out: Conv2d,
    frame_channels: usize,
}

impl PoseNet {
    pub fn new(store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let root = Scope::root(store, "pose");
        let last = cfg.encoder_widths[4];
        let p = cfg.pose_width;
        let head = root.sub("head");
        Ok(PoseNet {
            encoder: ResNetEncoder::new(&root.sub("encoder"), 2 * cfg.frame_channels, cfg.encoder_widths)?,
            squeeze: Conv2d::uniform(&head.sub("squeeze"), ConvSpec::new(last, p, 1))?,
            conv1: Conv2d::uniform(&head.sub("conv1"), ConvSpec::new(p, p, 3))?,
            conv2: Conv2d::uniform(&head.sub("conv2"), ConvSpec::new(p, p, 3))?,
            out: Conv2d::uniform(&head.sub("out"), ConvSpec::new(p, 6, 1))?,
            frame_channels: cfg.frame_channels,
        })
    }

    /// Motion of the pair `(a, b)` as `(N, 6)` axis-angle/translation vectors.
    pub fn forward(&self, a: &Tensor, b: &Tensor, train: bool) -> Result<Tensor> {
        if a.dims() != b.dims() {
            return Err(Error::Shape(format!("pose inputs differ: {:?} vs {:?}", a.dims(), b.dims())));
        }
        if a.dim(1)? != self.frame_channels {
            return Err(Error::Shape(format!(
                "pose net expects {}-channel frames, got {}",
                self.frame_channels,
                a.dim(1)?
            )));
        }
        let x = Tensor::cat(&[a, b], 1)?;
        let feats = self.encoder.forward(&x, train)?;
        let y = self.squeeze.forward(&feats[4])?.relu()?;
        let y = self.conv1.forward(&y)?.relu()?;
        let y = self.conv2.forward(&y)?.relu()?;
        let y = self.out.forward(&y)?;
        Ok((y.mean(3)?.mean(2)? * POSE_SCALE)?)
    }
}
