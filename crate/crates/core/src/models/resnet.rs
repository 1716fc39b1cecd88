use candle_core::Tensor;

use super::layers::{BatchNorm2d, Conv2d, ConvSpec};
use super::params::Scope;
use crate::error::{Error, Result};
use crate::ops::max_pool_3x3_s2;

/// Total downsampling factor of the encoder.
pub const ENCODER_STRIDE: usize = 32;

struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new(scope: &Scope, in_ch: usize, out_ch: usize, stride: usize) -> Result<Self> {
        let downsample = if stride != 1 || in_ch != out_ch {
            let s = scope.sub("downsample");
            Some((
                Conv2d::he(&s.sub(0), ConvSpec::new(in_ch, out_ch, 1).stride(stride).no_bias())?,
                BatchNorm2d::new(&s.sub(1), out_ch)?,
            ))
        } else {
            None
        };
        Ok(BasicBlock {
            conv1: Conv2d::he(&scope.sub("conv1"), ConvSpec::new(in_ch, out_ch, 3).stride(stride).no_bias())?,
            bn1: BatchNorm2d::new(&scope.sub("bn1"), out_ch)?,
            conv2: Conv2d::he(&scope.sub("conv2"), ConvSpec::new(out_ch, out_ch, 3).no_bias())?,
            bn2: BatchNorm2d::new(&scope.sub("bn2"), out_ch)?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, train)?;
        let identity = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((y + identity)?.relu()?)
    }
}

/// Residual-18 feature extractor with a configurable number of input
/// channels. Returns five feature maps at strides 2, 4, 8, 16 and 32.
pub struct ResNetEncoder {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    layers: Vec<Vec<BasicBlock>>,
    widths: [usize; 5],
    in_channels: usize,
}

impl ResNetEncoder {
    pub fn new(scope: &Scope, in_channels: usize, widths: [usize; 5]) -> Result<Self> {
        if in_channels == 0 || widths.contains(&0) {
            return Err(Error::Config(format!("encoder needs nonzero channels, got {in_channels} / {widths:?}")));
        }
        let mut layers = Vec::with_capacity(4);
        for i in 1..5 {
            let (cin, cout) = (widths[i - 1], widths[i]);
            let stride = if i == 1 { 1 } else { 2 };
            let s = scope.sub(format!("layer{i}"));
            layers.push(vec![
                BasicBlock::new(&s.sub(0), cin, cout, stride)?,
                BasicBlock::new(&s.sub(1), cout, cout, 1)?,
            ]);
        }
        Ok(ResNetEncoder {
            conv1: Conv2d::he(&scope.sub("conv1"), ConvSpec::new(in_channels, widths[0], 7).stride(2).no_bias())?,
            bn1: BatchNorm2d::new(&scope.sub("bn1"), widths[0])?,
            layers,
            widths,
            in_channels,
        })
    }

    pub fn widths(&self) -> [usize; 5] {
        self.widths
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!("encoder expects {} input channels, got {c}", self.in_channels)));
        }
        if h % ENCODER_STRIDE != 0 || w % ENCODER_STRIDE != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by {ENCODER_STRIDE}; pad or crop upstream"
            )));
        }
        let mut feats = Vec::with_capacity(5);
        let f1 = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let mut y = max_pool_3x3_s2(&f1)?;
        feats.push(f1);
        for layer in &self.layers {
            for block in layer {
                y = block.forward(&y, train)?;
            }
            feats.push(y.clone());
        }
        Ok(feats)
    }
}
