use candle_core::Tensor;

use super::layers::{upsample2, Conv2d, ConvSpec};
use super::params::Scope;
use crate::error::{Error, Result};
use crate::ops::sigmoid;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipMode {
    /// Each node also receives max-pooled copies of every higher-resolution
    /// encoder feature.
    #[default]
    MultiScale,
    /// Plain same-resolution skip connections only.
    Baseline,
}

/// Input channel count of decoder node `i` (1..=4). `enc` are the encoder
/// widths f_e[1..5] and `dec` the node widths x_d[0..4].
pub fn node_input_channels(i: usize, enc: &[usize; 5], dec: &[usize; 5], skip: SkipMode) -> usize {
    assert!((1..=4).contains(&i), "node {i} has no skip input");
    let pooled: usize = match skip {
        SkipMode::MultiScale => enc[..i - 1].iter().sum(),
        SkipMode::Baseline => 0,
    };
    enc[i - 1] + pooled + dec[i]
}

struct Node {
    up: Conv2d,
    fuse: Conv2d,
}

/// Top-down decoder producing node outputs x_d[0..4] and sigmoid disparity
/// heads on the finest `scales` of them.
pub struct MultiScaleDecoder {
    nodes: Vec<Node>,
    heads: Vec<Conv2d>,
    enc: [usize; 5],
    dec: [usize; 5],
    skip: SkipMode,
}

pub struct DecoderOutput {
    /// x_d[0..4], finest first.
    pub nodes: Vec<Tensor>,
    /// σ[0..s-1], finest first.
    pub disparities: Vec<Tensor>,
    /// Channels of the tensor each node's fusing convolution received.
    pub concat_channels: [usize; 5],
    /// `(k, i)` for every max-pooled f_e[k] fed into node i.
    pub pooled_edges: Vec<(usize, usize)>,
}

impl MultiScaleDecoder {
    pub fn new(scope: &Scope, enc: [usize; 5], dec: [usize; 5], scales: usize, skip: SkipMode) -> Result<Self> {
        if !(1..=4).contains(&scales) {
            return Err(Error::Config(format!("decoder supports 1 to 4 output scales, got {scales}")));
        }
        let mut nodes = Vec::with_capacity(5);
        for i in 0..5 {
            let s = scope.sub(format!("node{i}"));
            let below = if i == 4 { enc[4] } else { dec[i + 1] };
            let fuse_in = if i == 0 { dec[0] } else { node_input_channels(i, &enc, &dec, skip) };
            nodes.push(Node {
                up: Conv2d::uniform(&s.sub("up"), ConvSpec::new(below, dec[i], 3).reflect())?,
                fuse: Conv2d::uniform(&s.sub("fuse"), ConvSpec::new(fuse_in, dec[i], 3).reflect())?,
            });
        }
        let heads = (0..scales)
            .map(|j| Conv2d::uniform(&scope.sub(format!("disp{j}")), ConvSpec::new(dec[j], 1, 3).reflect()))
            .collect::<Result<_>>()?;
        Ok(MultiScaleDecoder {
            nodes,
            heads,
            enc,
            dec,
            skip,
        })
    }

    pub fn scales(&self) -> usize {
        self.heads.len()
    }

    pub fn skip_mode(&self) -> SkipMode {
        self.skip
    }

    pub fn forward(&self, feats: &[Tensor]) -> Result<DecoderOutput> {
        if feats.len() != 5 {
            return Err(Error::Shape(format!("decoder expects 5 feature maps, got {}", feats.len())));
        }
        for (k, f) in feats.iter().enumerate() {
            if f.dim(1)? != self.enc[k] {
                return Err(Error::Shape(format!(
                    "feature f_e[{}] has {} channels, decoder built for {}",
                    k + 1,
                    f.dim(1)?,
                    self.enc[k]
                )));
            }
        }
        let mut out = vec![None; 5];
        let mut concat_channels = [0; 5];
        let mut pooled_edges = Vec::new();
        let mut x = feats[4].clone();
        for i in (0..5).rev() {
            let node = &self.nodes[i];
            let u = upsample2(&node.up.forward(&x)?.elu(1.0)?)?;
            let input = if i == 0 {
                u
            } else {
                let f = &feats[i - 1];
                let (_, _, h, w) = f.dims4()?;
                if u.dims()[2..] != [h, w] {
                    return Err(Error::Shape(format!(
                        "decoder node {i}: upsampled map {:?} does not match f_e[{i}] {:?}",
                        &u.dims()[2..],
                        [h, w]
                    )));
                }
                let mut parts = vec![f.clone()];
                if self.skip == SkipMode::MultiScale {
                    for (k, fk) in feats.iter().enumerate().take(i - 1) {
                        let factor = 1usize << (i - 1 - k);
                        parts.push(fk.max_pool2d(factor)?);
                        pooled_edges.push((k + 1, i));
                    }
                }
                parts.push(u);
                let cat = Tensor::cat(&parts, 1)?;
                let expect = node_input_channels(i, &self.enc, &self.dec, self.skip);
                if cat.dim(1)? != expect {
                    return Err(Error::Shape(format!(
                        "decoder node {i}: concatenation has {} channels, expected {expect}",
                        cat.dim(1)?
                    )));
                }
                cat
            };
            concat_channels[i] = input.dim(1)?;
            x = node.fuse.forward(&input)?.elu(1.0)?;
            out[i] = Some(x.clone());
        }
        let nodes: Vec<Tensor> = out.into_iter().map(|t| t.expect("all nodes computed")).collect();
        let disparities = self
            .heads
            .iter()
            .enumerate()
            .map(|(j, h)| Ok(sigmoid(&h.forward(&nodes[j])?)?))
            .collect::<Result<_>>()?;
        Ok(DecoderOutput {
            nodes,
            disparities,
            concat_channels,
            pooled_edges,
        })
    }
}
