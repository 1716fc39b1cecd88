use candle_core::{Tensor, Var};

use super::params::{Init, Scope};
use crate::error::Result;
use crate::ops::reflect_pad;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zeros,
    Reflect,
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    pad: usize,
    padding: Padding,
    in_ch: usize,
    out_ch: usize,
}

pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        ConvSpec {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            pad: kernel / 2,
            bias: true,
            padding: Padding::Zeros,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn reflect(mut self) -> Self {
        self.padding = Padding::Reflect;
        self
    }
}

impl Conv2d {
    /// Residual-backbone convolution: He-normal weights over the fan-out.
    pub fn he(scope: &Scope, spec: ConvSpec) -> Result<Self> {
        let fan = spec.out_ch * spec.kernel * spec.kernel;
        Self::build(scope, spec, Init::KaimingNormal { fan })
    }

    /// Decoder-style convolution: uniform weights and bias in ±1/sqrt(fan-in).
    pub fn uniform(scope: &Scope, spec: ConvSpec) -> Result<Self> {
        let bound = 1.0 / ((spec.in_ch * spec.kernel * spec.kernel) as f64).sqrt();
        Self::build(scope, spec, Init::Uniform { bound })
    }

    fn build(scope: &Scope, spec: ConvSpec, init: Init) -> Result<Self> {
        let weight = scope.get("weight", &[spec.out_ch, spec.in_ch, spec.kernel, spec.kernel], init)?;
        let bias = if spec.bias {
            let bound = 1.0 / ((spec.in_ch * spec.kernel * spec.kernel) as f64).sqrt();
            Some(scope.get("bias", &[spec.out_ch], Init::Uniform { bound })?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            stride: spec.stride,
            pad: spec.pad,
            padding: spec.padding,
            in_ch: spec.in_ch,
            out_ch: spec.out_ch,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        // Maps too small to reflect fall back to zero padding.
        let y = if self.padding == Padding::Reflect && self.pad > 0 && h > self.pad && w > self.pad {
            reflect_pad(x, self.pad)?.conv2d(&self.weight, 0, self.stride, 1, 1)?
        } else {
            x.conv2d(&self.weight, self.pad, self.stride, 1, 1)?
        };
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, self.out_ch, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Batch normalization with running statistics stored as non-trainable
/// parameters so they travel with checkpoints.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
    channels: usize,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm2d {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            weight: scope.get("weight", &[channels], Init::Ones)?,
            bias: scope.get("bias", &[channels], Init::Zeros)?,
            running_mean: scope.get_buffer("running_mean", &[channels], Init::Zeros)?,
            running_var: scope.get_buffer("running_var", &[channels], Init::Ones)?,
            channels,
        })
    }

    /// Normalizes with batch statistics (and updates the running ones) when
    /// `train` is set, otherwise with the running statistics.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = self.channels;
        let (mean, var) = if train {
            let (n, _, h, w) = x.dims4()?;
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let var = x.broadcast_sub(&mean)?.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let count = (n * h * w) as f64;
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = mean.detach().flatten_all()?;
            let v = (var.detach().flatten_all()? * unbiased)?;
            let rm = ((self.running_mean.as_tensor() * (1.0 - BN_MOMENTUM))? + (m * BN_MOMENTUM)?)?;
            let rv = ((self.running_var.as_tensor() * (1.0 - BN_MOMENTUM))? + (v * BN_MOMENTUM)?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            )
        };
        let xhat = x.broadcast_sub(&mean)?.broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
        Ok(xhat
            .broadcast_mul(&self.weight.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Upsamples by two with bilinear interpolation.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(crate::ops::resize_bilinear(x, 2 * h, 2 * w)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::params::ParamStore;
    use candle_core::{DType, Device};

    #[test]
    fn batch_norm_normalizes_and_tracks_statistics() {
        let store = ParamStore::new(0, DType::F64);
        let bn = BatchNorm2d::new(&Scope::root(&store, "bn"), 1).unwrap();
        let x = Tensor::from_vec(vec![1.0f64, 3.0, 5.0, 7.0], (1, 1, 2, 2), &Device::Cpu).unwrap();
        let y = bn.forward(&x, true).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let sd = (5.0f64 + BN_EPS).sqrt();
        assert!((y[0] + 3.0 / sd).abs() < 1e-12);
        let rm = bn.running_mean.as_tensor().to_vec1::<f64>().unwrap()[0];
        let rv = bn.running_var.as_tensor().to_vec1::<f64>().unwrap()[0];
        assert!((rm - 0.4).abs() < 1e-12);
        assert!((rv - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
        let e = bn.forward(&x, false).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!((e[0] - (1.0 - rm) / (rv + BN_EPS).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn reflect_conv_keeps_size_and_small_maps_fall_back() {
        let store = ParamStore::new(0, DType::F32);
        let conv = Conv2d::uniform(&Scope::root(&store, "c"), ConvSpec::new(2, 3, 3).reflect()).unwrap();
        let x = Tensor::ones((1, 2, 5, 4), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[1, 3, 5, 4]);
        let x = Tensor::ones((1, 2, 1, 1), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[1, 3, 1, 1]);
    }

    #[test]
    fn strided_conv_halves() {
        let store = ParamStore::new(0, DType::F32);
        let conv = Conv2d::he(&Scope::root(&store, "c"), ConvSpec::new(1, 4, 7).stride(2).no_bias()).unwrap();
        let x = Tensor::ones((2, 1, 32, 64), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[2, 4, 16, 32]);
    }
}
