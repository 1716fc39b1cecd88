//! Cross-modal self-supervision: SSIM, photometric error, per-pixel minimum
//! reprojection, auto-masking and the multi-scale masked training loss.
//!
//! Every function here works on `(N, C, H, W)` tensors and is
//! differentiable with respect to disparities and pose vectors.

mod loss;
mod ssim;

pub use loss::{total_loss, LossBreakdown, LossTerms, SourcePoses, TripletTensors};
pub use ssim::ssim;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotometricConfig {
    /// Weight of the SSIM term against the L1 term.
    pub alpha: f64,
    pub ssim_window: usize,
    pub c1: f64,
    pub c2: f64,
    pub scales: usize,
    /// Edge-aware disparity smoothness weight; zero disables the term.
    #[serde(default)]
    pub smoothness: f64,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        PhotometricConfig {
            alpha: 0.85,
            ssim_window: 3,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
            scales: 4,
            smoothness: 0.0,
        }
    }
}

impl PhotometricConfig {
    pub fn with_scales(scales: usize) -> Self {
        PhotometricConfig {
            scales,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.ssim_window % 2 == 0 || self.ssim_window == 0 {
            return Err(Error::Config(format!("ssim window must be odd, got {}", self.ssim_window)));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::Config("SSIM stabilizers must be positive".into()));
        }
        if self.scales == 0 {
            return Err(Error::Config("at least one scale is required".into()));
        }
        if self.smoothness < 0.0 {
            return Err(Error::Config("smoothness weight must be non-negative".into()));
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Per-pixel `α/2 (1 - SSIM) + (1 - α) |a - b|`, both terms averaged over
/// channels. `(1 - SSIM) / 2` is clamped to `[0, 1]` so rounding never makes
/// the error negative. Returns `(N, 1, H, W)`.
pub fn photometric_error(target: &Tensor, synth: &Tensor, cfg: &PhotometricConfig) -> Result<Tensor> {
    same_shape(target, synth)?;
    let l1 = (target - synth)?.abs()?.mean_keepdim(1)?;
    if cfg.alpha == 0.0 {
        return Ok(l1);
    }
    let s = ssim(target, synth, cfg)?;
    let dssim = ((s.neg()? + 1.0)? * 0.5)?.clamp(0.0, 1.0)?;
    Ok(((dssim * cfg.alpha)? + (l1 * (1.0 - cfg.alpha))?)?)
}

/// Per-pixel minimum over the previous and next source errors. The second
/// tensor is 1 (u8) where the next source won; ties go to the previous one.
pub fn min_reprojection(pe_prev: &Tensor, pe_next: &Tensor) -> Result<(Tensor, Tensor)> {
    same_shape(pe_prev, pe_next)?;
    let next_wins = pe_next.lt(pe_prev)?;
    let min = next_wins.where_cond(pe_next, pe_prev)?;
    Ok((min, next_wins))
}

/// Binary mask (same dtype as the inputs): 1 where the warped error is
/// strictly below the unwarped one.
pub fn auto_mask(pe_warped_min: &Tensor, pe_identity_min: &Tensor) -> Result<Tensor> {
    same_shape(pe_warped_min, pe_identity_min)?;
    Ok(pe_warped_min.lt(pe_identity_min)?.to_dtype(pe_warped_min.dtype())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::tensor_to_f64;
    use candle_core::{DType, Device};
    use proptest::prelude::*;

    fn full(v: f64, shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::full(v, shape, &Device::Cpu).unwrap()
    }

    fn textured(h: usize, w: usize) -> Tensor {
        let v: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                0.5 + 0.3 * (0.9 * x).sin() * (0.7 * y).cos()
            })
            .collect();
        Tensor::from_vec(v, (1, 1, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn identical_frames_have_zero_error() {
        let img = textured(8, 8);
        let pe = photometric_error(&img, &img, &PhotometricConfig::default()).unwrap();
        assert!(tensor_to_f64(&pe).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_images_closed_form() {
        let cfg = PhotometricConfig {
            c1: 1e-4,
            c2: 9e-4,
            ..Default::default()
        };
        let pe = photometric_error(&full(0.5, (1, 1, 5, 5)), &full(0.7, (1, 1, 5, 5)), &cfg).unwrap();
        let expect: f64 = 0.425 * (1.0 - 0.7001 / 0.7401) + 0.15 * 0.2;
        assert!((expect - 0.05297).abs() < 1e-5);
        for v in tensor_to_f64(&pe).unwrap() {
            assert!((v - expect).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn zero_alpha_is_plain_l1() {
        let cfg = PhotometricConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let a = textured(6, 6);
        let b = (&a * 0.5).unwrap();
        let pe = tensor_to_f64(&photometric_error(&a, &b, &cfg).unwrap()).unwrap();
        let l1 = tensor_to_f64(&(&a - &b).unwrap().abs().unwrap()).unwrap();
        assert_eq!(pe, l1);
    }

    #[test]
    fn multichannel_l1_averages_channels() {
        let cfg = PhotometricConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let a = full(0.0, (1, 3, 4, 4));
        let b = Tensor::cat(&[full(0.3, (1, 1, 4, 4)), full(0.0, (1, 2, 4, 4))], 1).unwrap();
        let pe = tensor_to_f64(&photometric_error(&a, &b, &cfg).unwrap()).unwrap();
        assert!(pe.iter().all(|v| (v - 0.1).abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = PhotometricConfig::default();
        assert!(matches!(
            photometric_error(&full(0.0, (1, 1, 4, 4)), &full(0.0, (1, 1, 4, 5)), &cfg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn min_reprojection_picks_lower_and_breaks_ties_to_prev() {
        let (l, arg) = min_reprojection(&full(0.3, (1, 1, 2, 2)), &full(0.1, (1, 1, 2, 2))).unwrap();
        assert!(tensor_to_f64(&l).unwrap().iter().all(|v| (v - 0.1).abs() < 1e-12));
        assert!(tensor_to_f64(&arg).unwrap().iter().all(|v| *v == 1.0));
        let (_, arg) = min_reprojection(&full(0.2, (1, 1, 2, 2)), &full(0.2, (1, 1, 2, 2))).unwrap();
        assert!(tensor_to_f64(&arg).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn occluded_source_is_ignored() {
        // Left half: prev is occluded (high error); right half: next is.
        let prev: Vec<f64> = (0..8).map(|i| if i % 4 < 2 { 0.9 } else { 0.05 }).collect();
        let next: Vec<f64> = (0..8).map(|i| if i % 4 < 2 { 0.02 } else { 0.8 }).collect();
        let p = Tensor::from_vec(prev, (1, 1, 2, 4), &Device::Cpu).unwrap();
        let n = Tensor::from_vec(next, (1, 1, 2, 4), &Device::Cpu).unwrap();
        let (l, _) = min_reprojection(&p, &n).unwrap();
        assert_eq!(tensor_to_f64(&l).unwrap(), vec![0.02, 0.02, 0.05, 0.05, 0.02, 0.02, 0.05, 0.05]);
    }

    #[test]
    fn auto_mask_is_strict() {
        let m = auto_mask(&full(0.0, (1, 1, 2, 2)), &full(0.0, (1, 1, 2, 2))).unwrap();
        assert!(tensor_to_f64(&m).unwrap().iter().all(|v| *v == 0.0));
        let m = auto_mask(&full(0.01, (1, 1, 2, 2)), &full(0.2, (1, 1, 2, 2))).unwrap();
        assert!(tensor_to_f64(&m).unwrap().iter().all(|v| *v == 1.0));
        assert_eq!(m.dtype(), DType::F64);
    }

    #[test]
    fn config_validation() {
        assert!(PhotometricConfig::default().validate().is_ok());
        let bad = PhotometricConfig {
            ssim_window: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PhotometricConfig {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn errors_are_nonnegative_and_min_is_bounded(seed in 0u64..1000) {
            let mk = |s: u64| {
                let v: Vec<f64> = (0..64).map(|i| (((i as u64 * 2654435761 + s * 97) % 1000) as f64) / 1000.0).collect();
                Tensor::from_vec(v, (1, 1, 8, 8), &Device::Cpu).unwrap()
            };
            let cfg = PhotometricConfig::default();
            let (t, a, b) = (mk(seed), mk(seed + 1), mk(seed + 2));
            let pa = photometric_error(&t, &a, &cfg).unwrap();
            let pb = photometric_error(&t, &b, &cfg).unwrap();
            let (l, _) = min_reprojection(&pa, &pb).unwrap();
            let (va, vb, vl) = (tensor_to_f64(&pa).unwrap(), tensor_to_f64(&pb).unwrap(), tensor_to_f64(&l).unwrap());
            for i in 0..va.len() {
                prop_assert!(va[i] >= -1e-12 && vb[i] >= -1e-12);
                prop_assert!(vl[i] <= va[i] && vl[i] <= vb[i]);
            }
        }

        #[test]
        fn l1_argmin_is_scale_equivariant(c in 0.1f64..0.9, d1 in -0.1f64..0.1, d2 in -0.1f64..0.1, s in 0.01f64..=1.0) {
            let cfg = PhotometricConfig { alpha: 0.0, ..Default::default() };
            let arg = |scale: f64| {
                let t = full(c * scale, (1, 1, 3, 3));
                let p = full((c + d1) * scale, (1, 1, 3, 3));
                let n = full((c + d2) * scale, (1, 1, 3, 3));
                let pp = photometric_error(&t, &p, &cfg).unwrap();
                let pn = photometric_error(&t, &n, &cfg).unwrap();
                tensor_to_f64(&min_reprojection(&pp, &pn).unwrap().1).unwrap()
            };
            prop_assume!((d1.abs() - d2.abs()).abs() > 1e-9);
            prop_assert_eq!(arg(1.0), arg(s));
        }
    }
}
