use candle_core::Tensor;

use super::{same_shape, PhotometricConfig};
use crate::error::Result;
use crate::ops::{box_filter_valid, reflect_pad};

/// Windowed SSIM with reflection padding and a box window, averaged over
/// channels. Returns `(N, 1, H, W)` with values in `[-1, 1]`.
pub fn ssim(a: &Tensor, b: &Tensor, cfg: &PhotometricConfig) -> Result<Tensor> {
    same_shape(a, b)?;
    let k = cfg.ssim_window;
    let x = reflect_pad(a, k / 2)?;
    let y = reflect_pad(b, k / 2)?;
    let mu_x = box_filter_valid(&x, k)?;
    let mu_y = box_filter_valid(&y, k)?;
    let mu_xx = mu_x.sqr()?;
    let mu_yy = mu_y.sqr()?;
    let mu_xy = (&mu_x * &mu_y)?;
    let sigma_x = (box_filter_valid(&x.sqr()?, k)? - &mu_xx)?;
    let sigma_y = (box_filter_valid(&y.sqr()?, k)? - &mu_yy)?;
    let sigma_xy = (box_filter_valid(&(&x * &y)?, k)? - &mu_xy)?;
    let num = ((mu_xy * 2.0)? + cfg.c1)?.mul(&((sigma_xy * 2.0)? + cfg.c2)?)?;
    let den = ((mu_xx + mu_yy)? + cfg.c1)?.mul(&((sigma_x + sigma_y)? + cfg.c2)?)?;
    Ok((num / den)?.mean_keepdim(1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::tensor_to_f64;
    use candle_core::Device;

    #[test]
    fn identical_inputs_give_one() {
        let v: Vec<f64> = (0..36).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let a = Tensor::from_vec(v, (1, 1, 6, 6), &Device::Cpu).unwrap();
        let s = tensor_to_f64(&ssim(&a, &a, &PhotometricConfig::default()).unwrap()).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn anticorrelated_patch_is_negative() {
        let v: Vec<f64> = (0..16).map(|i| if (i / 4 + i % 4) % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let a = Tensor::from_vec(v, (1, 1, 4, 4), &Device::Cpu).unwrap();
        let b = (a.neg().unwrap() + 1.0).unwrap();
        let s = tensor_to_f64(&ssim(&a, &b, &PhotometricConfig::default()).unwrap()).unwrap();
        assert!(s.iter().all(|v| *v < 0.0 && *v >= -1.0));
    }
}
