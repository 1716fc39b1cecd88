use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use super::{auto_mask, min_reprojection, photometric_error, PhotometricConfig};
use crate::error::{Error, Result};
use crate::geometry::{disparity_to_depth_tensor, inverse_warp, CameraTensors, DepthRange, PoseTensors};
use crate::ops::resize_bilinear;

/// Error assigned to samples that fall outside the source image or behind
/// the camera. It loses every minimum against a valid sample and, when both
/// sources are invalid, the auto-mask drops the pixel.
const INVALID_ERROR: f64 = 1e3;

/// Frames `I_{k-1}, I_k, I_{k+1}` as `(N, C, H, W)` tensors.
#[derive(Clone, Debug)]
pub struct TripletTensors {
    pub prev: Tensor,
    pub target: Tensor,
    pub next: Tensor,
}

/// Target-to-source motions for the previous and next frames.
#[derive(Clone, Debug)]
pub struct SourcePoses {
    pub prev: PoseTensors,
    pub next: PoseTensors,
}

#[derive(Debug)]
pub struct LossTerms {
    pub total: Tensor,
    pub per_scale: Vec<Tensor>,
    /// Fraction of pixels kept by the auto-mask, averaged over scales.
    pub mask_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_scale: Vec<f64>,
    pub mask_fraction: f64,
}

impl LossTerms {
    pub fn breakdown(&self) -> Result<LossBreakdown> {
        let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?) };
        Ok(LossBreakdown {
            total: scalar(&self.total)?,
            per_scale: self.per_scale.iter().map(scalar).collect::<Result<_>>()?,
            mask_fraction: self.mask_fraction,
        })
    }
}

fn masked_error(target: &Tensor, synth: &Tensor, valid: &Tensor, cfg: &PhotometricConfig) -> Result<Tensor> {
    let pe = photometric_error(target, synth, cfg)?;
    let fallback = Tensor::full(INVALID_ERROR, pe.shape(), pe.device())?.to_dtype(pe.dtype())?;
    Ok(valid.ne(0.0)?.where_cond(&pe, &fallback)?)
}

/// Edge-aware first-order smoothness of the mean-normalized disparity.
fn smoothness(disp: &Tensor, image: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = disp.dims4()?;
    let mean = disp.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    let d = disp.broadcast_div(&(mean + 1e-7)?)?;
    let img = resize_bilinear(image, h, w)?;
    let dx = |t: &Tensor| -> Result<Tensor> { Ok((t.narrow(3, 1, w - 1)? - t.narrow(3, 0, w - 1)?)?.abs()?) };
    let dy = |t: &Tensor| -> Result<Tensor> { Ok((t.narrow(2, 1, h - 1)? - t.narrow(2, 0, h - 1)?)?.abs()?) };
    let wx = dx(&img)?.mean_keepdim(1)?.neg()?.exp()?;
    let wy = dy(&img)?.mean_keepdim(1)?.neg()?.exp()?;
    let sx = (dx(&d)? * wx)?.mean_all()?;
    let sy = (dy(&d)? * wy)?.mean_all()?;
    Ok((sx + sy)?)
}

/// Multi-scale masked minimum-reprojection loss.
///
/// Each disparity map `(N, 1, h_j, w_j)` is upsampled to the frame size,
/// converted to depth and used to warp both source frames into the target
/// view. The per-pixel minimum error is kept where it beats the unwarped
/// error, averaged over all pixels, then averaged over scales.
pub fn total_loss(
    disparities: &[Tensor],
    frames: &TripletTensors,
    poses: &SourcePoses,
    cam: &CameraTensors,
    range: DepthRange,
    cfg: &PhotometricConfig,
) -> Result<LossTerms> {
    if disparities.is_empty() {
        return Err(Error::InvalidInput("no disparity maps given".into()));
    }
    let (_, _, h, w) = frames.target.dims4()?;
    for f in [&frames.prev, &frames.next] {
        super::same_shape(f, &frames.target)?;
    }
    let id_prev = photometric_error(&frames.target, &frames.prev, cfg)?;
    let id_next = photometric_error(&frames.target, &frames.next, cfg)?;
    let (identity_min, _) = min_reprojection(&id_prev, &id_next)?;

    let mut per_scale = Vec::with_capacity(disparities.len());
    let mut mask_sum = 0.0;
    for (j, disp) in disparities.iter().enumerate() {
        let full = if disp.dims()[2..] == [h, w] { disp.clone() } else { resize_bilinear(disp, h, w)? };
        let depth = disparity_to_depth_tensor(&full, range)?;
        let (synth_prev, valid_prev) = inverse_warp(&frames.prev, &depth, &poses.prev, cam)?;
        let (synth_next, valid_next) = inverse_warp(&frames.next, &depth, &poses.next, cam)?;
        let pe_prev = masked_error(&frames.target, &synth_prev, &valid_prev, cfg)?;
        let pe_next = masked_error(&frames.target, &synth_next, &valid_next, cfg)?;
        let (min, _) = min_reprojection(&pe_prev, &pe_next)?;
        let mask = auto_mask(&min, &identity_min)?;
        mask_sum += mask.to_dtype(candle_core::DType::F64)?.mean_all()?.to_scalar::<f64>()?;
        let mut l = (min * &mask)?.mean_all()?;
        if cfg.smoothness > 0.0 {
            let s = smoothness(disp, &frames.target)?;
            l = (l + (s * (cfg.smoothness / (1u32 << j) as f64))?)?;
        }
        per_scale.push(l);
    }
    let n = per_scale.len() as f64;
    let total = (Tensor::stack(&per_scale, 0)?.sum_all()? / n)?;
    Ok(LossTerms {
        total,
        per_scale,
        mask_fraction: mask_sum / n,
    })
}
