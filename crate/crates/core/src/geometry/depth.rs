use candle_core::Tensor;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounds of the depth produced from a sigmoid disparity via
/// `D = 1 / (a σ + b)` with `a = 1/d_min - 1/d_max`, `b = 1/d_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl DepthRange {
    /// Range used for the MVSEC-like profile.
    pub const MVSEC: DepthRange = DepthRange { min: 0.1, max: 100.0 };
    /// Range used for the DSEC-like profile.
    pub const DSEC: DepthRange = DepthRange { min: 0.1, max: 60.0 };

    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && min < max && max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "depth range needs 0 < d_min < d_max, got [{min}, {max}]"
            )));
        }
        Ok(DepthRange { min, max })
    }

    pub fn scale(&self) -> f64 {
        1.0 / self.min - 1.0 / self.max
    }

    pub fn offset(&self) -> f64 {
        1.0 / self.max
    }

    pub fn depth(&self, sigma: f64) -> f64 {
        1.0 / (self.scale() * sigma + self.offset())
    }

    pub fn disparity(&self, depth: f64) -> f64 {
        (1.0 / depth - self.offset()) / self.scale()
    }
}

/// Dense per-pixel depth with every value inside `range`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub values: Array2<f32>,
    pub range: DepthRange,
}

impl DepthMap {
    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// Converts a sigmoid disparity map to depth. Values outside `[0, 1]` are
/// rejected: the network head must be sigmoid-bounded.
pub fn disparity_to_depth(sigma: &Array2<f32>, range: DepthRange) -> Result<DepthMap> {
    if let Some(((r, c), v)) = sigma.indexed_iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!(
            "disparity {v} at ({r}, {c}) lies outside [0, 1]"
        )));
    }
    let (a, b) = (range.scale(), range.offset());
    let values = sigma.mapv(|s| {
        let d = 1.0 / (a * s as f64 + b);
        d.clamp(range.min, range.max) as f32
    });
    Ok(DepthMap { values, range })
}

/// Tensor form of [`disparity_to_depth`], differentiable in `sigma`.
pub fn disparity_to_depth_tensor(sigma: &Tensor, range: DepthRange) -> candle_core::Result<Tensor> {
    sigma.affine(range.scale(), range.offset())?.recip()
}
