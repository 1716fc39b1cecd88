use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels. Stored on disk as JSON with the keys
/// `fx, fy, cx, cy, width, height`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image size must be nonzero".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let k: CameraIntrinsics = serde_json::from_slice(&bytes)?;
        k.validate()?;
        Ok(k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Intrinsics after resizing the image to `width × height`.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    /// Intrinsics after adding `top`/`left` rows/columns in front of the image
    /// and growing it to `width × height`.
    pub fn padded(&self, top: usize, left: usize, width: usize, height: usize) -> Self {
        CameraIntrinsics {
            cx: self.cx + left as f64,
            cy: self.cy + top as f64,
            width,
            height,
            ..*self
        }
    }

    /// Intrinsics of the `width × height` window starting at (`top`, `left`).
    pub fn cropped(&self, top: usize, left: usize, width: usize, height: usize) -> Self {
        CameraIntrinsics {
            cx: self.cx - left as f64,
            cy: self.cy - top as f64,
            width,
            height,
            ..*self
        }
    }

    pub fn flipped_horizontally(&self) -> Self {
        CameraIntrinsics {
            cx: (self.width - 1) as f64 - self.cx,
            ..*self
        }
    }
}
