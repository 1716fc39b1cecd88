use std::str::FromStr;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::TrainingSample;
use crate::error::{Error, Result};
use crate::events::VoxelGrid;
use crate::models::ENCODER_STRIDE;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 260×346 sensor zero-padded (bottom/right) to 288×352.
    MvsecLike,
    /// 480×640 frames center-cropped to 320×640.
    DsecLike,
    /// Pass-through; dimensions must already be multiples of 32.
    #[default]
    None,
}

impl Profile {
    pub const MVSEC_INPUT: (usize, usize) = (260, 346);
    pub const MVSEC_PADDED: (usize, usize) = (288, 352);
    pub const DSEC_INPUT: (usize, usize) = (480, 640);
    pub const DSEC_CROPPED: (usize, usize) = (320, 640);

    pub fn name(&self) -> &'static str {
        match self {
            Profile::MvsecLike => "mvsec-like",
            Profile::DsecLike => "dsec-like",
            Profile::None => "none",
        }
    }

    /// Network input size for a sensor of `(h, w)`.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let expect = |want: (usize, usize)| {
            if (h, w) == want {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{} profile expects {}x{} input, got {w}x{h}",
                    self.name(),
                    want.1,
                    want.0
                )))
            }
        };
        match self {
            Profile::MvsecLike => expect(Self::MVSEC_INPUT).map(|_| Self::MVSEC_PADDED),
            Profile::DsecLike => expect(Self::DSEC_INPUT).map(|_| Self::DSEC_CROPPED),
            Profile::None => {
                if h % ENCODER_STRIDE != 0 || w % ENCODER_STRIDE != 0 || h == 0 || w == 0 {
                    Err(Error::Shape(format!(
                        "input {w}x{h} is not a multiple of {ENCODER_STRIDE}; choose a padding or cropping profile"
                    )))
                } else {
                    Ok((h, w))
                }
            }
        }
    }

    /// Color augmentation is only used on the RGB driving profile.
    pub fn color_jitter(&self) -> bool {
        matches!(self, Profile::DsecLike)
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mvsec-like" => Ok(Profile::MvsecLike),
            "dsec-like" => Ok(Profile::DsecLike),
            "none" => Ok(Profile::None),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected mvsec-like, dsec-like or none)"
            ))),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn pad3(a: &Array3<f32>, h: usize, w: usize, fill: f32) -> Array3<f32> {
    let (c, ih, iw) = a.dim();
    let mut out = Array3::from_elem((c, h, w), fill);
    out.slice_mut(s![.., ..ih, ..iw]).assign(a);
    out
}

fn pad2(a: &Array2<f32>, h: usize, w: usize, fill: f32) -> Array2<f32> {
    let (ih, iw) = a.dim();
    let mut out = Array2::from_elem((h, w), fill);
    out.slice_mut(s![..ih, ..iw]).assign(a);
    out
}

/// Applies a profile to a voxel grid alone (the inference path).
pub fn preprocess_voxel(voxel: &VoxelGrid, profile: Profile) -> Result<VoxelGrid> {
    let (h, w) = profile.output_size(voxel.height(), voxel.width())?;
    let data = match profile {
        Profile::MvsecLike => pad3(&voxel.data, h, w, 0.0),
        Profile::DsecLike => {
            let top = (voxel.height() - h) / 2;
            voxel.data.slice(s![.., top..top + h, ..]).to_owned()
        }
        Profile::None => return Ok(voxel.clone()),
    };
    Ok(VoxelGrid { data, ..*voxel })
}

/// Applies a profile to a ground-truth depth map; padding is invalid (NaN).
pub fn preprocess_depth(depth: &Array2<f32>, profile: Profile) -> Result<Array2<f32>> {
    let (ih, iw) = depth.dim();
    let (h, w) = profile.output_size(ih, iw)?;
    Ok(match profile {
        Profile::None => depth.clone(),
        Profile::MvsecLike => pad2(depth, h, w, f32::NAN),
        Profile::DsecLike => {
            let top = (ih - h) / 2;
            depth.slice(s![top..top + h, ..]).to_owned()
        }
    })
}

/// Brings a sample to the network input size of `profile`, adjusting the
/// intrinsics. Padded ground-truth pixels are marked invalid (NaN).
pub fn preprocess(sample: &TrainingSample, profile: Profile) -> Result<TrainingSample> {
    let (ih, iw) = (sample.triplet.height(), sample.triplet.width());
    let (h, w) = profile.output_size(ih, iw)?;
    let mut out = sample.clone();
    out.voxel = preprocess_voxel(&sample.voxel, profile)?;
    match profile {
        Profile::None => {}
        Profile::MvsecLike => {
            let t = &mut out.triplet;
            for f in [&mut t.prev, &mut t.target, &mut t.next] {
                *f = pad3(f, h, w, 0.0);
            }
            t.camera = t.camera.padded(0, 0, w, h);
        }
        Profile::DsecLike => {
            let top = (ih - h) / 2;
            let t = &mut out.triplet;
            for f in [&mut t.prev, &mut t.target, &mut t.next] {
                *f = f.slice(s![.., top..top + h, ..]).to_owned();
            }
            t.camera = t.camera.cropped(top, 0, w, h);
        }
    }
    out.gt_depth = sample.gt_depth.as_ref().map(|d| preprocess_depth(d, profile)).transpose()?;
    out.validate()?;
    Ok(out)
}
