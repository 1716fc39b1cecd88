//! Sequence directories on disk, training samples, preprocessing profiles,
//! augmentation and a synthetic event-camera simulator.

mod augment;
mod layout;
mod preprocess;
mod synth;

pub use augment::{augment, color_jitter, flip_sample, JitterParams, BRIGHTNESS_RANGE, CONTRAST_RANGE, HUE_RANGE, SATURATION_RANGE};
pub use layout::*;
pub use preprocess::{preprocess, preprocess_depth, preprocess_voxel, Profile};
pub use synth::{render_view, synth_scene, Plane, SceneConfig, SynthSummary, Texture};

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::events::{read_events_bin, slice_windows, voxelize_with, EventWindow, TimeOrigin, VoxelGrid};
use crate::geometry::{CameraIntrinsics, RigidTransform};

/// Previous, current and next intensity frames, each `(C, H, W)` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTriplet {
    pub prev: Array3<f32>,
    pub target: Array3<f32>,
    pub next: Array3<f32>,
    pub timestamps: [f64; 3],
    pub camera: CameraIntrinsics,
}

impl FrameTriplet {
    pub fn validate(&self) -> Result<()> {
        let d = self.target.dim();
        if self.prev.dim() != d || self.next.dim() != d {
            return Err(Error::Shape(format!(
                "triplet frames differ: {:?} / {:?} / {:?}",
                self.prev.dim(),
                d,
                self.next.dim()
            )));
        }
        if d.0 != 1 && d.0 != 3 {
            return Err(Error::Shape(format!("frames must have 1 or 3 channels, got {}", d.0)));
        }
        if !(self.timestamps[0] < self.timestamps[1] && self.timestamps[1] < self.timestamps[2]) {
            return Err(Error::InvalidInput(format!("triplet timestamps not increasing: {:?}", self.timestamps)));
        }
        if (self.camera.height, self.camera.width) != (d.1, d.2) {
            return Err(Error::Shape(format!(
                "intrinsics are for {}x{}, frames are {}x{}",
                self.camera.width, self.camera.height, d.2, d.1
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.target.dim().0
    }

    pub fn height(&self) -> usize {
        self.target.dim().1
    }

    pub fn width(&self) -> usize {
        self.target.dim().2
    }
}

/// One training or evaluation example centred on frame `index`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub index: usize,
    pub voxel: VoxelGrid,
    pub triplet: FrameTriplet,
    /// Ground-truth depth; non-finite or non-positive entries are invalid.
    pub gt_depth: Option<Array2<f32>>,
    /// Ground-truth motions target→previous and target→next.
    pub gt_motion: Option<[RigidTransform; 2]>,
}

impl TrainingSample {
    pub fn validate(&self) -> Result<()> {
        self.triplet.validate()?;
        let (h, w) = (self.triplet.height(), self.triplet.width());
        if (self.voxel.height(), self.voxel.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "voxel grid is {}x{}, frames are {w}x{h}",
                self.voxel.width(),
                self.voxel.height()
            )));
        }
        if let Some(d) = &self.gt_depth {
            if d.dim() != (h, w) {
                return Err(Error::Shape(format!("ground-truth depth is {:?}, frames are {:?}", d.dim(), (h, w))));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetOptions {
    pub bins: usize,
    pub window: f64,
    pub time_origin: TimeOrigin,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            bins: crate::events::DEFAULT_BINS,
            window: crate::events::DEFAULT_WINDOW_SECS,
            time_origin: TimeOrigin::WindowStart,
        }
    }
}

/// An opened sequence directory. Events are read once; frames, depth and
/// voxel grids are decoded on demand.
pub struct Sequence {
    root: PathBuf,
    camera: CameraIntrinsics,
    timestamps: Vec<f64>,
    windows: Vec<EventWindow>,
    poses: Option<Vec<RigidTransform>>,
    excluded: BTreeSet<usize>,
    opts: DatasetOptions,
}

impl Sequence {
    pub fn open(root: &Path, opts: DatasetOptions) -> Result<Self> {
        let camera = CameraIntrinsics::load(&root.join(CALIB_FILE))?;
        let timestamps = read_timestamps(&root.join(TIMESTAMPS_FILE))?;
        if timestamps.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "{}: {} frames, a triplet needs at least 3",
                root.display(),
                timestamps.len()
            )));
        }
        let (header, events) = read_events_bin(&root.join(EVENTS_FILE))?;
        if (header.height, header.width) != (camera.height, camera.width) {
            return Err(Error::Shape(format!(
                "event sensor is {}x{}, calibration says {}x{}",
                header.width, header.height, camera.width, camera.height
            )));
        }
        let windows = slice_windows(&events, &timestamps, opts.window)?;
        let pose_path = root.join(POSES_FILE);
        let poses = if pose_path.exists() {
            let p = read_poses(&pose_path)?;
            if p.len() != timestamps.len() {
                return Err(Error::format(
                    "poses",
                    format!("{} poses for {} frames", p.len(), timestamps.len()),
                ));
            }
            Some(p)
        } else {
            None
        };
        let excluded = read_exclusions(&root.join(EXCLUDE_FILE))?.into_iter().collect();
        Ok(Sequence {
            root: root.to_path_buf(),
            camera,
            timestamps,
            windows,
            poses,
            excluded,
            opts,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn camera(&self) -> &CameraIntrinsics {
        &self.camera
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn options(&self) -> &DatasetOptions {
        &self.opts
    }

    pub fn frame_count(&self) -> usize {
        self.timestamps.len()
    }

    pub fn window(&self, index: usize) -> Option<&EventWindow> {
        self.windows.get(index)
    }

    /// Frames with both neighbours that are not on the exclusion list.
    pub fn sample_indices(&self) -> Vec<usize> {
        (1..self.frame_count() - 1).filter(|i| !self.excluded.contains(i)).collect()
    }

    /// Every frame not on the exclusion list (the evaluation index).
    pub fn frame_indices(&self) -> Vec<usize> {
        (0..self.frame_count()).filter(|i| !self.excluded.contains(i)).collect()
    }

    pub fn voxel(&self, index: usize) -> Result<VoxelGrid> {
        let w = self
            .windows
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("frame {index} out of range")))?;
        voxelize_with(w, self.opts.bins, self.camera.height, self.camera.width, self.opts.time_origin)
    }

    pub fn frame(&self, index: usize) -> Result<Array3<f32>> {
        let f = read_frame(&frame_path(&self.root, index))?;
        if (f.dim().1, f.dim().2) != (self.camera.height, self.camera.width) {
            return Err(Error::Shape(format!(
                "frame {index} is {}x{}, calibration says {}x{}",
                f.dim().2,
                f.dim().1,
                self.camera.width,
                self.camera.height
            )));
        }
        Ok(f)
    }

    pub fn depth(&self, index: usize) -> Result<Option<Array2<f32>>> {
        let p = depth_path(&self.root, index);
        if !p.exists() {
            return Ok(None);
        }
        read_depth(&p).map(Some)
    }

    pub fn load_sample(&self, index: usize) -> Result<TrainingSample> {
        if index == 0 || index + 1 >= self.frame_count() {
            return Err(Error::InvalidInput(format!(
                "frame {index} has no neighbour on both sides (sequence has {} frames)",
                self.frame_count()
            )));
        }
        let triplet = FrameTriplet {
            prev: self.frame(index - 1)?,
            target: self.frame(index)?,
            next: self.frame(index + 1)?,
            timestamps: [self.timestamps[index - 1], self.timestamps[index], self.timestamps[index + 1]],
            camera: self.camera,
        };
        let gt_motion = self.poses.as_ref().map(|p| {
            let to_cam = p[index];
            [
                p[index - 1].inverse().compose(&to_cam),
                p[index + 1].inverse().compose(&to_cam),
            ]
        });
        let sample = TrainingSample {
            index,
            voxel: self.voxel(index)?,
            triplet,
            gt_depth: self.depth(index)?,
            gt_motion,
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Mean event count of each frame's window.
    pub fn window_counts(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.len()).collect()
    }
}

/// Writes `exclude.txt` listing frames whose window holds fewer than
/// `min_events` events. Returns the excluded indices.
pub fn write_static_exclusions(root: &Path, min_events: usize) -> Result<Vec<usize>> {
    let seq = Sequence::open(root, DatasetOptions::default())?;
    let idx: Vec<usize> = seq
        .window_counts()
        .iter()
        .enumerate()
        .filter(|(_, c)| **c < min_events)
        .map(|(i, _)| i)
        .collect();
    write_exclusions(&root.join(EXCLUDE_FILE), &idx)?;
    Ok(idx)
}

/// Training and validation sequences of a dataset root. A root holding
/// `train/` (and optionally `val/`) is split; otherwise the root itself is
/// the only training sequence.
pub fn split_dirs(root: &Path) -> Result<(PathBuf, Option<PathBuf>)> {
    if root.join("train").is_dir() {
        let val = root.join("val");
        Ok((root.join("train"), val.is_dir().then_some(val)))
    } else if root.join(EVENTS_FILE).exists() {
        Ok((root.to_path_buf(), None))
    } else {
        Err(Error::InvalidInput(format!(
            "{}: neither a sequence directory nor a dataset with train/",
            root.display()
        )))
    }
}
