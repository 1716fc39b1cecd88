//! Asynchronous event streams: parsing, fixed-interval windowing and the
//! B×H×W spatiotemporal voxel grid fed to the depth network.

mod io;
mod voxel;
mod window;

pub use io::{header_path, read_events, read_events_bin, read_events_csv, write_events_bin, EventFileHeader};
pub use voxel::{density, voxelize, voxelize_with, TimeOrigin, VoxelGrid};
pub use window::{slice_windows, EventWindow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temporal bins of the default voxel grid.
pub const DEFAULT_BINS: usize = 5;
/// Default window length in seconds (50 ms).
pub const DEFAULT_WINDOW_SECS: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    /// Maps a raw polarity code. Both `{-1, +1}` and `{0, 1}` encodings are
    /// accepted; `0` is read as negative.
    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            1 => Ok(Polarity::Positive),
            0 | -1 => Ok(Polarity::Negative),
            other => Err(Error::InvalidInput(format!("polarity code {other} is not one of -1, 0, 1"))),
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    pub fn code(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

/// A single brightness-change record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Timestamp in seconds.
    pub t: f64,
    /// Pixel column.
    pub x: u16,
    /// Pixel row.
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: f64, x: u16, y: u16, p: Polarity) -> Self {
        Event { t, x, y, p }
    }
}
