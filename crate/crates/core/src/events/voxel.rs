use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::EventWindow;
use crate::error::{Error, Result};

/// Reference time for normalizing event timestamps onto the bin axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeOrigin {
    /// `t* = (B-1) (t - t_start) / ΔT` using the window's fixed start.
    #[default]
    WindowStart,
    /// `t* = (B-1) (t - t_first) / ΔT` using the window's first event.
    FirstEvent,
}

/// Signed spatiotemporal event encoding, laid out as `[bin, row, col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub data: Array3<f32>,
    pub t_start: f64,
    pub t_end: f64,
    pub frame_index: usize,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize) -> Self {
        VoxelGrid {
            data: Array3::zeros((bins, height, width)),
            t_start: 0.0,
            t_end: 0.0,
            frame_index: 0,
        }
    }

    pub fn bins(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// Per-pixel sum over bins (the signed event image).
    pub fn collapsed(&self) -> Array2<f32> {
        self.data.sum_axis(Axis(0))
    }

    /// Mirrors every bin along the column axis.
    pub fn flipped_horizontally(&self) -> Self {
        let mut data = self.data.clone();
        data.invert_axis(Axis(2));
        VoxelGrid {
            data: data.as_standard_layout().into_owned(),
            ..*self
        }
    }
}

/// Encodes a window as a `bins × height × width` grid with triangular
/// temporal weights, normalizing timestamps by the window start.
pub fn voxelize(window: &EventWindow, bins: usize, height: usize, width: usize) -> Result<VoxelGrid> {
    voxelize_with(window, bins, height, width, TimeOrigin::WindowStart)
}

pub fn voxelize_with(
    window: &EventWindow,
    bins: usize,
    height: usize,
    width: usize,
    origin: TimeOrigin,
) -> Result<VoxelGrid> {
    if bins < 2 {
        return Err(Error::InvalidInput(format!("voxel grid needs at least 2 bins, got {bins}")));
    }
    let span = window.duration();
    if !(span > 0.0) {
        return Err(Error::InvalidInput(format!(
            "window duration must be positive, got {span}"
        )));
    }
    let t0 = match origin {
        TimeOrigin::WindowStart => window.t_start,
        TimeOrigin::FirstEvent => window.events.first().map_or(window.t_start, |e| e.t),
    };
    let scale = (bins - 1) as f64 / span;
    let last = (bins - 1) as f64;

    let mut acc = vec![0f64; bins * height * width];
    for (i, e) in window.events.iter().enumerate() {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= width || y >= height {
            return Err(Error::InvalidInput(format!(
                "event {i} at ({x}, {y}) lies outside the {width}x{height} sensor"
            )));
        }
        if e.t < window.t_start || e.t > window.t_end {
            return Err(Error::InvalidInput(format!(
                "event {i} at t={} lies outside window [{}, {}]",
                e.t, window.t_start, window.t_end
            )));
        }
        let tn = ((e.t - t0) * scale).clamp(0.0, last);
        let lower = tn.floor();
        let frac = tn - lower;
        let b = lower as usize;
        let p = e.p.sign();
        let pix = y * width + x;
        acc[b * height * width + pix] += p * (1.0 - frac);
        if b + 1 < bins && frac > 0.0 {
            acc[(b + 1) * height * width + pix] += p * frac;
        }
    }

    let data = Array3::from_shape_vec((bins, height, width), acc.into_iter().map(|v| v as f32).collect())
        .expect("buffer sized from shape");
    Ok(VoxelGrid {
        data,
        t_start: window.t_start,
        t_end: window.t_end,
        frame_index: window.frame_index,
    })
}

/// Fraction of pixels where at least one bin is nonzero.
pub fn density(grid: &VoxelGrid) -> f64 {
    let (bins, h, w) = grid.data.dim();
    if h * w == 0 {
        return 0.0;
    }
    let mut active = 0usize;
    for y in 0..h {
        for x in 0..w {
            if (0..bins).any(|b| grid.data[[b, y, x]] != 0.0) {
                active += 1;
            }
        }
    }
    active as f64 / (h * w) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, Polarity};

    fn window_with(events: Vec<Event>) -> EventWindow {
        EventWindow::new(events, 1.0, 1.05, 3)
    }

    #[test]
    fn event_at_window_start_fills_bin_zero() {
        let w = window_with(vec![Event::new(1.0, 3, 4, Polarity::Positive)]);
        let g = voxelize(&w, 5, 8, 8).unwrap();
        assert_eq!(g.data[[0, 4, 3]], 1.0);
        assert_eq!(g.data.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(g.frame_index, 3);
    }

    #[test]
    fn event_at_mid_window_fills_middle_bin() {
        let w = EventWindow::new(vec![Event::new(0.025, 1, 2, Polarity::Positive)], 0.0, 0.05, 0);
        let g = voxelize(&w, 5, 4, 4).unwrap();
        assert!((g.data[[2, 2, 1]] - 1.0).abs() < 1e-6);
        assert!(g.data[[1, 2, 1]].abs() < 1e-6 && g.data[[3, 2, 1]].abs() < 1e-6);
    }

    #[test]
    fn fractional_time_splits_between_bins() {
        // t* = 4 * 0.375 = 1.5
        let w = EventWindow::new(vec![Event::new(0.375, 0, 0, Polarity::Negative)], 0.0, 1.0, 0);
        let g = voxelize(&w, 5, 2, 2).unwrap();
        assert!((g.data[[1, 0, 0]] + 0.5).abs() < 1e-6);
        assert!((g.data[[2, 0, 0]] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn event_at_window_end_fills_last_bin() {
        let w = window_with(vec![Event::new(1.05, 0, 0, Polarity::Positive)]);
        let g = voxelize(&w, 5, 1, 1).unwrap();
        assert!((g.data[[4, 0, 0]] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_window_is_all_zero() {
        let g = voxelize(&window_with(vec![]), 5, 6, 7).unwrap();
        assert_eq!(g.data.dim(), (5, 6, 7));
        assert!(g.data.iter().all(|v| *v == 0.0));
        assert_eq!(density(&g), 0.0);
    }

    #[test]
    fn first_event_origin_shifts_normalization() {
        let w = EventWindow::new(
            vec![
                Event::new(0.5, 0, 0, Polarity::Positive),
                Event::new(1.0, 0, 0, Polarity::Positive),
            ],
            0.0,
            1.0,
            0,
        );
        let g = voxelize_with(&w, 3, 1, 1, TimeOrigin::FirstEvent).unwrap();
        // t* = 0 and t* = 1 under the first-event origin.
        assert!((g.data[[0, 0, 0]] - 1.0).abs() < 1e-6);
        assert!((g.data[[1, 0, 0]] - 1.0).abs() < 1e-6);
        let g = voxelize(&w, 3, 1, 1).unwrap();
        assert!((g.data[[1, 0, 0]] - 1.0).abs() < 1e-6);
        assert!((g.data[[2, 0, 0]] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_out_of_bounds_pixel() {
        let w = window_with(vec![
            Event::new(1.01, 0, 0, Polarity::Positive),
            Event::new(1.02, 8, 0, Polarity::Positive),
        ]);
        let err = voxelize(&w, 5, 8, 8).unwrap_err();
        assert!(err.to_string().contains("event 1"));
    }

    #[test]
    fn rejects_degenerate_window_and_bins() {
        let w = EventWindow::new(vec![], 1.0, 1.0, 0);
        assert!(voxelize(&w, 5, 2, 2).is_err());
        assert!(voxelize(&window_with(vec![]), 1, 2, 2).is_err());
    }

    #[test]
    fn density_counts_active_pixels() {
        let w = window_with(vec![
            Event::new(1.01, 1, 1, Polarity::Positive),
            Event::new(1.03, 1, 1, Polarity::Negative),
        ]);
        let g = voxelize(&w, 5, 4, 4).unwrap();
        assert!((density(&g) - 1.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn horizontal_flip_is_involution() {
        let w = window_with(vec![Event::new(1.01, 0, 1, Polarity::Positive)]);
        let g = voxelize(&w, 5, 3, 4).unwrap();
        let f = g.flipped_horizontally();
        assert_eq!(f.collapsed()[[1, 3]], g.collapsed()[[1, 0]]);
        assert_eq!(f.flipped_horizontally(), g);
    }
}
