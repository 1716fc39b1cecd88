use serde::{Deserialize, Serialize};

use super::Event;
use crate::error::{Error, Result};

/// Events of one fixed-length interval `(t_end - ΔT, t_end]`, where
/// `t_end` is the timestamp of intensity frame `frame_index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventWindow {
    pub events: Vec<Event>,
    pub t_start: f64,
    pub t_end: f64,
    pub frame_index: usize,
}

impl EventWindow {
    pub fn new(events: Vec<Event>, t_start: f64, t_end: f64, frame_index: usize) -> Self {
        EventWindow {
            events,
            t_start,
            t_end,
            frame_index,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }
}

/// Cuts a time-sorted event stream into one window per frame timestamp.
///
/// Window `k` covers `(T_k - window, T_k]`; the right end is closed so an
/// event stamped exactly at a frame time belongs to that frame. Windows are
/// independent, so they overlap whenever frames are closer than `window`.
/// Events outside every window are dropped.
pub fn slice_windows(stream: &[Event], frame_timestamps: &[f64], window: f64) -> Result<Vec<EventWindow>> {
    if !(window > 0.0) || !window.is_finite() {
        return Err(Error::InvalidInput(format!("window length must be positive, got {window}")));
    }
    if let Some(i) = stream.windows(2).position(|w| !(w[0].t <= w[1].t)) {
        return Err(Error::InvalidInput(format!(
            "event stream is not sorted by time: event {} (t={}) precedes event {} (t={})",
            i,
            stream[i].t,
            i + 1,
            stream[i + 1].t
        )));
    }
    if let Some(i) = frame_timestamps.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(format!(
            "frame timestamps must be strictly increasing (index {})",
            i + 1
        )));
    }

    Ok(frame_timestamps
        .iter()
        .enumerate()
        .map(|(k, &t_end)| {
            let t_start = t_end - window;
            let lo = stream.partition_point(|e| e.t <= t_start);
            let hi = stream.partition_point(|e| e.t <= t_end);
            EventWindow::new(stream[lo..hi.max(lo)].to_vec(), t_start, t_end, k)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Polarity;

    fn ev(t: f64) -> Event {
        Event::new(t, 0, 0, Polarity::Positive)
    }

    #[test]
    fn interval_membership() {
        let stream = [ev(0.01), ev(0.03), ev(0.06)];
        let w = slice_windows(&stream, &[0.05, 0.10], 0.05).unwrap();
        assert_eq!(w.len(), 2);
        let t0: Vec<f64> = w[0].events.iter().map(|e| e.t).collect();
        let t1: Vec<f64> = w[1].events.iter().map(|e| e.t).collect();
        assert_eq!(t0, vec![0.01, 0.03]);
        assert_eq!(t1, vec![0.06]);
        assert_eq!(w[1].frame_index, 1);
        assert!((w[1].duration() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn empty_stream_gives_empty_window() {
        let w = slice_windows(&[], &[1.0], 0.05).unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].is_empty());
    }

    #[test]
    fn right_end_is_closed() {
        let w = slice_windows(&[ev(0.5)], &[0.5, 0.55], 0.05).unwrap();
        assert_eq!(w[0].len(), 1);
        // (0.5, 0.55] excludes the event at 0.5.
        assert_eq!(w[1].len(), 0);
    }

    #[test]
    fn overlapping_windows_share_events() {
        let stream = [ev(0.02), ev(0.04)];
        let w = slice_windows(&stream, &[0.03, 0.05], 0.05).unwrap();
        assert_eq!(w[0].len(), 1);
        assert_eq!(w[1].len(), 2);
    }

    #[test]
    fn rejects_unsorted_stream() {
        let err = slice_windows(&[ev(0.2), ev(0.1)], &[0.3], 0.05).unwrap_err();
        assert!(err.to_string().contains("not sorted"));
    }

    #[test]
    fn rejects_non_positive_window() {
        assert!(slice_windows(&[], &[0.3], -0.05).is_err());
        assert!(slice_windows(&[], &[0.3], 0.0).is_err());
    }

    #[test]
    fn rejects_non_increasing_frames() {
        assert!(slice_windows(&[], &[0.3, 0.3], 0.05).is_err());
    }
}
