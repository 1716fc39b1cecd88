use evdepth::data::{preprocess_depth, read_depth, write_depth, Profile};
use evdepth::events::{read_events, slice_windows, voxelize, write_events_bin, Event, EventWindow, Polarity};
use ndarray::Array2;
use proptest::prelude::*;

fn event() -> impl Strategy<Value = Event> {
    (0.0f64..1.0, 0u16..16, 0u16..12, any::<bool>())
        .prop_map(|(t, x, y, p)| Event::new(t, x, y, if p { Polarity::Positive } else { Polarity::Negative }))
}

fn sorted(mut v: Vec<Event>) -> Vec<Event> {
    v.sort_by(|a, b| a.t.total_cmp(&b.t));
    v
}

proptest! {
    #[test]
    fn voxel_mass_equals_polarity_sum(events in prop::collection::vec(event(), 0..400), bins in 2usize..9) {
        let events = sorted(events);
        let w = EventWindow::new(events.clone(), 0.0, 1.0, 0);
        let g = voxelize(&w, bins, 12, 16).unwrap();
        let total: f64 = g.data.iter().map(|v| *v as f64).sum();
        let expect: f64 = events.iter().map(|e| e.p.sign()).sum();
        prop_assert!((total - expect).abs() < 1e-3);
        // Each event touches at most two adjacent bins.
        let touched = g.data.iter().filter(|v| **v != 0.0).count();
        prop_assert!(touched <= 2 * events.len());
    }

    #[test]
    fn flipping_polarity_negates_grid(events in prop::collection::vec(event(), 0..200)) {
        let events = sorted(events);
        let flipped: Vec<Event> = events
            .iter()
            .map(|e| Event { p: if e.p == Polarity::Positive { Polarity::Negative } else { Polarity::Positive }, ..*e })
            .collect();
        let a = voxelize(&EventWindow::new(events, 0.0, 1.0, 0), 5, 12, 16).unwrap();
        let b = voxelize(&EventWindow::new(flipped, 0.0, 1.0, 0), 5, 12, 16).unwrap();
        prop_assert!(a.data.iter().zip(b.data.iter()).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn windows_hold_exactly_their_events(events in prop::collection::vec(event(), 0..300), len in 0.05f64..0.5) {
        let events = sorted(events);
        let stamps = [0.3, 0.55, 0.9];
        let ws = slice_windows(&events, &stamps, len).unwrap();
        prop_assert_eq!(ws.len(), 3);
        for (w, t) in ws.iter().zip(stamps) {
            let want = events.iter().filter(|e| e.t > t - len && e.t <= t).count();
            prop_assert_eq!(w.len(), want);
            prop_assert!((w.duration() - len).abs() < 1e-12);
        }
    }
}

#[test]
fn event_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.bin");
    let events = vec![
        Event::new(0.001, 3, 4, Polarity::Positive),
        Event::new(0.002, 15, 11, Polarity::Negative),
    ];
    write_events_bin(&path, &events, 12, 16).unwrap();
    let (h, back) = read_events(&path).unwrap();
    assert_eq!((h.height, h.width, h.count), (12, 16, 2));
    assert_eq!(back, events);
}

#[test]
fn csv_events_are_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.csv");
    std::fs::write(&path, "t,x,y,p\n0.5,1,2,1\n0.6,3,0,-1\n").unwrap();
    let (_, ev) = read_events(&path).unwrap();
    assert_eq!(ev.len(), 2);
    assert_eq!(ev[1].p, Polarity::Negative);
}

#[test]
fn out_of_sensor_event_is_rejected() {
    let w = EventWindow::new(vec![Event::new(0.5, 16, 0, Polarity::Positive)], 0.0, 1.0, 0);
    assert!(voxelize(&w, 5, 12, 16).is_err());
}

#[test]
fn unsorted_stream_is_rejected() {
    let ev = vec![Event::new(0.2, 0, 0, Polarity::Positive), Event::new(0.1, 0, 0, Polarity::Positive)];
    assert!(slice_windows(&ev, &[0.3], 0.1).is_err());
}

#[test]
fn depth_round_trip_and_mvsec_padding() {
    let dir = tempfile::tempdir().unwrap();
    let d = Array2::from_shape_fn((260, 346), |(y, x)| 1.0 + (y + x) as f32 * 0.01);
    let path = dir.path().join("d.bin");
    write_depth(&path, &d).unwrap();
    assert_eq!(read_depth(&path).unwrap(), d);

    let padded = preprocess_depth(&d, Profile::MvsecLike).unwrap();
    assert_eq!(padded.dim(), (288, 352));
    assert_eq!(padded[(259, 345)], d[(259, 345)]);
    assert!(padded[(260, 0)].is_nan() && padded[(0, 346)].is_nan());
    assert!(preprocess_depth(&d, Profile::DsecLike).is_err());
    assert!(preprocess_depth(&d, Profile::None).is_err());
}
