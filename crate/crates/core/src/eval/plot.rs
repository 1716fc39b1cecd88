use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::read_f32_array;
use crate::error::{Error, Result};
use crate::train::{read_log, LOG_FILE};

pub const SAMPLES_FILE: &str = "samples.json";

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GAP: u32 = 4;

/// One qualitative sample saved by evaluation. Array paths are relative to
/// the directory holding `samples.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    /// Alignment factor applied to `pred` when scoring.
    pub scale: f64,
    pub events: PathBuf,
    pub pred: PathBuf,
    #[serde(default)]
    pub gt: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<SampleRecord>,
}

/// Signed event counts: red for positive, blue for negative, white where
/// nothing fired. Saturation is reached at the largest magnitude.
pub fn render_events(counts: &Array2<f32>) -> RgbImage {
    let (h, w) = counts.dim();
    let peak = counts.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(f32::MIN_POSITIVE);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = counts[(y as usize, x as usize)];
        let fade = (255.0 * (1.0 - (v.abs() / peak).min(1.0))).round() as u8;
        if v > 0.0 {
            Rgb([255, fade, fade])
        } else if v < 0.0 {
            Rgb([fade, fade, 255])
        } else {
            WHITE
        }
    })
}

/// Inverse depth through the magma map over `[1/far, 1/near]`; invalid
/// pixels are black.
pub fn render_depth(depth: &Array2<f32>, near: f32, far: f32) -> RgbImage {
    let (h, w) = depth.dim();
    let (lo, hi) = (1.0 / far as f64, 1.0 / near as f64);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let d = depth[(y as usize, x as usize)];
        if !(d.is_finite() && d > 0.0) {
            return BLACK;
        }
        let t = ((1.0 / d as f64 - lo) / (hi - lo).max(f64::MIN_POSITIVE)).clamp(0.0, 1.0);
        let c = colorous::MAGMA.eval_continuous(t);
        Rgb([c.r, c.g, c.b])
    })
}

/// Absolute error through the inferno map over `[0, max]`; pixels without a
/// finite error are black.
pub fn render_error(err: &Array2<f32>, max: f32) -> RgbImage {
    let (h, w) = err.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let e = err[(y as usize, x as usize)];
        if !e.is_finite() {
            return BLACK;
        }
        let t = (e / max.max(f32::MIN_POSITIVE)).clamp(0.0, 1.0) as f64;
        let c = colorous::INFERNO.eval_continuous(t);
        Rgb([c.r, c.g, c.b])
    })
}

/// Places tiles left to right on a white background.
pub fn hstack(tiles: &[RgbImage]) -> RgbImage {
    let w = tiles.iter().map(|t| t.width()).sum::<u32>() + GAP * tiles.len().saturating_sub(1) as u32;
    let h = tiles.iter().map(|t| t.height()).max().unwrap_or(0);
    let mut out = RgbImage::from_pixel(w, h, WHITE);
    let mut x0 = 0;
    for t in tiles {
        image::imageops::replace(&mut out, t, x0 as i64, 0);
        x0 += t.width() + GAP;
    }
    out
}

/// Events, prediction, ground truth and error side by side. Colour ranges
/// follow the ground truth when present.
pub fn render_panel(events: &Array2<f32>, pred: &Array2<f32>, gt: Option<&Array2<f32>>) -> RgbImage {
    let finite = |a: &Array2<f32>| -> Vec<f32> { a.iter().copied().filter(|v| v.is_finite() && *v > 0.0).collect() };
    let reference = finite(gt.unwrap_or(pred));
    let reference = if reference.is_empty() { finite(pred) } else { reference };
    let near = reference.iter().copied().fold(f32::INFINITY, f32::min);
    let far = reference.iter().copied().fold(0.0f32, f32::max);
    let (near, far) = if near.is_finite() && far > near { (near, far) } else { (1.0, 2.0) };

    let mut tiles = vec![render_events(events), render_depth(pred, near, far)];
    if let Some(gt) = gt {
        let err = ndarray::Zip::from(pred).and(gt).map_collect(|p, g| {
            if g.is_finite() && *g > 0.0 {
                (p - g).abs()
            } else {
                f32::NAN
            }
        });
        tiles.push(render_depth(gt, near, far));
        tiles.push(render_error(&err, 0.5 * (far - near).max(f32::MIN_POSITIVE)));
    }
    hstack(&tiles)
}

/// Loss curve: raw training losses in grey, a 10-step moving average in
/// blue and validation losses as orange dots, on a zero-based axis.
pub fn render_loss_curve(train: &[(u64, f64)], val: &[(u64, f64)]) -> RgbImage {
    let (w, h, m) = (800u32, 480u32, 40u32);
    let mut img = RgbImage::from_pixel(w, h, WHITE);
    let all: Vec<&(u64, f64)> = train.iter().chain(val).filter(|p| p.1.is_finite()).collect();
    let max_step = all.iter().map(|p| p.0).max().unwrap_or(1).max(1) as f32;
    let max_loss = all.iter().map(|p| p.1).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE) as f32 * 1.05;
    let (pw, ph) = ((w - 2 * m) as f32, (h - 2 * m) as f32);
    let to_px = |s: u64, l: f64| (m as f32 + pw * s as f32 / max_step, m as f32 + ph * (1.0 - l as f32 / max_loss));

    for k in 1..5 {
        let y = m as f32 + ph * k as f32 / 5.0;
        draw_line_segment_mut(&mut img, (m as f32, y), ((w - m) as f32, y), Rgb([225, 225, 225]));
    }
    draw_hollow_rect_mut(&mut img, Rect::at(m as i32, m as i32).of_size(w - 2 * m, h - 2 * m), BLACK);

    let polyline = |img: &mut RgbImage, pts: &[(u64, f64)], c: Rgb<u8>| {
        for seg in pts.windows(2) {
            draw_line_segment_mut(img, to_px(seg[0].0, seg[0].1), to_px(seg[1].0, seg[1].1), c);
        }
    };
    polyline(&mut img, train, Rgb([190, 190, 190]));
    let smooth: Vec<(u64, f64)> = train
        .iter()
        .enumerate()
        .map(|(i, &(s, _))| {
            let lo = i.saturating_sub(9);
            let win = &train[lo..=i];
            (s, win.iter().map(|p| p.1).sum::<f64>() / win.len() as f64)
        })
        .collect();
    polyline(&mut img, &smooth, Rgb([31, 119, 180]));
    for &(s, l) in val {
        let (x, y) = to_px(s, l);
        draw_filled_circle_mut(&mut img, (x.round() as i32, y.round() as i32), 4, Rgb([255, 127, 14]));
    }
    img
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

fn read_map(base: &Path, rel: &Path) -> Result<Array2<f32>> {
    let (shape, values) = read_f32_array(&base.join(rel))?;
    match shape[..] {
        [h, w] => Array2::from_shape_vec((h, w), values).map_err(|e| Error::Shape(e.to_string())),
        _ => Err(Error::Shape(format!("{}: expected a 2-D array, got {shape:?}", rel.display()))),
    }
}

fn plot_log(path: &Path, out: &Path, name: &str) -> Result<Option<PathBuf>> {
    let records = read_log(path)?;
    let pick = |kind: &str| -> Vec<(u64, f64)> {
        records.iter().filter(|r| r.kind == kind).map(|r| (r.step, r.loss)).collect()
    };
    let (train, val) = (pick("train"), pick("val"));
    if train.is_empty() && val.is_empty() {
        log::warn!("{}: no loss records, skipping", path.display());
        return Ok(None);
    }
    let dst = out.join(name);
    save(&render_loss_curve(&train, &val), &dst)?;
    Ok(Some(dst))
}

pub fn read_sample_set(path: &Path) -> Result<SampleSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn plot_samples(set: &SampleSet, base: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for s in &set.samples {
        let (events, pred) = match (read_map(base, &s.events), read_map(base, &s.pred)) {
            (Ok(e), Ok(p)) => (e, p),
            (Err(e), _) | (_, Err(e)) => {
                log::warn!("sample {}: {e}, skipping", s.index);
                continue;
            }
        };
        let gt = s.gt.as_ref().and_then(|g| match read_map(base, g) {
            Ok(a) => Some(a),
            Err(e) => {
                log::warn!("sample {}: {e}, ground-truth panels skipped", s.index);
                None
            }
        });
        let pred = pred.mapv(|v| v * s.scale as f32);
        let dst = out.join(format!("panel_{:06}.png", s.index));
        save(&render_panel(&events, &pred, gt.as_ref()), &dst)?;
        written.push(dst);
    }
    Ok(written)
}

/// Renders every artifact found in `inputs` (training logs, `samples.json`
/// files, or directories holding either) into `out`. Unreadable or
/// unrecognised inputs are skipped with a warning.
pub fn plot(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let mut logs = Vec::new();
    let mut samples = Vec::new();
    for p in inputs {
        if p.is_dir() {
            for (name, list) in [(LOG_FILE, &mut logs), (SAMPLES_FILE, &mut samples)] {
                if p.join(name).is_file() {
                    list.push(p.join(name));
                }
            }
        } else if p.extension().is_some_and(|e| e == "jsonl") {
            logs.push(p.clone());
        } else if p.extension().is_some_and(|e| e == "json") {
            samples.push(p.clone());
        } else {
            log::warn!("{}: not a training log or sample list, skipping", p.display());
        }
    }
    if logs.is_empty() && samples.is_empty() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut written = Vec::new();
    for (k, log_path) in logs.iter().enumerate() {
        let name = if logs.len() == 1 {
            "loss_curve.png".to_string()
        } else {
            format!("loss_curve_{k}.png")
        };
        match plot_log(log_path, out, &name) {
            Ok(p) => written.extend(p),
            Err(e) => log::warn!("{}: {e}, skipping", log_path.display()),
        }
    }
    for s in &samples {
        match read_sample_set(s) {
            Ok(set) => written.extend(plot_samples(&set, s.parent().unwrap_or(Path::new(".")), out)?),
            Err(e) => log::warn!("{}: {e}, skipping", s.display()),
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_events_are_red_negative_blue() {
        let mut c = Array2::zeros((2, 2));
        c[(0, 0)] = 3.0;
        c[(1, 1)] = -3.0;
        let img = render_events(&c);
        assert_eq!(*img.get_pixel(0, 0), Rgb([255, 0, 0]));
        assert_eq!(*img.get_pixel(1, 1), Rgb([0, 0, 255]));
        assert_eq!(*img.get_pixel(1, 0), WHITE);
    }

    #[test]
    fn invalid_depth_is_black() {
        let d = Array2::from_shape_vec((1, 3), vec![1.0, f32::NAN, 4.0]).unwrap();
        let img = render_depth(&d, 1.0, 4.0);
        assert_eq!(*img.get_pixel(1, 0), BLACK);
        // Near is brighter than far on magma.
        let lum = |p: &Rgb<u8>| p.0.iter().map(|v| *v as u32).sum::<u32>();
        assert!(lum(img.get_pixel(0, 0)) > lum(img.get_pixel(2, 0)));
    }

    #[test]
    fn panel_width_counts_tiles() {
        let a = Array2::from_elem((4, 5), 2.0f32);
        assert_eq!(render_panel(&a, &a, Some(&a)).width(), 4 * 5 + 3 * GAP);
        assert_eq!(render_panel(&a, &a, None).width(), 2 * 5 + GAP);
    }

    #[test]
    fn empty_inputs_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("plots");
        assert!(plot(&[], &out).unwrap().is_empty());
        assert!(!out.exists());
    }
}
