use ndarray::{Array3, Axis};
use rand::Rng;

use super::{Profile, TrainingSample};

pub const BRIGHTNESS_RANGE: (f64, f64) = (0.8, 1.2);
pub const CONTRAST_RANGE: (f64, f64) = (0.8, 1.2);
pub const SATURATION_RANGE: (f64, f64) = (0.8, 1.2);
/// Hue factor; `f` rotates the hue by `f - 1` turns.
pub const HUE_RANGE: (f64, f64) = (0.9, 1.1);

const FLIP_PROB: f64 = 0.5;
const JITTER_PROB: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterParams {
    pub fn identity() -> Self {
        JitterParams {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 1.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut u = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        JitterParams {
            brightness: u(BRIGHTNESS_RANGE),
            contrast: u(CONTRAST_RANGE),
            saturation: u(SATURATION_RANGE),
            hue: u(HUE_RANGE),
        }
    }
}

fn mirror(a: &Array3<f32>) -> Array3<f32> {
    let mut m = a.clone();
    m.invert_axis(Axis(2));
    m.as_standard_layout().into_owned()
}

/// Mirrors frames, voxel grid, intrinsics, ground-truth depth and motion
/// about the vertical image axis.
pub fn flip_sample(sample: &TrainingSample) -> TrainingSample {
    let t = &sample.triplet;
    let mut out = sample.clone();
    out.triplet.prev = mirror(&t.prev);
    out.triplet.target = mirror(&t.target);
    out.triplet.next = mirror(&t.next);
    out.triplet.camera = t.camera.flipped_horizontally();
    out.voxel = sample.voxel.flipped_horizontally();
    out.gt_depth = sample.gt_depth.as_ref().map(|d| {
        let mut m = d.clone();
        m.invert_axis(Axis(1));
        m.as_standard_layout().into_owned()
    });
    out.gt_motion = sample.gt_motion.map(|[a, b]| [a.mirrored(), b.mirrored()]);
    out
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rotate_hue(r: f32, g: f32, b: f32, turns: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 0.0 {
        return (r, g, b);
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let h = (h / 6.0 + turns).rem_euclid(1.0) * 6.0;
    let (s, v) = (delta / max, max);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r1, g1, b1) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r1 + m, g1 + m, b1 + m)
}

/// Brightness, contrast, saturation and hue adjustment of one `(C, H, W)`
/// frame. Saturation and hue only affect three-channel frames.
pub fn color_jitter(frame: &Array3<f32>, p: &JitterParams) -> Array3<f32> {
    let (c, h, w) = frame.dim();
    let mut f = frame.mapv(|v| (v * p.brightness as f32).clamp(0.0, 1.0));
    let mean = if c == 3 {
        let mut acc = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                acc += gray(f[[0, y, x]], f[[1, y, x]], f[[2, y, x]]) as f64;
            }
        }
        (acc / (h * w) as f64) as f32
    } else {
        f.mean().unwrap_or(0.0)
    };
    f.mapv_inplace(|v| ((v - mean) * p.contrast as f32 + mean).clamp(0.0, 1.0));
    if c == 3 {
        for y in 0..h {
            for x in 0..w {
                let (r, g, b) = (f[[0, y, x]], f[[1, y, x]], f[[2, y, x]]);
                let l = gray(r, g, b);
                let s = p.saturation as f32;
                let (r, g, b) = (
                    (l + s * (r - l)).clamp(0.0, 1.0),
                    (l + s * (g - l)).clamp(0.0, 1.0),
                    (l + s * (b - l)).clamp(0.0, 1.0),
                );
                let (r, g, b) = rotate_hue(r, g, b, (p.hue - 1.0) as f32);
                f[[0, y, x]] = r.clamp(0.0, 1.0);
                f[[1, y, x]] = g.clamp(0.0, 1.0);
                f[[2, y, x]] = b.clamp(0.0, 1.0);
            }
        }
    }
    f
}

/// Random horizontal flip (frames, voxels and intrinsics together) and, for
/// profiles that use it, color jitter on the frames only. The same jitter is
/// applied to all three frames.
pub fn augment<R: Rng + ?Sized>(sample: &TrainingSample, rng: &mut R, profile: Profile) -> TrainingSample {
    let flip = rng.random_bool(FLIP_PROB);
    let jitter = profile.color_jitter() && rng.random_bool(JITTER_PROB);
    let mut out = if flip { flip_sample(sample) } else { sample.clone() };
    if jitter {
        let p = JitterParams::sample(rng);
        let t = &mut out.triplet;
        t.prev = color_jitter(&t.prev, &p);
        t.target = color_jitter(&t.target, &p);
        t.next = color_jitter(&t.next, &p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hue_rotation_by_full_turn_is_identity_and_third_turn_cycles() {
        let (r, g, b) = rotate_hue(0.8, 0.3, 0.1, 1.0);
        assert!((r - 0.8).abs() < 1e-5 && (g - 0.3).abs() < 1e-5 && (b - 0.1).abs() < 1e-5);
        let (r, g, b) = rotate_hue(1.0, 0.0, 0.0, 1.0 / 3.0);
        assert!(r.abs() < 1e-5 && (g - 1.0).abs() < 1e-5 && b.abs() < 1e-5);
    }

    #[test]
    fn identity_jitter_leaves_frame_unchanged() {
        let f = Array3::from_shape_fn((3, 4, 5), |(c, y, x)| ((c + 2 * y + 3 * x) % 7) as f32 / 7.0);
        let j = color_jitter(&f, &JitterParams::identity());
        for (a, b) in f.iter().zip(j.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = JitterParams::sample(&mut rng);
            assert!((0.8..=1.2).contains(&p.brightness));
            assert!((0.8..=1.2).contains(&p.contrast));
            assert!((0.8..=1.2).contains(&p.saturation));
            assert!((0.9..=1.1).contains(&p.hue));
        }
    }
}
