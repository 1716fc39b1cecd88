use std::path::Path;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::layout::*;
use crate::error::{Error, Result};
use crate::events::{write_events_bin, Event, Polarity};
use crate::geometry::{CameraIntrinsics, RigidTransform};

/// World plane `Z = z0 + slope_y · Y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub z0: f64,
    pub slope_y: f64,
}

/// Value-noise texture painted on the plane in world units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    /// Lattice spacing of the coarsest octave.
    pub cell: f64,
    pub octaves: usize,
    /// Intensities span `[0.5 - contrast/2, 0.5 + contrast/2]`.
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub camera: CameraIntrinsics,
    pub plane: Plane,
    pub texture: Texture,
    /// Camera-to-world pose of every frame.
    pub trajectory: Vec<RigidTransform>,
    /// Log-intensity change that triggers an event.
    pub contrast_threshold: f64,
    pub frame_rate: f64,
    /// Rendering sub-steps between consecutive frames for event generation.
    pub supersample: usize,
}

impl SceneConfig {
    /// Constant-velocity trajectory starting at the origin. `velocity` and
    /// `angular` are per-frame increments in world units and radians.
    pub fn constant_velocity(frames: usize, velocity: Vector3<f64>, angular: Vector3<f64>) -> Vec<RigidTransform> {
        (0..frames)
            .map(|k| {
                let s = k as f64;
                RigidTransform::new(Rotation3::new(angular * s).into_inner(), velocity * s)
            })
            .collect()
    }

    /// The desk-scale scene used by the tests and examples: a 64×64 camera
    /// sliding sideways past a slanted textured plane.
    pub fn toy(seed: u64, frames: usize) -> Self {
        SceneConfig {
            camera: CameraIntrinsics {
                fx: 48.0,
                fy: 48.0,
                cx: 31.5,
                cy: 31.5,
                width: 64,
                height: 64,
            },
            plane: Plane { z0: 4.0, slope_y: 0.6 },
            texture: Texture {
                seed,
                cell: 0.35,
                octaves: 3,
                contrast: 0.7,
            },
            trajectory: Self::constant_velocity(frames, Vector3::new(0.25, 0.0, 0.0), Vector3::zeros()),
            contrast_threshold: 0.15,
            frame_rate: 20.0,
            supersample: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.trajectory.len() < 3 {
            return Err(Error::Config(format!(
                "trajectory needs at least 3 poses, got {}",
                self.trajectory.len()
            )));
        }
        if !(self.contrast_threshold > 0.0) {
            return Err(Error::Config("contrast threshold must be positive".into()));
        }
        if !(self.frame_rate > 0.0) || self.supersample == 0 {
            return Err(Error::Config("frame rate and supersampling must be positive".into()));
        }
        if !(self.texture.cell > 0.0) || self.texture.octaves == 0 || !(0.0..1.0).contains(&self.texture.contrast) {
            return Err(Error::Config("texture needs a positive cell, at least one octave and contrast < 1".into()));
        }
        if self.trajectory.iter().any(|p| !p.is_valid(1e-6)) {
            return Err(Error::Config("trajectory contains a non-rigid pose".into()));
        }
        Ok(())
    }

    fn timestamp(&self, k: usize) -> f64 {
        k as f64 / self.frame_rate
    }
}

fn hash2(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = seed ^ (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let (u, v) = (fade(x - fx), fade(y - fy));
    let a = hash2(ix, iy, seed);
    let b = hash2(ix + 1, iy, seed);
    let c = hash2(ix, iy + 1, seed);
    let d = hash2(ix + 1, iy + 1, seed);
    let top = a + (b - a) * u;
    let bottom = c + (d - c) * u;
    top + (bottom - top) * v
}

impl Texture {
    pub fn intensity(&self, x: f64, y: f64) -> f64 {
        let (mut acc, mut amp, mut norm, mut freq) = (0.0, 1.0, 0.0, 1.0 / self.cell);
        for o in 0..self.octaves {
            acc += amp * value_noise(x * freq, y * freq, self.seed.wrapping_add(o as u64 * 0x5851_f42d));
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        0.5 + self.contrast * (acc / norm - 0.5)
    }
}

/// Renders intensity and depth seen from camera-to-world pose `pose`.
pub fn render_view(cfg: &SceneConfig, pose: &RigidTransform) -> Result<(Array2<f64>, Array2<f64>)> {
    let k = &cfg.camera;
    let (h, w) = (k.height, k.width);
    let mut img = Array2::zeros((h, w));
    let mut depth = Array2::zeros((h, w));
    let o = pose.translation;
    let s = cfg.plane.slope_y;
    for y in 0..h {
        for x in 0..w {
            let dc = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let d = pose.rotation * dc;
            let denom = d.z - s * d.y;
            let lambda = (cfg.plane.z0 + s * o.y - o.z) / denom;
            if !(lambda > 0.0) || !lambda.is_finite() {
                return Err(Error::Config(format!("pixel ({x}, {y}) does not see the plane")));
            }
            let p = o + d * lambda;
            img[[y, x]] = cfg.texture.intensity(p.x, p.y);
            depth[[y, x]] = lambda;
        }
    }
    Ok((img, depth))
}

fn interpolate(a: &RigidTransform, b: &RigidTransform, f: f64) -> RigidTransform {
    let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(a.rotation));
    let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(b.rotation));
    RigidTransform::new(
        qa.slerp(&qb, f).to_rotation_matrix().into_inner(),
        a.translation + (b.translation - a.translation) * f,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub frames: usize,
    pub events: usize,
    pub depth_min: f64,
    pub depth_max: f64,
}

/// Simulates the scene and writes a sequence directory at `out`.
///
/// Events fire whenever a pixel's log intensity moves one threshold away
/// from its last reference level; the crossing time is interpolated
/// linearly between rendering sub-steps.
pub fn synth_scene(cfg: &SceneConfig, out: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    let n = cfg.trajectory.len();
    if cfg
        .trajectory
        .windows(2)
        .all(|p| (p[0].translation - p[1].translation).amax() == 0.0 && p[0].rotation == p[1].rotation)
    {
        log::warn!("trajectory has no motion; the sequence will contain no events");
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (h, w) = (cfg.camera.height, cfg.camera.width);
    let c = cfg.contrast_threshold;

    let (img0, _) = render_view(cfg, &cfg.trajectory[0])?;
    let mut last_log = img0.mapv(f64::ln);
    let mut reference = last_log.clone();
    let mut events: Vec<Event> = Vec::new();
    let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);

    for k in 0..n {
        if k > 0 {
            let (a, b) = (&cfg.trajectory[k - 1], &cfg.trajectory[k]);
            let (t0, t1) = (cfg.timestamp(k - 1), cfg.timestamp(k));
            for j in 1..=cfg.supersample {
                let f = j as f64 / cfg.supersample as f64;
                let pose = if j == cfg.supersample { *b } else { interpolate(a, b, f) };
                let (img, _) = render_view(cfg, &pose)?;
                let t_prev = t0 + (t1 - t0) * (j - 1) as f64 / cfg.supersample as f64;
                let t_now = if j == cfg.supersample { t1 } else { t0 + (t1 - t0) * f };
                let mut batch = Vec::new();
                for y in 0..h {
                    for x in 0..w {
                        let l0 = last_log[[y, x]];
                        let l1 = img[[y, x]].ln();
                        let r = &mut reference[[y, x]];
                        let crossing = |level: f64| {
                            let frac = ((level - l0) / (l1 - l0)).clamp(0.0, 1.0);
                            t_prev + (t_now - t_prev) * frac
                        };
                        while l1 - *r >= c {
                            *r += c;
                            batch.push(Event::new(crossing(*r), x as u16, y as u16, Polarity::Positive));
                        }
                        while *r - l1 >= c {
                            *r -= c;
                            batch.push(Event::new(crossing(*r), x as u16, y as u16, Polarity::Negative));
                        }
                        last_log[[y, x]] = l1;
                    }
                }
                batch.sort_by(|p, q| p.t.total_cmp(&q.t));
                events.extend(batch);
            }
        }
        let (img, depth) = render_view(cfg, &cfg.trajectory[k])?;
        write_frame_gray16(&frame_path(out, k), &img.mapv(|v| v as f32))?;
        write_depth(&depth_path(out, k), &depth.mapv(|v| v as f32))?;
        for d in depth.iter() {
            dmin = dmin.min(*d);
            dmax = dmax.max(*d);
        }
    }

    write_events_bin(&out.join(EVENTS_FILE), &events, h, w)?;
    let ts: Vec<f64> = (0..n).map(|k| cfg.timestamp(k)).collect();
    write_timestamps(&out.join(TIMESTAMPS_FILE), &ts)?;
    cfg.camera.save(&out.join(CALIB_FILE))?;
    write_poses(&out.join(POSES_FILE), &cfg.trajectory)?;
    let scene = out.join("scene.json");
    std::fs::write(&scene, serde_json::to_vec_pretty(cfg)?).map_err(|e| Error::io(&scene, e))?;
    Ok(SynthSummary {
        frames: n,
        events: events.len(),
        depth_min: dmin,
        depth_max: dmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_is_bounded_and_seeded() {
        let t = Texture {
            seed: 1,
            cell: 0.5,
            octaves: 3,
            contrast: 0.7,
        };
        for i in 0..500 {
            let v = t.intensity(i as f64 * 0.137 - 20.0, i as f64 * 0.071);
            assert!((0.15..=0.85).contains(&v));
        }
        let u = Texture { seed: 2, ..t };
        assert_ne!(t.intensity(0.3, 0.7), u.intensity(0.3, 0.7));
    }

    #[test]
    fn toy_depth_spans_the_slanted_plane() {
        let cfg = SceneConfig::toy(0, 3);
        let (_, d) = render_view(&cfg, &RigidTransform::identity()).unwrap();
        assert!((d[[0, 0]] - 4.0 / (1.0 + 0.6 * 31.5 / 48.0)).abs() < 1e-9);
        assert!((d[[63, 0]] - 4.0 / (1.0 - 0.6 * 31.5 / 48.0)).abs() < 1e-9);
    }
}
