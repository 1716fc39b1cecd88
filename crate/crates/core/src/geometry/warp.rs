//! Inverse warping: back-project target pixels with a depth map, move them
//! with a rigid transform, project into the source view and resample it.

use candle_core::{DType, Device, Tensor};
use nalgebra::Vector3;
use ndarray::{Array2, Array3};

use super::{CameraIntrinsics, DepthMap, RigidTransform};
use crate::error::{Error, Result};
use crate::ops;

/// Points closer than this to the source image plane are treated as behind it.
const MIN_PROJECTED_DEPTH: f64 = 1e-3;

/// Continuous source-image coordinates for every target pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelGrid {
    /// `[row, col, (x, y)]`.
    pub coords: Array3<f64>,
    /// False where the transformed point has non-positive depth.
    pub valid: Array2<bool>,
}

pub fn reproject_pixels(depth: &DepthMap, tf: &RigidTransform, k: &CameraIntrinsics) -> Result<PixelGrid> {
    let (h, w) = (depth.height(), depth.width());
    if (k.height, k.width) != (h, w) {
        return Err(Error::Shape(format!(
            "intrinsics are for {}x{} but depth is {w}x{h}",
            k.width, k.height
        )));
    }
    let k_inv = k.inverse_matrix();
    let kk = k.matrix();
    let mut coords = Array3::zeros((h, w, 2));
    let mut valid = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let ray = k_inv * Vector3::new(x as f64, y as f64, 1.0);
            let p = tf.apply(&(ray * depth.values[[y, x]] as f64));
            let q = kk * p;
            coords[[y, x, 0]] = q.x / q.z;
            coords[[y, x, 1]] = q.y / q.z;
            valid[[y, x]] = p.z > 0.0;
        }
    }
    Ok(PixelGrid { coords, valid })
}

/// Batched intrinsics `K` and `K⁻¹`, each `(N, 3, 3)`.
#[derive(Clone, Debug)]
pub struct CameraTensors {
    pub k: Tensor,
    pub k_inv: Tensor,
}

impl CameraTensors {
    pub fn new(cams: &[CameraIntrinsics], dtype: DType, dev: &Device) -> candle_core::Result<Self> {
        let n = cams.len();
        let flat = |f: &dyn Fn(&CameraIntrinsics) -> nalgebra::Matrix3<f64>| -> Vec<f64> {
            cams.iter()
                .flat_map(|c| {
                    let m = f(c);
                    (0..3).flat_map(move |r| (0..3).map(move |col| m[(r, col)])).collect::<Vec<_>>()
                })
                .collect()
        };
        let k = Tensor::from_vec(flat(&|c| c.matrix()), (n, 3, 3), dev)?.to_dtype(dtype)?;
        let k_inv = Tensor::from_vec(flat(&|c| c.inverse_matrix()), (n, 3, 3), dev)?.to_dtype(dtype)?;
        Ok(CameraTensors { k, k_inv })
    }
}

/// Batched rotation `(N, 3, 3)` and translation `(N, 3)`.
#[derive(Clone, Debug)]
pub struct PoseTensors {
    pub rotation: Tensor,
    pub translation: Tensor,
}

impl PoseTensors {
    pub fn from_transforms(tfs: &[RigidTransform], dtype: DType, dev: &Device) -> candle_core::Result<Self> {
        let n = tfs.len();
        let r: Vec<f64> = tfs
            .iter()
            .flat_map(|t| (0..3).flat_map(move |i| (0..3).map(move |j| t.rotation[(i, j)])))
            .collect();
        let t: Vec<f64> = tfs.iter().flat_map(|t| t.translation.iter().copied()).collect();
        Ok(PoseTensors {
            rotation: Tensor::from_vec(r, (n, 3, 3), dev)?.to_dtype(dtype)?,
            translation: Tensor::from_vec(t, (n, 3), dev)?.to_dtype(dtype)?,
        })
    }

    /// Differentiable Rodrigues map of `(N, 6)` axis-angle/translation vectors.
    pub fn from_pose_vectors(v: &Tensor, invert: bool) -> candle_core::Result<Self> {
        let (n, six) = v.dims2()?;
        if six != 6 {
            candle_core::bail!("pose vectors must be (N, 6), got {:?}", v.dims());
        }
        let r = v.narrow(1, 0, 3)?;
        let t = v.narrow(1, 3, 3)?;
        let theta2 = r.sqr()?.sum_keepdim(1)?; // N 1
        let small = theta2.lt(1e-6)?;
        let ones = theta2.ones_like()?;
        let safe2 = small.where_cond(&ones, &theta2)?;
        let theta = safe2.sqrt()?;
        let a_big = (theta.sin()? / &theta)?;
        let b_big = ((theta.cos()?.neg()? + 1.0)? / &safe2)?;
        let t4 = theta2.sqr()?;
        let a_small = ((theta2.affine(-1.0 / 6.0, 1.0))? + (&t4 / 120.0)?)?;
        let b_small = ((theta2.affine(-1.0 / 24.0, 0.5))? + (&t4 / 720.0)?)?;
        let a = small.where_cond(&a_small, &a_big)?.reshape((n, 1, 1))?;
        let b = small.where_cond(&b_small, &b_big)?.reshape((n, 1, 1))?;

        let rx = r.narrow(1, 0, 1)?;
        let ry = r.narrow(1, 1, 1)?;
        let rz = r.narrow(1, 2, 1)?;
        let zero = rx.zeros_like()?;
        let skew = Tensor::cat(
            &[&zero, &rz.neg()?, &ry, &rz, &zero, &rx.neg()?, &ry.neg()?, &rx, &zero],
            1,
        )?
        .reshape((n, 3, 3))?;
        let eye = Tensor::eye(3, v.dtype(), v.device())?.unsqueeze(0)?.broadcast_as((n, 3, 3))?;
        let skew2 = skew.matmul(&skew)?;
        let rot = (eye + skew.broadcast_mul(&a)?)?.add(&skew2.broadcast_mul(&b)?)?;
        if invert {
            let rt = rot.transpose(1, 2)?.contiguous()?;
            let tt = rt.matmul(&t.unsqueeze(2)?)?.squeeze(2)?.neg()?;
            Ok(PoseTensors {
                rotation: rt,
                translation: tt,
            })
        } else {
            Ok(PoseTensors {
                rotation: rot,
                translation: t.contiguous()?,
            })
        }
    }
}

/// Tensor reprojection. `depth` is `(N, 1, H, W)`; returns the sampling grid
/// `(N, H, W, 2)` and a `(N, 1, H, W)` mask of points in front of the source
/// camera.
pub fn reproject_tensor(depth: &Tensor, pose: &PoseTensors, cam: &CameraTensors) -> candle_core::Result<(Tensor, Tensor)> {
    let (n, _, h, w) = depth.dims4()?;
    let pix = ops::pixel_grid(n, h, w, depth.dtype(), depth.device())?;
    let rays = cam.k_inv.matmul(&pix)?; // N 3 HW
    let points = rays.broadcast_mul(&depth.reshape((n, 1, h * w))?)?;
    let kr = cam.k.matmul(&pose.rotation)?;
    let kt = cam.k.matmul(&pose.translation.unsqueeze(2)?)?; // N 3 1
    let proj = kr.matmul(&points)?.broadcast_add(&kt)?;
    let z = proj.narrow(1, 2, 1)?;
    let front = z.gt(MIN_PROJECTED_DEPTH)?.to_dtype(depth.dtype())?;
    let z = z.maximum(MIN_PROJECTED_DEPTH)?;
    let xy = proj.narrow(1, 0, 2)?.broadcast_div(&z)?;
    let grid = xy.reshape((n, 2, h, w))?.permute((0, 2, 3, 1))?.contiguous()?;
    Ok((grid, front.reshape((n, 1, h, w))?))
}

/// Synthesizes the target view from `source (N, C, H, W)`. The returned
/// mask is 1 where the sample is in front of the camera and inside the
/// source image.
pub fn inverse_warp(
    source: &Tensor,
    depth: &Tensor,
    pose: &PoseTensors,
    cam: &CameraTensors,
) -> candle_core::Result<(Tensor, Tensor)> {
    let (_, _, h, w) = source.dims4()?;
    let (grid, front) = reproject_tensor(depth, pose, cam)?;
    let synth = ops::bilinear_sample(source, &grid)?;
    let inside = ops::sample_validity(&grid, h, w)?;
    Ok((synth, (front * inside)?))
}

/// Single-image convenience wrapper over [`inverse_warp`] in double precision.
pub fn warp_image(
    source: &Array3<f32>,
    depth: &DepthMap,
    tf: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<(Array3<f32>, Array2<bool>)> {
    let (c, h, w) = source.dim();
    if (depth.height(), depth.width()) != (h, w) || (k.height, k.width) != (h, w) {
        return Err(Error::Shape(format!(
            "source {w}x{h}, depth {}x{}, intrinsics {}x{} must agree",
            depth.width(),
            depth.height(),
            k.width,
            k.height
        )));
    }
    let dev = Device::Cpu;
    let src = Tensor::from_vec(source.iter().map(|&v| v as f64).collect::<Vec<_>>(), (1, c, h, w), &dev)?;
    let d = Tensor::from_vec(depth.values.iter().map(|&v| v as f64).collect::<Vec<_>>(), (1, 1, h, w), &dev)?;
    let pose = PoseTensors::from_transforms(std::slice::from_ref(tf), DType::F64, &dev)?;
    let cam = CameraTensors::new(std::slice::from_ref(k), DType::F64, &dev)?;
    let (synth, mask) = inverse_warp(&src, &d, &pose, &cam)?;
    let synth = Array3::from_shape_vec((c, h, w), ops::tensor_to_f64(&synth)?.into_iter().map(|v| v as f32).collect())
        .expect("shape from tensor");
    let mask = Array2::from_shape_vec((h, w), ops::tensor_to_f64(&mask)?.into_iter().map(|v| v > 0.5).collect())
        .expect("shape from tensor");
    Ok((synth, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pose_vector_to_transform, DepthRange};

    fn cam(h: usize, w: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(20.0, 20.0, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h).unwrap()
    }

    fn flat_depth(h: usize, w: usize, z: f32) -> DepthMap {
        DepthMap {
            values: Array2::from_elem((h, w), z),
            range: DepthRange::new(0.1, 100.0).unwrap(),
        }
    }

    #[test]
    fn identity_transform_returns_pixel_grid() {
        let g = reproject_pixels(&flat_depth(6, 7, 3.3), &RigidTransform::identity(), &cam(6, 7)).unwrap();
        for y in 0..6 {
            for x in 0..7 {
                assert!((g.coords[[y, x, 0]] - x as f64).abs() < 1e-12);
                assert!((g.coords[[y, x, 1]] - y as f64).abs() < 1e-12);
                assert!(g.valid[[y, x]]);
            }
        }
    }

    #[test]
    fn lateral_translation_shifts_by_disparity() {
        let (z, tx) = (4.0, 0.3);
        let k = cam(5, 8);
        let g = reproject_pixels(&flat_depth(5, 8, z as f32), &RigidTransform::from_translation(Vector3::new(tx, 0.0, 0.0)), &k).unwrap();
        let shift = k.fx * tx / z;
        for y in 0..5 {
            for x in 0..8 {
                assert!((g.coords[[y, x, 0]] - (x as f64 + shift)).abs() < 1e-9);
                assert!((g.coords[[y, x, 1]] - y as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn z_rotation_rotates_about_principal_point() {
        let theta = 0.2f64;
        let k = cam(9, 9);
        let tf = pose_vector_to_transform(&[0.0, 0.0, theta, 0.0, 0.0, 0.0], false);
        let g = reproject_pixels(&flat_depth(9, 9, 2.0), &tf, &k).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let (dx, dy) = (x as f64 - k.cx, y as f64 - k.cy);
                let ex = k.cx + theta.cos() * dx - theta.sin() * dy;
                let ey = k.cy + theta.sin() * dx + theta.cos() * dy;
                assert!((g.coords[[y, x, 0]] - ex).abs() < 1e-9);
                assert!((g.coords[[y, x, 1]] - ey).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn points_behind_camera_are_invalid() {
        let tf = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -5.0));
        let g = reproject_pixels(&flat_depth(3, 3, 2.0), &tf, &cam(3, 3)).unwrap();
        assert!(g.valid.iter().all(|v| !v));
    }

    #[test]
    fn tensor_reprojection_matches_scalar_route() {
        let (h, w) = (6, 7);
        let k = cam(h, w);
        let mut depth = flat_depth(h, w, 1.0);
        for ((y, x), v) in depth.values.indexed_iter_mut() {
            *v = 2.0 + 0.1 * x as f32 + 0.05 * y as f32;
        }
        let v = [0.05, -0.03, 0.02, 0.2, -0.1, 0.3];
        let tf = pose_vector_to_transform(&v, true);
        let plain = reproject_pixels(&depth, &tf, &k).unwrap();

        let dev = Device::Cpu;
        let vt = Tensor::new(&[v], &dev).unwrap();
        let pose = PoseTensors::from_pose_vectors(&vt, true).unwrap();
        let camt = CameraTensors::new(&[k], DType::F64, &dev).unwrap();
        let d = Tensor::from_vec(depth.values.iter().map(|&v| v as f64).collect::<Vec<_>>(), (1, 1, h, w), &dev).unwrap();
        let (grid, _) = reproject_tensor(&d, &pose, &camt).unwrap();
        let g = ops::tensor_to_f64(&grid).unwrap();
        for (a, b) in plain.coords.iter().zip(g.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn tensor_rodrigues_matches_scalar_including_small_angles() {
        let dev = Device::Cpu;
        for v in [[0.0; 6], [1e-5, 2e-5, -1e-5, 0.1, 0.2, 0.3], [0.4, -0.7, 1.1, -1.0, 0.5, 2.0]] {
            for invert in [false, true] {
                let p = PoseTensors::from_pose_vectors(&Tensor::new(&[v], &dev).unwrap(), invert).unwrap();
                let tf = pose_vector_to_transform(&v, invert);
                let r = ops::tensor_to_f64(&p.rotation).unwrap();
                let t = ops::tensor_to_f64(&p.translation).unwrap();
                for i in 0..3 {
                    assert!((t[i] - tf.translation[i]).abs() < 1e-12);
                    for j in 0..3 {
                        assert!((r[i * 3 + j] - tf.rotation[(i, j)]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn identity_warp_reproduces_source() {
        let (h, w) = (8, 9);
        let src = Array3::from_shape_fn((1, h, w), |(_, y, x)| ((x * 7 + y * 3) % 11) as f32 / 11.0);
        let (synth, mask) = warp_image(&src, &flat_depth(h, w, 3.0), &RigidTransform::identity(), &cam(h, w)).unwrap();
        assert!(mask.iter().all(|m| *m));
        for (a, b) in src.iter().zip(synth.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn large_translation_invalidates_everything() {
        let (h, w) = (6, 6);
        let src = Array3::from_elem((1, h, w), 0.5f32);
        let tf = RigidTransform::from_translation(Vector3::new(50.0, 0.0, 0.0));
        let (_, mask) = warp_image(&src, &flat_depth(h, w, 2.0), &tf, &cam(h, w)).unwrap();
        assert!(mask.iter().all(|m| !m));
    }
}
