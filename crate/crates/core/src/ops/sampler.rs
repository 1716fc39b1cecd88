use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp2, Layout, Result, Shape, Tensor};

use super::{f64_to_storage, storage_to_f64, tensor_to_f64};

/// Samples `image (N, C, H, W)` at continuous pixel coordinates
/// `grid (N, Ho, Wo, 2)` (last axis = column, row) with bilinear
/// interpolation. Coordinates outside the image are clamped to the border;
/// see [`sample_validity`] for the matching mask. Differentiable with respect
/// to both the image and the grid.
pub fn bilinear_sample(image: &Tensor, grid: &Tensor) -> Result<Tensor> {
    let (n, _, _, _) = image.dims4()?;
    let (gn, _, _, two) = grid.dims4()?;
    if gn != n || two != 2 {
        candle_core::bail!(
            "sampling grid {:?} does not match image batch {n} with (x, y) pairs",
            grid.dims()
        );
    }
    image.contiguous()?.apply_op2(&grid.contiguous()?, BilinearSampler)
}

/// Slack, in pixels, granted at the image border so that coordinates
/// reproduced up to rounding error still count as inside.
const BORDER_SLACK: f64 = 1e-6;

/// `(N, 1, Ho, Wo)` mask, 1 where the grid coordinate lies inside the
/// `height × width` image and is finite, else 0.
pub fn sample_validity(grid: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let x = grid.narrow(3, 0, 1)?.squeeze(3)?;
    let y = grid.narrow(3, 1, 1)?.squeeze(3)?;
    let inside = x
        .ge(-BORDER_SLACK)?
        .mul(&x.le((width - 1) as f64 + BORDER_SLACK)?)?
        .mul(&y.ge(-BORDER_SLACK)?)?
        .mul(&y.le((height - 1) as f64 + BORDER_SLACK)?)?;
    inside.to_dtype(grid.dtype())?.unsqueeze(1)
}

struct BilinearSampler;

struct Tap {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    wx: f64,
    wy: f64,
    x_inside: bool,
    y_inside: bool,
}

fn tap(x: f64, y: f64, h: usize, w: usize) -> Tap {
    let x = if x.is_finite() { x } else { 0.0 };
    let y = if y.is_finite() { y } else { 0.0 };
    let xmax = (w - 1) as f64;
    let ymax = (h - 1) as f64;
    let xc = x.clamp(0.0, xmax);
    let yc = y.clamp(0.0, ymax);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    Tap {
        i00: y0 * w + x0,
        i01: y0 * w + x1,
        i10: y1 * w + x0,
        i11: y1 * w + x1,
        wx: xc - x0 as f64,
        wy: yc - y0 as f64,
        x_inside: (0.0..=xmax).contains(&x),
        y_inside: (0.0..=ymax).contains(&y),
    }
}

impl CustomOp2 for BilinearSampler {
    fn name(&self) -> &'static str {
        "bilinear-sampler"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = l1.shape().dims4()?;
        let (_, oh, ow, _) = l2.shape().dims4()?;
        let img = storage_to_f64(s1, l1, self.name())?;
        let grid = storage_to_f64(s2, l2, self.name())?;
        let mut out = vec![0f64; n * c * oh * ow];
        for b in 0..n {
            for p in 0..oh * ow {
                let g = (b * oh * ow + p) * 2;
                let t = tap(grid[g], grid[g + 1], h, w);
                for ch in 0..c {
                    let plane = &img[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                    let top = plane[t.i00] * (1.0 - t.wx) + plane[t.i01] * t.wx;
                    let bot = plane[t.i10] * (1.0 - t.wx) + plane[t.i11] * t.wx;
                    out[(b * c + ch) * oh * ow + p] = top * (1.0 - t.wy) + bot * t.wy;
                }
            }
        }
        Ok((f64_to_storage(out, s1.dtype())?, Shape::from((n, c, oh, ow))))
    }

    fn bwd(&self, image: &Tensor, grid: &Tensor, _res: &Tensor, grad_res: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let (n, c, h, w) = image.dims4()?;
        let (_, oh, ow, _) = grid.dims4()?;
        let img = tensor_to_f64(image)?;
        let gr = tensor_to_f64(grid)?;
        let go = tensor_to_f64(grad_res)?;
        let mut g_img = vec![0f64; img.len()];
        let mut g_grid = vec![0f64; gr.len()];
        for b in 0..n {
            for p in 0..oh * ow {
                let g = (b * oh * ow + p) * 2;
                let t = tap(gr[g], gr[g + 1], h, w);
                let (mut dx, mut dy) = (0.0, 0.0);
                for ch in 0..c {
                    let off = (b * c + ch) * h * w;
                    let up = go[(b * c + ch) * oh * ow + p];
                    g_img[off + t.i00] += up * (1.0 - t.wx) * (1.0 - t.wy);
                    g_img[off + t.i01] += up * t.wx * (1.0 - t.wy);
                    g_img[off + t.i10] += up * (1.0 - t.wx) * t.wy;
                    g_img[off + t.i11] += up * t.wx * t.wy;
                    let (a, bb, cc, d) = (img[off + t.i00], img[off + t.i01], img[off + t.i10], img[off + t.i11]);
                    dx += up * ((1.0 - t.wy) * (bb - a) + t.wy * (d - cc));
                    dy += up * ((1.0 - t.wx) * (cc - a) + t.wx * (d - bb));
                }
                if t.x_inside {
                    g_grid[g] = dx;
                }
                if t.y_inside {
                    g_grid[g + 1] = dy;
                }
            }
        }
        let g_img = Tensor::from_vec(g_img, (n, c, h, w), image.device())?.to_dtype(image.dtype())?;
        let g_grid = Tensor::from_vec(g_grid, (n, oh, ow, 2), grid.device())?.to_dtype(grid.dtype())?;
        Ok((Some(g_img), Some(g_grid)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn identity_grid(n: usize, h: usize, w: usize, dx: f64, dy: f64) -> Tensor {
        let mut v = Vec::new();
        for _ in 0..n {
            for y in 0..h {
                for x in 0..w {
                    v.push(x as f64 + dx);
                    v.push(y as f64 + dy);
                }
            }
        }
        Tensor::from_vec(v, (n, h, w, 2), &Device::Cpu).unwrap()
    }

    fn ramp(h: usize, w: usize) -> Tensor {
        let v: Vec<f64> = (0..h * w).map(|i| ((i % w) as f64) * 0.1 + ((i / w) as f64) * 0.01).collect();
        Tensor::from_vec(v, (1, 1, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn identity_grid_reproduces_image() {
        let img = ramp(5, 6);
        let out = bilinear_sample(&img, &identity_grid(1, 5, 6, 0.0, 0.0)).unwrap();
        assert_eq!(tensor_to_f64(&out).unwrap(), tensor_to_f64(&img).unwrap());
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::full(0.3f64, (1, 2, 4, 4), &Device::Cpu).unwrap();
        let out = bilinear_sample(&img, &identity_grid(1, 4, 4, 0.37, -0.21)).unwrap();
        assert!(tensor_to_f64(&out).unwrap().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn half_pixel_shift_on_linear_ramp() {
        let v: Vec<f64> = (0..4 * 6).map(|i| (i % 6) as f64).collect();
        let img = Tensor::from_vec(v, (1, 1, 4, 6), &Device::Cpu).unwrap();
        let out = tensor_to_f64(&bilinear_sample(&img, &identity_grid(1, 4, 6, 0.5, 0.0)).unwrap()).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert!((out[y * 6 + x] - (x as f64 + 0.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validity_flags_outside_samples() {
        let grid = identity_grid(1, 3, 3, 1.5, 0.0);
        let m = tensor_to_f64(&sample_validity(&grid, 3, 3).unwrap()).unwrap();
        assert_eq!(m, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let img_v = Var::from_tensor(&ramp(5, 5).sqr().unwrap()).unwrap();
        let grid0 = identity_grid(1, 5, 5, 0.31, 0.47);
        let grid_v = Var::from_tensor(&grid0).unwrap();
        let weights = Tensor::arange(0u32, 25, &Device::Cpu).unwrap().to_dtype(DType::F64).unwrap().reshape((1, 1, 5, 5)).unwrap();
        let f = |img: &Tensor, grid: &Tensor| -> f64 {
            bilinear_sample(img, grid).unwrap().mul(&weights).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
        };
        let loss = bilinear_sample(img_v.as_tensor(), grid_v.as_tensor()).unwrap().mul(&weights).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let gg = tensor_to_f64(grads.get(grid_v.as_tensor()).unwrap()).unwrap();
        let gi = tensor_to_f64(grads.get(img_v.as_tensor()).unwrap()).unwrap();

        let base_grid = tensor_to_f64(&grid0).unwrap();
        let img = img_v.as_tensor().clone();
        let eps = 1e-6;
        for k in 0..base_grid.len() {
            let mut p = base_grid.clone();
            let mut m = base_grid.clone();
            p[k] += eps;
            m[k] -= eps;
            let tp = Tensor::from_vec(p, (1, 5, 5, 2), &Device::Cpu).unwrap();
            let tm = Tensor::from_vec(m, (1, 5, 5, 2), &Device::Cpu).unwrap();
            let fd = (f(&img, &tp) - f(&img, &tm)) / (2.0 * eps);
            assert!((fd - gg[k]).abs() < 1e-6 * (1.0 + fd.abs()), "grid {k}: {fd} vs {}", gg[k]);
        }
        let base_img = tensor_to_f64(&img).unwrap();
        for k in 0..base_img.len() {
            let mut p = base_img.clone();
            let mut m = base_img.clone();
            p[k] += eps;
            m[k] -= eps;
            let tp = Tensor::from_vec(p, (1, 1, 5, 5), &Device::Cpu).unwrap();
            let tm = Tensor::from_vec(m, (1, 1, 5, 5), &Device::Cpu).unwrap();
            let fd = (f(&tp, &grid0) - f(&tm, &grid0)) / (2.0 * eps);
            assert!((fd - gi[k]).abs() < 1e-6 * (1.0 + fd.abs()), "image {k}: {fd} vs {}", gi[k]);
        }
    }
}
