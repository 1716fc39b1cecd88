use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, Layout, Result, Shape, Tensor};

use super::{f64_to_storage, storage_to_f64, tensor_to_f64};

/// 3×3 max pooling with stride 2 and one sample of implicit `-inf` padding,
/// as used in the residual stem.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    x.contiguous()?.apply_op1(MaxPool3x3S2)
}

struct MaxPool3x3S2;

fn out_len(n: usize) -> usize {
    (n + 2 - 3) / 2 + 1
}

/// For every output cell, the flat input index holding the window maximum.
fn argmax(input: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    let (oh, ow) = (out_len(h), out_len(w));
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for ky in 0..3 {
                    let y = (2 * oy + ky) as isize - 1;
                    if y < 0 || y as usize >= h {
                        continue;
                    }
                    for kx in 0..3 {
                        let x = (2 * ox + kx) as isize - 1;
                        if x < 0 || x as usize >= w {
                            continue;
                        }
                        let i = base + y as usize * w + x as usize;
                        if best_i == usize::MAX || input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                idx.push(best_i);
            }
        }
    }
    idx
}

impl CustomOp1 for MaxPool3x3S2 {
    fn name(&self) -> &'static str {
        "max-pool-3x3-s2"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = layout.shape().dims4()?;
        let input = storage_to_f64(storage, layout, self.name())?;
        let out: Vec<f64> = argmax(&input, n, c, h, w).into_iter().map(|i| input[i]).collect();
        let shape = Shape::from((n, c, out_len(h), out_len(w)));
        Ok((f64_to_storage(out, storage.dtype())?, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> Result<Option<Tensor>> {
        let (n, c, h, w) = arg.dims4()?;
        let input = tensor_to_f64(arg)?;
        let g = tensor_to_f64(grad_res)?;
        let mut grad = vec![0f64; input.len()];
        for (o, i) in argmax(&input, n, c, h, w).into_iter().enumerate() {
            grad[i] += g[o];
        }
        let grad = Tensor::from_vec(grad, (n, c, h, w), arg.device())?.to_dtype(arg.dtype())?;
        Ok(Some(grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    #[test]
    fn pools_with_stride_two() {
        let x = Tensor::from_vec((0..16).map(|v| v as f64).collect(), (1, 1, 4, 4), &Device::Cpu).unwrap();
        let y = max_pool_3x3_s2(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        assert_eq!(tensor_to_f64(&y).unwrap(), vec![5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn gradient_routes_to_argmax() {
        let x = Var::from_tensor(
            &Tensor::from_vec((0..16).map(|v| v as f64).collect(), (1, 1, 4, 4), &Device::Cpu).unwrap(),
        )
        .unwrap();
        let y = max_pool_3x3_s2(x.as_tensor()).unwrap().sum_all().unwrap();
        let g = tensor_to_f64(y.backward().unwrap().get(x.as_tensor()).unwrap()).unwrap();
        let mut expect = vec![0.0; 16];
        for i in [5, 7, 13, 15] {
            expect[i] = 1.0;
        }
        assert_eq!(g, expect);
    }

    #[test]
    fn odd_sizes_round_up() {
        let x = Tensor::zeros((2, 3, 9, 11), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert_eq!(max_pool_3x3_s2(&x).unwrap().dims(), &[2, 3, 5, 6]);
    }
}
