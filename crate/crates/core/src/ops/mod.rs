//! Differentiable tensor building blocks that the stock tensor library
//! lacks on the CPU: bilinear resizing with a backward pass, reflection
//! padding, an overlapping max pool and a pixel-coordinate grid sampler.

mod pool;
mod sampler;

pub use pool::max_pool_3x3_s2;
pub use sampler::{bilinear_sample, sample_validity};

use candle_core::{CpuStorage, DType, Device, Layout, Result, Tensor};

/// Logistic sigmoid written through `tanh` so the backward pass stays finite
/// for large-magnitude inputs.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    ((x * 0.5)?.tanh()? + 1.0)? * 0.5
}

/// Interpolation matrix `(out, inp)` for half-pixel-centred linear resizing.
fn interp_matrix(inp: usize, out: usize) -> Vec<f64> {
    let mut m = vec![0f64; out * inp];
    let scale = inp as f64 / out as f64;
    for o in 0..out {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        let w = (src - i0 as f64).clamp(0.0, 1.0);
        m[o * inp + i0] += 1.0 - w;
        m[o * inp + i1] += w;
    }
    m
}

/// Bilinear resize of an `(N, C, H, W)` tensor, differentiable through two
/// matrix products.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let dev = x.device();
    let dt = x.dtype();
    let mw = Tensor::from_vec(interp_matrix(w, out_w), (out_w, w), dev)?
        .to_dtype(dt)?
        .t()?
        .contiguous()?;
    let mh = Tensor::from_vec(interp_matrix(h, out_h), (out_h, h), dev)?
        .to_dtype(dt)?
        .t()?
        .contiguous()?;
    let y = x.contiguous()?.broadcast_matmul(&mw)?; // N C H out_w
    let y = y.transpose(2, 3)?.contiguous()?.broadcast_matmul(&mh)?; // N C out_w out_h
    y.transpose(2, 3)?.contiguous()
}

/// Pads the two trailing dimensions by reflecting `pad` interior samples.
pub fn reflect_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let rank = x.rank();
    let mut y = x.clone();
    for dim in [rank - 1, rank - 2] {
        let n = y.dim(dim)?;
        if n <= pad {
            candle_core::bail!("reflect padding of {pad} needs more than {pad} samples, got {n}");
        }
        let mut parts = Vec::with_capacity(2 * pad + 1);
        for i in (1..=pad).rev() {
            parts.push(y.narrow(dim, i, 1)?);
        }
        parts.push(y.clone());
        for i in 1..=pad {
            parts.push(y.narrow(dim, n - 1 - i, 1)?);
        }
        y = Tensor::cat(&parts, dim)?;
    }
    Ok(y)
}

/// Mean over a `k×k` neighbourhood of an already padded tensor (valid region).
pub fn box_filter_valid(x: &Tensor, k: usize) -> Result<Tensor> {
    let rank = x.rank();
    let (h, w) = (x.dim(rank - 2)?, x.dim(rank - 1)?);
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut acc: Option<Tensor> = None;
    for dy in 0..k {
        let rows = x.narrow(rank - 2, dy, oh)?;
        for dx in 0..k {
            let win = rows.narrow(rank - 1, dx, ow)?;
            acc = Some(match acc {
                None => win.contiguous()?,
                Some(a) => (a + win)?,
            });
        }
    }
    acc.expect("k >= 1") / (k * k) as f64
}

/// `(N, 3, H*W)` homogeneous pixel coordinates `(x, y, 1)` in row-major order.
pub fn pixel_grid(n: usize, h: usize, w: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    let mut v = Vec::with_capacity(3 * h * w);
    for _ in 0..h {
        v.extend((0..w).map(|x| x as f64));
    }
    for y in 0..h {
        for _ in 0..w {
            v.push(y as f64);
        }
    }
    v.extend(std::iter::repeat(1.0).take(h * w));
    Tensor::from_vec(v, (1, 3, h * w), dev)?
        .to_dtype(dtype)?
        .broadcast_as((n, 3, h * w))?
        .contiguous()
}

pub(crate) fn storage_to_f64(storage: &CpuStorage, layout: &Layout, op: &str) -> Result<Vec<f64>> {
    let (start, end) = layout
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg(format!("{op} requires contiguous input")))?;
    match storage {
        CpuStorage::F32(v) => Ok(v[start..end].iter().map(|&x| x as f64).collect()),
        CpuStorage::F64(v) => Ok(v[start..end].to_vec()),
        _ => candle_core::bail!("{op} supports only f32 and f64 tensors"),
    }
}

pub(crate) fn f64_to_storage(v: Vec<f64>, like: DType) -> Result<CpuStorage> {
    match like {
        DType::F32 => Ok(CpuStorage::F32(v.into_iter().map(|x| x as f32).collect())),
        DType::F64 => Ok(CpuStorage::F64(v)),
        dt => candle_core::bail!("unsupported dtype {dt:?}"),
    }
}

pub(crate) fn tensor_to_f64(t: &Tensor) -> Result<Vec<f64>> {
    t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()
}
