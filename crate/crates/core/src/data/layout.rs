//! Readers and writers for the files of a sequence directory.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

pub const EVENTS_FILE: &str = "events.bin";
pub const FRAMES_DIR: &str = "frames";
pub const DEPTH_DIR: &str = "depth";
pub const TIMESTAMPS_FILE: &str = "timestamps.txt";
pub const CALIB_FILE: &str = "calib.json";
pub const POSES_FILE: &str = "poses.txt";
pub const EXCLUDE_FILE: &str = "exclude.txt";

pub fn frame_path(seq: &Path, index: usize) -> PathBuf {
    seq.join(FRAMES_DIR).join(format!("{index:06}.png"))
}

pub fn depth_path(seq: &Path, index: usize) -> PathBuf {
    seq.join(DEPTH_DIR).join(format!("{index:06}.bin"))
}

/// Decodes an 8/16-bit grayscale or 8-bit RGB image to `(C, H, W)` in `[0, 1]`.
pub fn read_frame(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format("image", format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => Ok(Array3::from_shape_fn((1, h, w), |(_, y, x)| {
            b.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0
        })),
        DynamicImage::ImageLuma16(b) => Ok(Array3::from_shape_fn((1, h, w), |(_, y, x)| {
            b.get_pixel(x as u32, y as u32).0[0] as f32 / 65535.0
        })),
        DynamicImage::ImageRgb8(b) => Ok(Array3::from_shape_fn((3, h, w), |(c, y, x)| {
            b.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0
        })),
        other => Err(Error::format(
            "image",
            format!("{}: unsupported pixel layout {:?}", path.display(), other.color()),
        )),
    }
}

/// Writes a single-channel image in `[0, 1]` as 16-bit grayscale PNG.
pub fn write_frame_gray16(path: &Path, img: &Array2<f32>) -> Result<()> {
    let (h, w) = img.dim();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([(img[[y as usize, x as usize]].clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    ensure_parent(path)?;
    buf.save(path).map_err(|e| Error::format("image", format!("{}: {e}", path.display())))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

/// JSON sidecar describing a flat float32 array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
}

/// Writes a flat little-endian float32 file plus a `.json` shape sidecar.
pub fn write_f32_array(path: &Path, shape: &[usize], values: impl IntoIterator<Item = f32>) -> Result<()> {
    ensure_parent(path)?;
    let mut bytes = Vec::with_capacity(shape.iter().product::<usize>() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if bytes.len() != shape.iter().product::<usize>() * 4 {
        return Err(Error::Shape(format!("{} values for shape {shape:?}", bytes.len() / 4)));
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let header = ArrayHeader {
        dtype: "float32".into(),
        shape: shape.to_vec(),
    };
    let side = path.with_extension("json");
    std::fs::write(&side, serde_json::to_vec(&header)?).map_err(|e| Error::io(&side, e))
}

pub fn read_f32_array(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let side = path.with_extension("json");
    let header: ArrayHeader =
        serde_json::from_slice(&std::fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
    if header.dtype != "float32" {
        return Err(Error::format("array header", format!("dtype {} is not float32", header.dtype)));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let n: usize = header.shape.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::format(
            "array",
            format!("{}: {} bytes for shape {:?}", path.display(), bytes.len(), header.shape),
        ));
    }
    let v = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((header.shape, v))
}

pub fn write_depth(path: &Path, depth: &Array2<f32>) -> Result<()> {
    let (h, w) = depth.dim();
    write_f32_array(path, &[h, w], depth.iter().copied())
}

pub fn read_depth(path: &Path) -> Result<Array2<f32>> {
    let (shape, v) = read_f32_array(path)?;
    if shape.len() != 2 {
        return Err(Error::format("depth", format!("expected a 2-D shape, got {shape:?}")));
    }
    Array2::from_shape_vec((shape[0], shape[1]), v).map_err(|e| Error::Shape(e.to_string()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| l.map_err(|e| Error::io(path, e)))
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .collect()
}

pub fn read_timestamps(path: &Path) -> Result<Vec<f64>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::format("timestamps", format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_timestamps(path: &Path, ts: &[f64]) -> Result<()> {
    let mut s = String::new();
    for t in ts {
        s.push_str(&format!("{t:.9}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Camera-to-world poses, one row-major 3×4 matrix per line.
pub fn read_poses(path: &Path) -> Result<Vec<RigidTransform>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format("poses", format!("line {}: {e}", i + 1)))?;
            if v.len() != 12 {
                return Err(Error::format("poses", format!("line {}: {} values, expected 12", i + 1, v.len())));
            }
            Ok(RigidTransform::new(
                Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
                Vector3::new(v[3], v[7], v[11]),
            ))
        })
        .collect()
}

pub fn write_poses(path: &Path, poses: &[RigidTransform]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for p in poses {
        let r = &p.rotation;
        let t = &p.translation;
        writeln!(
            f,
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_exclusions(path: &Path) -> Result<Vec<usize>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_lines(path)?
        .iter()
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| Error::format("exclusion list", format!("{l:?}: {e}")))
        })
        .collect()
}

pub fn write_exclusions(path: &Path, indices: &[usize]) -> Result<()> {
    let s: String = indices.iter().map(|i| format!("{i}\n")).collect();
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray16_round_trip_is_near_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let img = Array2::from_shape_fn((5, 7), |(y, x)| (y * 7 + x) as f32 / 40.0);
        write_frame_gray16(&p, &img).unwrap();
        let back = read_frame(&p).unwrap();
        assert_eq!(back.dim(), (1, 5, 7));
        for ((y, x), v) in img.indexed_iter() {
            assert!((back[[0, y, x]] - v).abs() < 1e-4);
        }
    }

    #[test]
    fn rgb8_frames_decode_to_three_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        image::RgbImage::from_pixel(3, 2, image::Rgb([255, 0, 51])).save(&p).unwrap();
        let f = read_frame(&p).unwrap();
        assert_eq!(f.dim(), (3, 2, 3));
        assert_eq!((f[[0, 0, 0]], f[[1, 1, 2]], f[[2, 0, 1]]), (1.0, 0.0, 0.2));
    }

    #[test]
    fn depth_and_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("depth").join("000003.bin");
        let d = Array2::from_shape_fn((3, 4), |(y, x)| 1.0 + (y * 4 + x) as f32);
        write_depth(&p, &d).unwrap();
        assert!(p.with_extension("json").exists());
        assert_eq!(read_depth(&p).unwrap(), d);
        std::fs::write(&p, [0u8; 5]).unwrap();
        assert!(matches!(read_depth(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn poses_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.txt");
        let tf = crate::geometry::pose_vector_to_transform(&[0.1, 0.2, -0.3, 1.0, 2.0, 3.0], false);
        write_poses(&p, &[RigidTransform::identity(), tf]).unwrap();
        let back = read_poses(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[1].rotation - tf.rotation).amax() < 1e-12);
        assert!((back[1].translation - tf.translation).amax() < 1e-12);
    }

    #[test]
    fn missing_exclusion_file_means_none() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_exclusions(&dir.path().join(EXCLUDE_FILE)).unwrap().is_empty());
        write_exclusions(&dir.path().join(EXCLUDE_FILE), &[3, 5]).unwrap();
        assert_eq!(read_exclusions(&dir.path().join(EXCLUDE_FILE)).unwrap(), vec![3, 5]);
    }
}
