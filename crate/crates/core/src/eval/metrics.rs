use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CUTOFFS: [f64; 3] = [10.0, 20.0, 30.0];

/// Global scale correction applied to predictions before scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    None,
    /// Scale by `median(gt) / median(pred)` over the scored pixels.
    #[default]
    Median,
}

impl Alignment {
    pub fn name(&self) -> &'static str {
        match self {
            Alignment::None => "none",
            Alignment::Median => "median",
        }
    }
}

impl std::str::FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Alignment::None),
            "median" => Ok(Alignment::Median),
            _ => Err(Error::Config(format!("unknown alignment `{s}` (expected none or median)"))),
        }
    }
}

impl std::fmt::Display for Alignment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Rectangle of scored pixels, in preprocessed image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRegion {
    /// Upper 200 rows of a 260×346 sensor, which excludes the car hood.
    pub const MVSEC: CropRegion = CropRegion {
        top: 0,
        left: 0,
        height: 200,
        width: 346,
    };

    pub fn full(height: usize, width: usize) -> Self {
        CropRegion {
            top: 0,
            left: 0,
            height,
            width,
        }
    }

    pub fn check(&self, height: usize, width: usize) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.top + self.height > height || self.left + self.width > width {
            return Err(Error::Config(format!(
                "crop {}x{} at ({}, {}) does not fit a {height}x{width} image",
                self.height, self.width, self.top, self.left
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for CropRegion {
    type Err = Error;

    /// `top,left,height,width`, or `mvsec`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "mvsec" {
            return Ok(CropRegion::MVSEC);
        }
        let v = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("crop `{s}`: {e}")))?;
        match v[..] {
            [top, left, height, width] => Ok(CropRegion {
                top,
                left,
                height,
                width,
            }),
            _ => Err(Error::Config(format!("crop `{s}` must be top,left,height,width"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub cutoffs: Vec<f64>,
    pub alignment: Alignment,
    /// `None` scores the whole image.
    pub crop: Option<CropRegion>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            alignment: Alignment::Median,
            crop: None,
        }
    }
}

impl MetricOptions {
    pub fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() || self.cutoffs.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::Config(format!("cutoffs must be positive, got {:?}", self.cutoffs)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffError {
    pub cutoff: f64,
    /// Mean absolute error; absent when no pixel qualifies.
    pub error: Option<f64>,
    pub n_valid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub alignment: Alignment,
    /// Factor applied to the prediction (1 without alignment).
    pub scale: f64,
    pub cutoffs: Vec<CutoffError>,
}

impl DepthMetrics {
    pub fn error_at(&self, cutoff: f64) -> Option<f64> {
        self.cutoffs.iter().find(|c| c.cutoff == cutoff).and_then(|c| c.error)
    }
}

/// Ground truth counts where it is finite and positive.
pub fn gt_validity(gt: &Array2<f32>) -> Array2<bool> {
    gt.mapv(|v| v.is_finite() && v > 0.0)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Mean absolute depth error below each cutoff, over pixels that are valid
/// in `mask` and `gt` and lie inside the crop.
pub fn mean_error_at_cutoffs(
    pred: &Array2<f32>,
    gt: &Array2<f32>,
    mask: &Array2<bool>,
    opts: &MetricOptions,
) -> Result<DepthMetrics> {
    if pred.dim() != gt.dim() || gt.dim() != mask.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?}, ground truth {:?}, mask {:?}",
            pred.dim(),
            gt.dim(),
            mask.dim()
        )));
    }
    opts.validate()?;
    let (h, w) = gt.dim();
    let crop = opts.crop.unwrap_or(CropRegion::full(h, w));
    crop.check(h, w)?;

    let mut pairs = Vec::new();
    for y in crop.top..crop.top + crop.height {
        for x in crop.left..crop.left + crop.width {
            let g = gt[(y, x)];
            if !mask[(y, x)] || !g.is_finite() || g <= 0.0 {
                continue;
            }
            let p = pred[(y, x)];
            if !p.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite prediction at ({y}, {x})")));
            }
            pairs.push((p as f64, g as f64));
        }
    }

    let scale = match opts.alignment {
        Alignment::None => 1.0,
        Alignment::Median if pairs.is_empty() => 1.0,
        Alignment::Median => {
            let mp = median(&mut pairs.iter().map(|p| p.0).collect::<Vec<_>>()).unwrap_or(0.0);
            let mg = median(&mut pairs.iter().map(|p| p.1).collect::<Vec<_>>()).unwrap_or(0.0);
            if !(mp > 0.0) {
                return Err(Error::InvalidInput(format!("median prediction {mp} cannot be aligned")));
            }
            mg / mp
        }
    };

    let cutoffs = opts
        .cutoffs
        .iter()
        .map(|&c| {
            let (mut sum, mut n) = (0.0, 0usize);
            for &(p, g) in pairs.iter().filter(|(_, g)| *g <= c) {
                sum += (p * scale - g).abs();
                n += 1;
            }
            CutoffError {
                cutoff: c,
                error: (n > 0).then(|| sum / n as f64),
                n_valid: n,
            }
        })
        .collect();
    Ok(DepthMetrics {
        alignment: opts.alignment,
        scale,
        cutoffs,
    })
}

/// Per-cutoff mean of per-frame errors (frames without qualifying pixels are
/// skipped) and total pixel counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub alignment: Alignment,
    pub frames: usize,
    pub cutoffs: Vec<CutoffError>,
}

impl AggregateMetrics {
    pub fn error_at(&self, cutoff: f64) -> Option<f64> {
        self.cutoffs.iter().find(|c| c.cutoff == cutoff).and_then(|c| c.error)
    }
}

pub fn aggregate(per_frame: &[DepthMetrics], opts: &MetricOptions) -> AggregateMetrics {
    let cutoffs = opts
        .cutoffs
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let errs: Vec<f64> = per_frame.iter().filter_map(|m| m.cutoffs[i].error).collect();
            CutoffError {
                cutoff: c,
                error: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
                n_valid: per_frame.iter().map(|m| m.cutoffs[i].n_valid).sum(),
            }
        })
        .collect();
    AggregateMetrics {
        alignment: opts.alignment,
        frames: per_frame.len(),
        cutoffs,
    }
}

/// The best single depth for a frame under absolute error: the median of
/// the scored ground truth. Returned as a full map for scoring.
pub fn constant_baseline(gt: &Array2<f32>, mask: &Array2<bool>, crop: Option<CropRegion>) -> Array2<f32> {
    let (h, w) = gt.dim();
    let crop = crop.unwrap_or(CropRegion::full(h, w));
    let mut vals = Vec::new();
    for y in crop.top..(crop.top + crop.height).min(h) {
        for x in crop.left..(crop.left + crop.width).min(w) {
            let g = gt[(y, x)];
            if mask[(y, x)] && g.is_finite() && g > 0.0 {
                vals.push(g as f64);
            }
        }
    }
    let m = median(&mut vals).unwrap_or(1.0);
    Array2::from_elem((h, w), m as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Array2<f32> {
        Array2::from_shape_fn((h, w), |(y, x)| 1.0 + 0.5 * y as f32 + 0.25 * x as f32)
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn cutoff_excludes_far_pixels() {
        let gt = ramp(8, 8);
        let pred = gt.mapv(|v| v + 2.0);
        let opts = MetricOptions {
            cutoffs: vec![2.0, 100.0],
            alignment: Alignment::None,
            crop: None,
        };
        let m = mean_error_at_cutoffs(&pred, &gt, &gt_validity(&gt), &opts).unwrap();
        assert_eq!(m.cutoffs[0].n_valid, 9);
        assert_eq!(m.cutoffs[1].n_valid, 64);
        assert_eq!(m.error_at(2.0), Some(2.0));
    }

    #[test]
    fn no_valid_pixels_is_absent() {
        let gt = Array2::from_elem((4, 4), f32::NAN);
        let m = mean_error_at_cutoffs(&gt.clone(), &gt, &gt_validity(&gt), &MetricOptions::default()).unwrap();
        assert!(m.cutoffs.iter().all(|c| c.error.is_none() && c.n_valid == 0));
    }

    #[test]
    fn crop_must_fit() {
        let gt = ramp(4, 4);
        let opts = MetricOptions {
            crop: Some(CropRegion::MVSEC),
            ..Default::default()
        };
        assert!(mean_error_at_cutoffs(&gt, &gt, &gt_validity(&gt), &opts).is_err());
        assert_eq!("0,1,2,3".parse::<CropRegion>().unwrap(), CropRegion { top: 0, left: 1, height: 2, width: 3 });
        assert!("1,2".parse::<CropRegion>().is_err());
    }

    #[test]
    fn aggregate_is_mean_of_frame_means() {
        let opts = MetricOptions {
            cutoffs: vec![10.0],
            alignment: Alignment::None,
            crop: None,
        };
        let frame = |e: Option<f64>, n| DepthMetrics {
            alignment: Alignment::None,
            scale: 1.0,
            cutoffs: vec![CutoffError { cutoff: 10.0, error: e, n_valid: n }],
        };
        let a = aggregate(&[frame(Some(1.0), 10), frame(Some(3.0), 1000), frame(None, 0)], &opts);
        assert_eq!(a.error_at(10.0), Some(2.0));
        assert_eq!(a.cutoffs[0].n_valid, 1010);
    }

    #[test]
    fn baseline_is_gt_median() {
        let gt = ramp(3, 3);
        let b = constant_baseline(&gt, &gt_validity(&gt), None);
        assert!(b.iter().all(|v| *v == 1.75));
    }
}
