//! Scores against synthetic ground truth.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{parse_calibration, CameraRig};
use crate::io::{frame_dirs, read_disparity_pfm, read_gray_png, read_u8_png, DisparityRaster};
use crate::raster::{Image, Raster};

/// Fraction of ground-truth-valid pixels (inside `region`, if given) whose
/// estimate is invalid or off by more than `threshold`.
pub fn bad_pixel_rate(
    estimate: &DisparityRaster,
    truth: &DisparityRaster,
    threshold: f64,
    region: Option<&Raster<bool>>,
) -> f64 {
    let mut bad = 0usize;
    let mut total = 0usize;
    let (w, h) = truth.dims();
    for y in 0..h {
        for x in 0..w {
            if region.is_some_and(|r| !r.get(x, y)) {
                continue;
            }
            let Some(t) = truth.get(x, y) else { continue };
            total += 1;
            match estimate.get(x, y) {
                Some(e) if (e as f64 - t as f64).abs() <= threshold => {}
                _ => bad += 1,
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

/// Fraction of estimate-valid pixels within `threshold` of the truth.
pub fn accuracy_on_valid(
    estimate: &DisparityRaster,
    truth: &DisparityRaster,
    threshold: f64,
) -> f64 {
    let mut good = 0usize;
    let mut total = 0usize;
    let (w, h) = truth.dims();
    for y in 0..h {
        for x in 0..w {
            let (Some(e), Some(t)) = (estimate.get(x, y), truth.get(x, y)) else {
                continue;
            };
            total += 1;
            if (e as f64 - t as f64).abs() <= threshold {
                good += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        good as f64 / total as f64
    }
}

/// Peak signal-to-noise ratio in dB for `[0, 1]` images over the pixels
/// where `region` holds; infinite for identical inputs, `None` for an empty region.
pub fn psnr(a: &Image, b: &Image, region: Option<&Raster<bool>>) -> Option<f64> {
    let mut se = 0.0f64;
    let mut n = 0usize;
    for (i, (&x, &y)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
        if region.is_some_and(|r| !r.as_slice()[i]) {
            continue;
        }
        let e = x as f64 - y as f64;
        se += e * e;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let mse = se / n as f64;
    Some(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Fraction of `mask` pixels (inside `region`, if given) that are set.
pub fn fraction(mask: &Raster<bool>, region: Option<&Raster<bool>>) -> f64 {
    let mut set = 0usize;
    let mut total = 0usize;
    for (i, &m) in mask.as_slice().iter().enumerate() {
        if region.is_some_and(|r| !r.as_slice()[i]) {
            continue;
        }
        total += 1;
        set += usize::from(m);
    }
    if total == 0 {
        0.0
    } else {
        set as f64 / total as f64
    }
}

/// Elementwise `a && b`.
pub fn and(a: &Raster<bool>, b: &Raster<bool>) -> Raster<bool> {
    Raster::from_vec(
        a.width(),
        a.height(),
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| x && y)
            .collect(),
    )
    .expect("same dims")
}

/// Scores of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEval {
    pub name: String,
    /// Over all reference pixels with ground truth.
    pub bad_pixel_rate: f64,
    /// Over the occluded reference pixels only.
    pub occluded_bad_pixel_rate: f64,
    /// Over the occluded pixels that are not gaps; `None` without occlusion.
    pub occluded_psnr: Option<f64>,
    pub gap_fraction: f64,
}

impl fmt::Display for FrameEval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let psnr = match self.occluded_psnr {
            Some(p) if p.is_infinite() => "inf".to_string(),
            Some(p) => format!("{p:.2} dB"),
            None => "n/a".to_string(),
        };
        write!(
            f,
            "frame {}: bad pixels {:.2}% (occluded {:.2}%) | occluded PSNR {} | gaps {:.2}%",
            self.name,
            100.0 * self.bad_pixel_rate,
            100.0 * self.occluded_bad_pixel_rate,
            psnr,
            100.0 * self.gap_fraction
        )
    }
}

/// Compares a pipeline output directory against a synthetic dataset.
/// Gaps are read back as zero coverage or invalid disparity.
pub fn evaluate_dataset(gt: &Path, result: &Path) -> Result<Vec<FrameEval>> {
    let calib_path = gt.join("calib.txt");
    let calib = fs::read_to_string(&calib_path).map_err(|e| Error::io(&calib_path, e))?;
    let rig: CameraRig<f64> = parse_calibration(&calib)?;
    let step = rig.candidate_step();
    let mut out = Vec::new();
    for dir in frame_dirs(gt)? {
        let name = dir
            .file_name()
            .expect("frame dir has a name")
            .to_string_lossy()
            .into_owned();
        let res = result.join(&name);
        let truth = read_disparity_pfm(&dir.join("gt_disparity.pfm"))?;
        let background = read_gray_png(&dir.join("gt_background.png"))?;
        let occluded = read_u8_png(&dir.join("gt_mask_0.png"))?.map(|&v| v > 127);
        let estimate = read_disparity_pfm(&res.join("disparity.pfm"))?;
        let refocused = read_gray_png(&res.join("refocused.png"))?;
        let coverage = read_u8_png(&res.join("coverage.png"))?;
        if estimate.dims() != truth.dims() || refocused.dims() != background.dims() {
            return Err(Error::Validation(format!(
                "frame {name}: result and ground truth sizes differ"
            )));
        }
        let gap = Raster::from_fn(truth.width(), truth.height(), |x, y| {
            *coverage.get(x, y) == 0 || !estimate.is_valid(x, y)
        });
        let usable = and(&occluded, &gap.map(|&g| !g));
        out.push(FrameEval {
            name,
            bad_pixel_rate: bad_pixel_rate(&estimate, &truth, step, None),
            occluded_bad_pixel_rate: bad_pixel_rate(&estimate, &truth, step, Some(&occluded)),
            occluded_psnr: psnr(&refocused, &background, Some(&usable)),
            gap_fraction: fraction(&gap, None),
        });
    }
    if out.is_empty() {
        return Err(Error::Validation(format!(
            "no frames found in {}",
            gt.display()
        )));
    }
    Ok(out)
}
