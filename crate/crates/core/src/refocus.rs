//! Synthetic-aperture image of the static background: dynamic reference
//! pixels are replaced by the mean of the static rays through their
//! estimated background point.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::RayWarper;
use crate::io::{DisparityRaster, LightFieldFrame};
use crate::raster::{bilinear, nearest_pixel, Image, Raster};
use crate::segmentation::LabelMap;

#[derive(Debug, Clone, PartialEq)]
pub struct RefocusResult {
    /// Grayscale background image in `[0, 1]`.
    pub image: Image,
    /// Per-channel background when color refocusing was requested.
    pub color: Option<[Image; 3]>,
    /// Number of rays averaged per pixel; static pass-through pixels count 1.
    pub coverage: Raster<u8>,
    /// Pixels with no contributing ray or no valid disparity.
    pub gap_mask: Raster<bool>,
}

impl RefocusResult {
    pub fn gap_count(&self) -> usize {
        self.gap_mask.as_slice().iter().filter(|&&g| g).count()
    }

    /// Coverage scaled to `255 * count / K`, rounded half-up.
    pub fn coverage_u8(&self, num_views: usize) -> Raster<u8> {
        self.coverage.map(|&c| {
            ((255.0 * c as f64 / num_views as f64) + 0.5)
                .floor()
                .min(255.0) as u8
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RefocusParams {
    /// Also average the color planes, when the frame has them.
    pub color: bool,
}

pub fn synthesize_refocused(
    frame: &LightFieldFrame,
    labels: &[LabelMap],
    warper: &RayWarper<f64>,
    disparity: &DisparityRaster,
    params: &RefocusParams,
) -> Result<RefocusResult> {
    let k_views = frame.num_views();
    if labels.len() != k_views || warper.num_views() != k_views {
        return Err(Error::Validation(format!(
            "refocusing needs {k_views} label maps and rig views, got {} and {}",
            labels.len(),
            warper.num_views()
        )));
    }
    let (w, h) = frame.dims();
    if disparity.dims() != (w, h) {
        return Err(Error::Validation(format!(
            "disparity is {}x{}, frame is {w}x{h}",
            disparity.width(),
            disparity.height()
        )));
    }
    let color_planes = if params.color {
        frame.colors.as_ref()
    } else {
        None
    };
    let channels = 1 + if color_planes.is_some() { 3 } else { 0 };

    // Per pixel: (values per channel, ray count, gap).
    type Px = ([f32; 4], u8, bool);
    let pixels: Vec<Px> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                let reference = |c: usize| match c {
                    0 => *frame.images[0].get(x, y),
                    c => *color_planes.expect("color channel")[0][c - 1].get(x, y),
                };
                let d = disparity.get(x, y);
                if labels[0].is_static(x, y) {
                    let mut vals = [0.0f32; 4];
                    for (c, v) in vals.iter_mut().enumerate().take(channels) {
                        *v = reference(c);
                    }
                    return (vals, 1, d.is_none());
                }
                let Some(d) = d else {
                    return ([0.0; 4], 0, true);
                };
                let mut sums = [0.0f64; 4];
                let mut n = 0u8;
                for k in 0..k_views {
                    let (u, v) = warper.warp(x as f64, y as f64, d as f64, k);
                    let Some((px, py)) = nearest_pixel(u, v, w, h) else {
                        continue;
                    };
                    if !labels[k].is_static(px, py) {
                        continue;
                    }
                    let Some(g) = bilinear(&frame.images[k], u, v) else {
                        continue;
                    };
                    sums[0] += g as f64;
                    if let Some(planes) = color_planes {
                        for c in 0..3 {
                            sums[c + 1] +=
                                bilinear(&planes[k][c], u, v).expect("same bounds as gray") as f64;
                        }
                    }
                    n += 1;
                }
                if n == 0 {
                    return ([0.0; 4], 0, true);
                }
                let mut vals = [0.0f32; 4];
                for c in 0..channels {
                    vals[c] = (sums[c] / n as f64) as f32;
                }
                (vals, n, false)
            })
        })
        .collect();

    let coverage = Raster::from_vec(w, h, pixels.iter().map(|p| p.1).collect())?;
    let gap_mask = Raster::from_vec(w, h, pixels.iter().map(|p| p.2).collect())?;
    let mut planes: Vec<Image> = (0..channels)
        .map(|c| Raster::from_vec(w, h, pixels.iter().map(|p| p.0[c]).collect()))
        .collect::<Result<_>>()?;
    for (c, plane) in planes.iter_mut().enumerate() {
        let fallback = if c == 0 {
            &frame.images[0]
        } else {
            &color_planes.expect("color")[0][c - 1]
        };
        fill_from_row(plane, &coverage, fallback);
    }
    let image = planes.remove(0);
    let color = color_planes.map(|_| {
        let mut it = planes.into_iter();
        [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
    });
    Ok(RefocusResult {
        image,
        color,
        coverage,
        gap_mask,
    })
}

/// Gives every zero-coverage pixel the value of the nearest covered pixel on
/// its row (the left one on ties). Rows without coverage keep the
/// `fallback` image.
fn fill_from_row(plane: &mut Image, coverage: &Raster<u8>, fallback: &Image) {
    let w = plane.width();
    for y in 0..plane.height() {
        let covered: Vec<usize> = (0..w).filter(|&x| *coverage.get(x, y) > 0).collect();
        for x in 0..w {
            if *coverage.get(x, y) > 0 {
                continue;
            }
            let value = if covered.is_empty() {
                *fallback.get(x, y)
            } else {
                let right = covered.partition_point(|&c| c < x);
                let pick = match (right.checked_sub(1).map(|i| covered[i]), covered.get(right)) {
                    (Some(l), Some(&r)) => {
                        if x - l <= r - x {
                            l
                        } else {
                            r
                        }
                    }
                    (Some(l), None) => l,
                    (None, Some(&r)) => r,
                    (None, None) => unreachable!(),
                };
                *plane.get(pick, y)
            };
            plane.set(x, y, value);
        }
    }
}
