//! Exhaustive reference implementation of the per-pixel MAP disparity,
//! written independently of the estimator. Slow by design; use on small frames.

use crate::descriptor::{sobel_descriptor_field, DescriptorField, DescriptorKind};
use crate::disparity::EstimatorParams;
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, RayWarper};
use crate::io::{DisparityRaster, LightFieldFrame};
use crate::raster::Raster;
use crate::segmentation::LabelMap;

/// Descriptors of the static rays through `(x, y)` at disparity `d`.
fn static_rays<'a>(
    fields: &'a [DescriptorField],
    labels: &[LabelMap],
    warper: &RayWarper<f64>,
    x: usize,
    y: usize,
    d: f64,
) -> Vec<&'a [f32]> {
    let mut rays = Vec::new();
    for (k, field) in fields.iter().enumerate() {
        let (u, v) = warper.warp(x as f64, y as f64, d, k);
        let (ur, vr) = (u.round(), v.round());
        let inside = ur >= 0.0
            && vr >= 0.0
            && ur <= (field.width() - 1) as f64
            && vr <= (field.height() - 1) as f64;
        if !inside {
            continue;
        }
        let (px, py) = (ur as usize, vr as usize);
        if !labels[k].is_static(px, py) {
            continue;
        }
        if let Some(f) = field.get(px, py) {
            rays.push(f);
        }
    }
    rays
}

/// Mean squared distance to the mean, accumulated in view order.
fn variance(rays: &[&[f32]]) -> f64 {
    let n = rays.len() as f64;
    let dim = rays[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|j| {
            let mut s = 0.0f64;
            for r in rays {
                s += r[j] as f64;
            }
            s / n
        })
        .collect();
    let mut total = 0.0f64;
    for r in rays {
        for j in 0..dim {
            let e = r[j] as f64 - mean[j];
            total += e * e;
        }
    }
    total / n
}

/// Brute-force MAP disparity over explicit per-pixel candidate lists
/// (`(disparity, log prior)`, row-major pixel order).
///
/// Energies are `beta * variance - log prior`; candidates with fewer than
/// `min_static_views` static rays use `beta` times the nearest-rank
/// `miss_percentile` of all sufficiently observed variances instead. The
/// lowest energy wins, then the smallest disparity.
pub fn brute_force_disparity_oracle(
    frame: &LightFieldFrame,
    labels: &[LabelMap],
    rig: &CameraRig<f64>,
    candidates_per_pixel: &[Vec<(f64, f64)>],
    params: &EstimatorParams,
) -> Result<DisparityRaster> {
    let (w, h) = frame.dims();
    if candidates_per_pixel.len() != w * h {
        return Err(Error::Validation(
            "one candidate list per pixel is required".into(),
        ));
    }
    let fields: Vec<DescriptorField> = frame
        .images
        .iter()
        .map(|img| sobel_descriptor_field(img, DescriptorKind::Likelihood))
        .collect::<Result<_>>()?;
    let warper = RayWarper::new(rig);

    // variances[pixel][candidate]: None when too few static rays.
    let mut variances: Vec<Vec<Option<f64>>> = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut row = Vec::new();
            for &(d, _) in &candidates_per_pixel[y * w + x] {
                let rays = static_rays(&fields, labels, &warper, x, y, d);
                row.push(
                    (rays.len() >= params.min_static_views && !rays.is_empty())
                        .then(|| variance(&rays)),
                );
            }
            variances.push(row);
        }
    }

    let mut all: Vec<f64> = variances.iter().flatten().flatten().copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).expect("finite variance"));
    let cap = if all.is_empty() {
        0.0
    } else {
        let rank = (params.miss_percentile * all.len() as f64).ceil() as usize;
        all[rank.clamp(1, all.len()) - 1]
    };
    let penalty = params.beta * cap;

    let mut out = Raster::filled(w, h, DisparityRaster::INVALID);
    for (i, cands) in candidates_per_pixel.iter().enumerate() {
        if variances[i].iter().all(Option::is_none) {
            continue;
        }
        let mut best: Option<(f64, f64)> = None;
        for (&(d, log_prior), var) in cands.iter().zip(&variances[i]) {
            let e = match var {
                Some(v) => params.beta * v - log_prior,
                None => penalty - log_prior,
            };
            let better = match best {
                None => true,
                Some((be, bd)) => e < be || (e == be && d < bd),
            };
            if better {
                best = Some((e, d));
            }
        }
        if let Some((_, d)) = best {
            out.as_mut_slice()[i] = d as f32;
        }
    }
    Ok(DisparityRaster::from_values(out))
}
