//! Per-pixel MAP disparity over the prior's candidate set, followed by gap
//! interpolation and a validity-preserving median filter.
//!
//! The energy of a candidate `d` at reference pixel `x` is
//! `beta * Var(static rays) - log prior(d)`. Candidates seen by fewer than
//! `min_static_views` static rays get a fixed likelihood penalty
//! `beta * v_cap`, where `v_cap` is a percentile of all sufficiently observed
//! variances in the frame.

use rayon::prelude::*;

use crate::descriptor::DescriptorField;
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, RayWarper};
use crate::io::DisparityRaster;
use crate::raster::nearest_pixel;
use crate::segmentation::LabelMap;
use crate::support_mesh::{
    prior_distribution_at, uniform_prior, PriorDistribution, PriorParams, SupportMesh,
};

/// Default likelihood sharpness for descriptors of `[0, 1]` intensities.
pub const DEFAULT_BETA: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorParams {
    pub beta: f64,
    pub d_max: f64,
    /// Candidate grid step; `1 / alpha_max` for the rig by default.
    pub step: f64,
    pub min_static_views: usize,
    /// Percentile (0..1] of observed variances used as the missing-ray penalty.
    pub miss_percentile: f64,
    pub median_window: usize,
    pub sigma: f64,
    pub gamma: f64,
    pub neighborhood_radius: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            d_max: 32.0,
            step: 0.25,
            min_static_views: 2,
            miss_percentile: 0.95,
            median_window: 5,
            sigma: 1.0,
            gamma: 0.05,
            neighborhood_radius: 20.0,
        }
    }
}

impl EstimatorParams {
    /// Defaults with the candidate step matched to the rig.
    pub fn for_rig(rig: &CameraRig<f64>) -> Self {
        Self {
            step: rig.candidate_step(),
            ..Default::default()
        }
    }

    pub fn prior(&self) -> PriorParams {
        PriorParams {
            sigma: self.sigma,
            gamma: self.gamma,
            step: self.step,
            d_max: self.d_max,
            neighborhood_radius: self.neighborhood_radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return bad(format!("d_max must be positive, got {}", self.d_max));
        }
        if self.min_static_views < 1 {
            return bad("min_static_views must be at least 1".into());
        }
        if !(self.miss_percentile > 0.0 && self.miss_percentile <= 1.0) {
            return bad(format!(
                "miss_percentile must lie in (0, 1], got {}",
                self.miss_percentile
            ));
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.median_window < 3 || self.median_window % 2 == 0 {
            return bad(format!(
                "median window must be odd and >= 3, got {}",
                self.median_window
            ));
        }
        Ok(())
    }
}

/// `(disparity, log prior)` pairs in ascending disparity order.
pub type CandidateSet = Vec<(f64, f64)>;

pub fn candidate_set(prior: &PriorDistribution) -> CandidateSet {
    let mut out: CandidateSet = prior
        .candidates
        .iter()
        .zip(&prior.probabilities)
        .map(|(&d, &p)| (d, p.ln()))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.dedup_by(|a, b| a.0 == b.0);
    out
}

/// Where per-pixel priors come from.
#[derive(Debug, Clone, Copy)]
pub enum PriorSource<'a> {
    Mesh(&'a SupportMesh),
    /// Uniform over the full grid; the fallback when no mesh can be built.
    Uniform,
}

impl PriorSource<'_> {
    pub fn candidates_at(&self, x: usize, y: usize, params: &PriorParams) -> CandidateSet {
        match self {
            PriorSource::Mesh(mesh) => candidate_set(&prior_distribution_at(mesh, (x, y), params)),
            PriorSource::Uniform => candidate_set(&uniform_prior(params)),
        }
    }
}

/// Inputs shared by every per-pixel evaluation.
#[derive(Clone, Copy)]
pub struct RayInputs<'a> {
    pub descriptors: &'a [DescriptorField],
    pub labels: &'a [LabelMap],
    pub warper: &'a RayWarper<f64>,
}

/// Variance of the descriptors of the static rays through `(x, y)` at
/// disparity `d`, and the number of such rays.
///
/// Rays are sampled at the nearest pixel; rays leaving the image, hitting a
/// border descriptor or a dynamic pixel are dropped. The variance is the mean
/// squared L2 distance to the mean descriptor.
pub fn static_ray_variance(rays: &RayInputs<'_>, x: usize, y: usize, d: f64) -> (f64, usize) {
    let k_views = rays.descriptors.len();
    let dim = rays.descriptors[0].dim();
    let (w, h) = (rays.descriptors[0].width(), rays.descriptors[0].height());
    let mut sum = [0.0f64; 16];
    let mut picked: [Option<&[f32]>; 32] = [None; 32];
    let mut n = 0usize;
    for k in 0..k_views.min(32) {
        let (u, v) = rays.warper.warp(x as f64, y as f64, d, k);
        let Some((px, py)) = nearest_pixel(u, v, w, h) else {
            continue;
        };
        if !rays.labels[k].is_static(px, py) {
            continue;
        }
        let Some(f) = rays.descriptors[k].get(px, py) else {
            continue;
        };
        for (s, &v) in sum.iter_mut().zip(f) {
            *s += v as f64;
        }
        picked[k] = Some(f);
        n += 1;
    }
    if n == 0 {
        return (0.0, 0);
    }
    let nf = n as f64;
    let mut mean = [0.0f64; 16];
    for j in 0..dim {
        mean[j] = sum[j] / nf;
    }
    let mut ss = 0.0f64;
    for f in picked.iter().flatten() {
        for (j, &v) in f.iter().enumerate() {
            let e = v as f64 - mean[j];
            ss += e * e;
        }
    }
    (ss / nf, n)
}

/// Nearest-rank percentile (`ceil(p * n)`-th smallest); `0` for no samples.
pub fn nearest_rank_percentile(values: &mut [f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let rank = ((p * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, f64::total_cmp);
    *v
}

/// Detailed MAP result.
#[derive(Debug, Clone)]
pub struct MapOutput {
    pub disparity: DisparityRaster,
    /// Likelihood penalty applied to under-observed candidates.
    pub miss_penalty: f64,
}

pub fn map_disparity(
    rays: &RayInputs<'_>,
    prior: PriorSource<'_>,
    params: &EstimatorParams,
) -> Result<MapOutput> {
    let prior_params = params.prior();
    map_disparity_with(
        rays,
        &|x, y| prior.candidates_at(x, y, &prior_params),
        params,
    )
}

/// MAP search with caller-provided candidate sets.
pub fn map_disparity_with(
    rays: &RayInputs<'_>,
    candidates: &(dyn Fn(usize, usize) -> CandidateSet + Sync),
    params: &EstimatorParams,
) -> Result<MapOutput> {
    params.validate()?;
    let k_views = rays.descriptors.len();
    if k_views == 0 || rays.labels.len() != k_views || rays.warper.num_views() != k_views {
        return Err(Error::Validation(
            "descriptor, label and rig view counts differ".into(),
        ));
    }
    if k_views > 32 || rays.descriptors[0].dim() > 16 {
        return Err(Error::Capability(
            "at most 32 views and 16-entry descriptors are supported".into(),
        ));
    }
    let (w, h) = (rays.descriptors[0].width(), rays.descriptors[0].height());
    let min_views = params.min_static_views;

    // Pass 1: evaluate every candidate once; NaN marks under-observed ones.
    type Row = Vec<(CandidateSet, Vec<f64>)>;
    let rows: Vec<Row> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let cands = candidates(x, y);
                    let vars = cands
                        .iter()
                        .map(|&(d, _)| {
                            let (var, n) = static_ray_variance(rays, x, y, d);
                            if n >= min_views {
                                var
                            } else {
                                f64::NAN
                            }
                        })
                        .collect();
                    (cands, vars)
                })
                .collect()
        })
        .collect();

    let mut observed: Vec<f64> = rows
        .iter()
        .flatten()
        .flat_map(|(_, vars)| vars.iter().copied().filter(|v| !v.is_nan()))
        .collect();
    let v_cap = nearest_rank_percentile(&mut observed, params.miss_percentile);
    drop(observed);
    let miss_penalty = params.beta * v_cap;

    // Pass 2: argmin, ties to the smallest disparity.
    let values: Vec<f32> = rows
        .into_par_iter()
        .flat_map_iter(|row| {
            row.into_iter().map(|(cands, vars)| {
                let mut best = f64::INFINITY;
                let mut best_d = None;
                let mut any_observed = false;
                for (&(d, log_prior), &var) in cands.iter().zip(&vars) {
                    let likelihood = if var.is_nan() {
                        miss_penalty
                    } else {
                        any_observed = true;
                        params.beta * var
                    };
                    let e = likelihood - log_prior;
                    if e < best || (e == best && best_d.is_some_and(|b| d < b)) {
                        best = e;
                        best_d = Some(d);
                    }
                }
                match best_d {
                    Some(d) if any_observed => d as f32,
                    _ => DisparityRaster::INVALID,
                }
            })
        })
        .collect();
    let values = crate::raster::Raster::from_vec(w, h, values)?;
    Ok(MapOutput {
        disparity: DisparityRaster { values },
        miss_penalty,
    })
}

/// Fills invalid pixels from the nearest valid pixels on their row, taking
/// the smaller (farther) of the two sides. Rows without any valid pixel are
/// then filled the same way along their column.
pub fn fill_gaps(raster: &DisparityRaster) -> DisparityRaster {
    let (w, h) = raster.dims();
    let mut out = raster.clone();
    let mut empty_rows = vec![false; h];
    for y in 0..h {
        let row: Vec<Option<f32>> = (0..w).map(|x| raster.get(x, y)).collect();
        if row.iter().all(Option::is_none) {
            empty_rows[y] = true;
            continue;
        }
        for (x, filled) in fill_line(&row).into_iter().enumerate() {
            out.set(x, y, filled);
        }
    }
    if empty_rows.iter().any(|&e| e) && empty_rows.iter().any(|&e| !e) {
        let snapshot = out.clone();
        for x in 0..w {
            let col: Vec<Option<f32>> = (0..h).map(|y| snapshot.get(x, y)).collect();
            let filled = fill_line(&col);
            for y in (0..h).filter(|&y| empty_rows[y]) {
                out.set(x, y, filled[y]);
            }
        }
    }
    out
}

fn fill_line(line: &[Option<f32>]) -> Vec<Option<f32>> {
    let n = line.len();
    let mut left = vec![None; n];
    let mut last = None;
    for i in 0..n {
        if line[i].is_some() {
            last = line[i];
        }
        left[i] = last;
    }
    let mut out = vec![None; n];
    let mut next = None;
    for i in (0..n).rev() {
        if line[i].is_some() {
            next = line[i];
        }
        out[i] = match (line[i], left[i], next) {
            (Some(v), _, _) => Some(v),
            (None, Some(a), Some(b)) => Some(a.min(b)),
            (None, a, b) => a.or(b),
        };
    }
    out
}

/// Median over the valid pixels of a `window x window` neighborhood, computed
/// only at valid pixels. Even counts take the lower median.
pub fn median_filter_disparity(raster: &DisparityRaster, window: usize) -> Result<DisparityRaster> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Parameter(format!(
            "median window must be odd and >= 3, got {window}"
        )));
    }
    let (w, h) = raster.dims();
    let r = (window / 2) as i64;
    let values: Vec<f32> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut buf = Vec::with_capacity(window * window);
            (0..w)
                .map(|x| {
                    if !raster.is_valid(x, y) {
                        return DisparityRaster::INVALID;
                    }
                    buf.clear();
                    for yy in (y as i64 - r).max(0)..=(y as i64 + r).min(h as i64 - 1) {
                        for xx in (x as i64 - r).max(0)..=(x as i64 + r).min(w as i64 - 1) {
                            if let Some(v) = raster.get(xx as usize, yy as usize) {
                                buf.push(v);
                            }
                        }
                    }
                    let mid = (buf.len() - 1) / 2;
                    let (_, m, _) = buf.select_nth_unstable_by(mid, f32::total_cmp);
                    *m
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(DisparityRaster {
        values: crate::raster::Raster::from_vec(w, h, values)?,
    })
}
