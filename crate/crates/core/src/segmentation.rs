//! Binary static/dynamic labels per view: thresholding of the dynamic
//! probability masks and the per-pixel label update given a disparity map.

use rayon::prelude::*;

use crate::descriptor::DescriptorField;
use crate::error::{Error, Result};
use crate::geometry::RayWarper;
use crate::io::{DisparityRaster, LightFieldFrame};
use crate::raster::{nearest_pixel, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Static,
    Dynamic,
}

impl Label {
    #[inline]
    pub fn is_static(self) -> bool {
        self == Label::Static
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Threshold,
    EStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub labels: Raster<Label>,
    pub source: LabelSource,
}

impl LabelMap {
    pub fn all(width: usize, height: usize, label: Label) -> Self {
        Self {
            labels: Raster::filled(width, height, label),
            source: LabelSource::Threshold,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Label {
        *self.labels.get(x, y)
    }

    #[inline]
    pub fn is_static(&self, x: usize, y: usize) -> bool {
        self.labels.get(x, y).is_static()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    pub fn dynamic_count(&self) -> usize {
        self.labels
            .as_slice()
            .iter()
            .filter(|l| !l.is_static())
            .count()
    }

    /// 0 for static, 255 for dynamic.
    pub fn to_u8(&self) -> Raster<u8> {
        self.labels.map(|l| if l.is_static() { 0 } else { 255 })
    }
}

fn check_tau(tau: f32) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "segmentation threshold must lie in (0, 1), got {tau}"
        )))
    }
}

/// A pixel is dynamic iff `P(dynamic) >= tau`.
pub fn threshold_labels(prob_mask: &Raster<f32>, tau: f32) -> Result<LabelMap> {
    check_tau(tau)?;
    Ok(LabelMap {
        labels: prob_mask.map(|&p| {
            if p >= tau {
                Label::Dynamic
            } else {
                Label::Static
            }
        }),
        source: LabelSource::Threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EStepParams {
    /// Likelihood sharpness, shared with the disparity search.
    pub beta: f64,
    pub tau: f32,
    /// Probabilities are clamped to `[floor, 1 - floor]` before taking logs.
    /// Zero keeps them as given, so a certain label can never flip.
    pub probability_floor: f64,
}

impl Default for EStepParams {
    fn default() -> Self {
        Self {
            beta: crate::disparity::DEFAULT_BETA,
            tau: 0.5,
            probability_floor: 0.0,
        }
    }
}

/// Largest number of participating views the exhaustive update accepts.
pub const MAX_ESTEP_VIEWS: usize = 16;

/// Energy of one labeling: `beta * Var(static descriptors) - sum log p(label | P(dynamic))`.
/// `static_mask` bit `i` set means view `i` is static; the mask must be non-empty.
pub fn assignment_energy(
    descriptors: &[&[f32]],
    p_dynamic: &[f64],
    static_mask: u32,
    beta: f64,
    floor: f64,
) -> f64 {
    let dim = descriptors[0].len();
    assert!(dim <= 16, "descriptor dimension {dim} exceeds 16");
    let mut n = 0usize;
    let mut mean = [0.0f64; 16];
    for (i, d) in descriptors.iter().enumerate() {
        if static_mask & (1 << i) != 0 {
            n += 1;
            for (m, &v) in mean.iter_mut().zip(d.iter()) {
                *m += v as f64;
            }
        }
    }
    let inv = 1.0 / n as f64;
    for m in mean.iter_mut().take(dim) {
        *m *= inv;
    }
    let mut ss = 0.0;
    for (i, d) in descriptors.iter().enumerate() {
        if static_mask & (1 << i) != 0 {
            for (m, &v) in mean.iter().zip(d.iter()) {
                let e = v as f64 - m;
                ss += e * e;
            }
        }
    }
    let variance = ss * inv;
    let mut neg_log_prior = 0.0;
    for (i, &p) in p_dynamic.iter().enumerate() {
        let p = p.clamp(floor, 1.0 - floor);
        let label_p = if static_mask & (1 << i) != 0 {
            1.0 - p
        } else {
            p
        };
        neg_log_prior -= label_p.ln();
    }
    beta * variance + neg_log_prior
}

/// Most likely labeling of one ray bundle, as a bitmask of static views.
///
/// Every labeling with at least one static view is enumerated. Ties keep the
/// thresholded labeling when it is among the minimizers, otherwise the
/// numerically smallest mask. Energies may be infinite when probabilities are
/// exactly 0 or 1.
pub fn best_static_assignment(
    descriptors: &[&[f32]],
    p_dynamic: &[f64],
    params: &EStepParams,
) -> Result<u32> {
    let m = descriptors.len();
    if m > MAX_ESTEP_VIEWS {
        return Err(Error::Capability(format!(
            "exhaustive label update supports at most {MAX_ESTEP_VIEWS} views, got {m}"
        )));
    }
    if m == 0 {
        return Err(Error::Parameter("no views to label".into()));
    }
    let threshold_mask = p_dynamic
        .iter()
        .enumerate()
        .filter(|(_, &p)| (p as f32) < params.tau)
        .fold(0u32, |acc, (i, _)| acc | (1 << i));
    let energy = |mask: u32| {
        assignment_energy(
            descriptors,
            p_dynamic,
            mask,
            params.beta,
            params.probability_floor,
        )
    };

    let mut best_mask = 1u32;
    let mut best = energy(1);
    for mask in 2..(1u32 << m) {
        let e = energy(mask);
        if e < best {
            best = e;
            best_mask = mask;
        }
    }
    if threshold_mask != 0 && energy(threshold_mask) == best {
        return Ok(threshold_mask);
    }
    Ok(best_mask)
}

/// Re-estimates per-view labels from the rays of every reference pixel with a
/// valid disparity. Results are written back in row-major reference order,
/// the last writer winning; pixels no ray lands on keep their input label,
/// as do bundles where every labeling contradicts a certain probability.
pub fn refine_labels_estep(
    frame: &LightFieldFrame,
    labels: &[LabelMap],
    disparity_old: &DisparityRaster,
    descriptors: &[DescriptorField],
    warper: &RayWarper<f64>,
    params: &EStepParams,
) -> Result<Vec<LabelMap>> {
    let k_views = frame.num_views();
    if k_views > MAX_ESTEP_VIEWS {
        return Err(Error::Capability(format!(
            "exhaustive label update supports at most {MAX_ESTEP_VIEWS} views, got {k_views}"
        )));
    }
    check_tau(params.tau)?;
    if labels.len() != k_views || descriptors.len() != k_views {
        return Err(Error::Validation(
            "label maps and descriptor fields must cover every view".into(),
        ));
    }
    let (w, h) = frame.dims();

    // (view, x, y, label) writes, grouped per reference row.
    let writes: Vec<Vec<(u8, u32, u32, Label)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row_writes = Vec::new();
            let mut views = Vec::with_capacity(k_views);
            let mut descs: Vec<&[f32]> = Vec::with_capacity(k_views);
            let mut probs = Vec::with_capacity(k_views);
            for x in 0..w {
                let Some(d) = disparity_old.get(x, y) else {
                    continue;
                };
                views.clear();
                descs.clear();
                probs.clear();
                for k in 0..k_views {
                    let (u, v) = warper.warp(x as f64, y as f64, d as f64, k);
                    let Some((px, py)) = nearest_pixel(u, v, w, h) else {
                        continue;
                    };
                    let Some(f) = descriptors[k].get(px, py) else {
                        continue;
                    };
                    views.push((k, px, py));
                    descs.push(f);
                    probs.push(*frame.prob_masks[k].get(px, py) as f64);
                }
                if views.len() < 2 {
                    continue;
                }
                let mask =
                    best_static_assignment(&descs, &probs, params).expect("view count checked");
                if !assignment_energy(&descs, &probs, mask, params.beta, params.probability_floor)
                    .is_finite()
                {
                    continue;
                }
                for (i, &(k, px, py)) in views.iter().enumerate() {
                    let label = if mask & (1 << i) != 0 {
                        Label::Static
                    } else {
                        Label::Dynamic
                    };
                    row_writes.push((k as u8, px as u32, py as u32, label));
                }
            }
            row_writes
        })
        .collect();

    let mut out: Vec<LabelMap> = labels
        .iter()
        .map(|l| LabelMap {
            labels: l.labels.clone(),
            source: LabelSource::EStep,
        })
        .collect();
    for (k, x, y, label) in writes.into_iter().flatten() {
        out[k as usize].labels.set(x as usize, y as usize, label);
    }
    Ok(out)
}
