//! Grid matching of MATCH descriptors along horizontal epipolar lines.

use rayon::prelude::*;

use super::{Origin, SupportPoint};
use crate::descriptor::{l1_distance, DescriptorField};
use crate::geometry::CameraRig;
use crate::segmentation::LabelMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Spacing of the sampling grid in pixels.
    pub grid_step: usize,
    /// Largest disparity searched, unit-baseline pixels.
    pub d_max: f64,
    /// Accept a match only if `best < ratio * second_best`.
    pub ratio: f32,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            grid_step: 5,
            d_max: 32.0,
            ratio: 0.9,
        }
    }
}

/// A grid pixel of the source view and its integer pixel shift in the destination view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairMatch {
    pub u: usize,
    pub v: usize,
    pub shift: usize,
}

/// Best shift along the line; `(best_shift, best_cost, second_cost)`.
fn scan(
    src: &[f32],
    dst: &DescriptorField,
    u: usize,
    v: usize,
    direction: i64,
    max_shift: usize,
) -> Option<(usize, f32, f32)> {
    let mut best = (usize::MAX, f32::INFINITY);
    let mut second = f32::INFINITY;
    for s in 0..=max_shift {
        let ud = u as i64 + direction * s as i64;
        if ud < 0 || ud >= dst.width() as i64 {
            continue;
        }
        let Some(desc) = dst.get(ud as usize, v) else {
            continue;
        };
        let cost = l1_distance(src, desc);
        if cost < best.1 {
            second = best.1;
            best = (s, cost);
        } else if cost < second {
            second = cost;
        }
    }
    (best.0 != usize::MAX).then_some((best.0, best.1, second))
}

/// Matches grid pixels of `src` (restricted to static pixels when labels are
/// given) against `dst`, where a shift of `s` moves a point by `direction * s`
/// pixels along `u`. Matches must pass the ratio test and a reverse search
/// from `dst` must land within one pixel of the forward shift.
pub fn match_view_pair(
    src: &DescriptorField,
    dst: &DescriptorField,
    src_labels: Option<&LabelMap>,
    direction: i64,
    max_shift: usize,
    grid_step: usize,
    ratio: f32,
) -> Vec<PairMatch> {
    let (w, h) = (src.width(), src.height());
    let step = grid_step.max(1);
    let rows: Vec<usize> = (0..h).step_by(step).collect();
    rows.par_iter()
        .map(|&v| {
            let mut found = Vec::new();
            for u in (0..w).step_by(step) {
                if src_labels.is_some_and(|l| !l.is_static(u, v)) {
                    continue;
                }
                let Some(desc) = src.get(u, v) else { continue };
                let Some((s, best, second)) = scan(desc, dst, u, v, direction, max_shift) else {
                    continue;
                };
                if !(best < ratio * second) {
                    continue;
                }
                let ud = (u as i64 + direction * s as i64) as usize;
                let back = dst.get(ud, v).expect("matched descriptor is valid");
                let Some((s_back, _, _)) = scan(back, src, ud, v, -direction, max_shift) else {
                    continue;
                };
                if s_back.abs_diff(s) <= 1 {
                    found.push(PairMatch { u, v, shift: s });
                }
            }
            found
        })
        .flatten()
        .collect()
}

/// Per-view shift geometry for rectified arrays: `(direction, baseline gap)`
/// between views `src` and `dst`.
fn pair_geometry(rig: &CameraRig<f64>, src: usize, dst: usize) -> (i64, f64) {
    let sign = rig.shift_sign();
    let gap = rig.baseline_ratio(dst) - rig.baseline_ratio(src);
    let direction = if sign * gap < 0.0 { -1 } else { 1 };
    (direction, gap.abs())
}

fn max_shift(gap: f64, d_max: f64) -> usize {
    (gap * d_max + 1e-9).floor() as usize
}

/// Static support points of the reference view, matched against its neighbor.
pub fn match_support_grid(
    ref_descr: &DescriptorField,
    neighbor_descr: &DescriptorField,
    ref_labels: &LabelMap,
    rig: &CameraRig<f64>,
    params: &MatchParams,
) -> Vec<SupportPoint> {
    let (direction, gap) = pair_geometry(rig, 0, 1);
    match_view_pair(
        ref_descr,
        neighbor_descr,
        Some(ref_labels),
        direction,
        max_shift(gap, params.d_max),
        params.grid_step,
        params.ratio,
    )
    .into_iter()
    .map(|m| SupportPoint::new(m.u, m.v, m.shift as f64 / gap, Origin::Reference))
    .collect()
}

/// Neighbor used when matching view `k`: the next camera, or the previous
/// one for the last camera.
pub fn matching_neighbor(k: usize, num_views: usize) -> usize {
    if k + 1 < num_views {
        k + 1
    } else {
        k - 1
    }
}

/// Support points hidden behind dynamic objects in the reference view but
/// matched between other views. Each match is moved back into the reference
/// view at its disparity and kept only if it lands on a dynamic reference pixel.
pub fn recover_occluded_support(
    labels: &[LabelMap],
    descr: &[DescriptorField],
    rig: &CameraRig<f64>,
    params: &MatchParams,
) -> Vec<SupportPoint> {
    let k_views = rig.len();
    let reference = &labels[0];
    if reference.dynamic_count() == 0 {
        return Vec::new();
    }
    let (w, h) = reference.dims();
    let sign = rig.shift_sign();
    let mut out = Vec::new();
    for k in 1..k_views {
        let n = matching_neighbor(k, k_views);
        let (direction, gap) = pair_geometry(rig, k, n);
        let matches = match_view_pair(
            &descr[k],
            &descr[n],
            Some(&labels[k]),
            direction,
            max_shift(gap, params.d_max),
            params.grid_step,
            params.ratio,
        );
        let alpha_k = rig.baseline_ratio(k);
        for m in matches {
            let d = m.shift as f64 / gap;
            // View k sees the point at u_ref + sign * alpha_k * d.
            let u_ref = (m.u as f64 - sign * alpha_k * d).round();
            if u_ref < 0.0 || u_ref >= w as f64 || m.v >= h {
                continue;
            }
            let u_ref = u_ref as usize;
            if !reference.is_static(u_ref, m.v) {
                out.push(SupportPoint::new(u_ref, m.v, d, Origin::Recovered(k)));
            }
        }
    }
    out
}
