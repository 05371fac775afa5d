//! Duplicate suppression and disparity-consistency filtering of support points.

use super::{Origin, PointGrid, SupportPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// Points closer than this (pixels) are duplicates.
    pub duplicate_radius: f64,
    /// Neighborhood radius (pixels) for the consistency check.
    pub consistency_window: f64,
    /// Maximum allowed deviation from the neighborhood median disparity.
    pub max_deviation: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            duplicate_radius: 3.0,
            consistency_window: 20.0,
            max_deviation: 5.0,
        }
    }
}

/// Median of a non-empty slice; mean of the two middle values for even lengths.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Removes duplicates, then points inconsistent with their neighborhood.
///
/// Among points within `duplicate_radius` of each other the survivor is the
/// one from the reference view, then the one agreeing best with its
/// neighbors (lowest mean squared disparity difference within the
/// consistency window), then the first in row-major order. A survivor is
/// then dropped when it deviates from the median disparity of the other
/// survivors within the window by more than `max_deviation`; isolated
/// points are kept.
pub fn filter_support_points(points: &[SupportPoint], params: &FilterParams) -> Vec<SupportPoint> {
    if points.is_empty() {
        return Vec::new();
    }
    let grid = PointGrid::new(
        points,
        params.consistency_window.max(params.duplicate_radius),
    );
    let mut scratch = Vec::new();

    let spread: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            grid.within(
                points,
                p.u as f64,
                p.v as f64,
                params.consistency_window,
                &mut scratch,
            );
            let (sum, n) = scratch
                .iter()
                .filter(|&&j| j as usize != i)
                .fold((0.0, 0usize), |(s, n), &j| {
                    (s + (points[j as usize].d - p.d).powi(2), n + 1)
                });
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        let rank = |p: &SupportPoint| u8::from(p.origin != Origin::Reference);
        rank(pa)
            .cmp(&rank(pb))
            .then(spread[a].total_cmp(&spread[b]))
            .then((pa.v, pa.u).cmp(&(pb.v, pb.u)))
            .then(a.cmp(&b))
    });
    let r2 = params.duplicate_radius * params.duplicate_radius;
    let mut kept_flags = vec![false; points.len()];
    for &i in &order {
        grid.within(
            points,
            points[i].u as f64,
            points[i].v as f64,
            params.duplicate_radius,
            &mut scratch,
        );
        let clash = scratch
            .iter()
            .any(|&j| kept_flags[j as usize] && points[j as usize].dist2(&points[i]) <= r2);
        if !clash {
            kept_flags[i] = true;
        }
    }
    let survivors: Vec<SupportPoint> = points
        .iter()
        .zip(&kept_flags)
        .filter_map(|(p, &k)| k.then_some(*p))
        .collect();

    let grid = PointGrid::new(&survivors, params.consistency_window);
    let mut neighbor_d = Vec::new();
    survivors
        .iter()
        .enumerate()
        .filter(|&(i, p)| {
            grid.within(
                &survivors,
                p.u as f64,
                p.v as f64,
                params.consistency_window,
                &mut scratch,
            );
            neighbor_d.clear();
            neighbor_d.extend(
                scratch
                    .iter()
                    .filter(|&&j| j as usize != i)
                    .map(|&j| survivors[j as usize].d),
            );
            neighbor_d.is_empty() || (p.d - median(&mut neighbor_d)).abs() <= params.max_deviation
        })
        .map(|(_, p)| *p)
        .collect()
}
