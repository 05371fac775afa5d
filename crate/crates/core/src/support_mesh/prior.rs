//! Per-pixel disparity prior: a sampled Gaussian around the interpolated
//! mesh disparity mixed with a uniform floor, plus the exact disparities of
//! nearby support points as extra candidates.

use super::SupportMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorParams {
    /// Gaussian width, disparity units.
    pub sigma: f64,
    /// Weight of the uniform component.
    pub gamma: f64,
    /// Candidate grid step.
    pub step: f64,
    pub d_max: f64,
    /// Support points within this many pixels inject their disparity.
    pub neighborhood_radius: f64,
}

impl Default for PriorParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            gamma: 0.05,
            step: 0.25,
            d_max: 32.0,
            neighborhood_radius: 20.0,
        }
    }
}

impl PriorParams {
    /// Number of values in `{0, step, ..., d_max}`.
    pub fn grid_len(&self) -> usize {
        (self.d_max / self.step + 1e-9).floor() as usize + 1
    }

    #[inline]
    pub fn grid_value(&self, i: usize) -> f64 {
        i as f64 * self.step
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorDistribution {
    /// Interpolated disparity at the query pixel; `None` for the uniform fallback.
    pub mu: Option<f64>,
    /// Ascending, unique candidate disparities.
    pub candidates: Vec<f64>,
    /// Normalized probability of each candidate.
    pub probabilities: Vec<f64>,
}

const SAME_CANDIDATE: f64 = 1e-9;

/// Prior at integer pixel `(x, y)`.
pub fn prior_distribution_at(
    mesh: &SupportMesh,
    pixel: (usize, usize),
    params: &PriorParams,
) -> PriorDistribution {
    let (x, y) = pixel;
    let mu = mesh.interpolate_in(mesh.triangle_at(x, y), x as f64, y as f64);
    let mut injected = Vec::new();
    let mut scratch = Vec::new();
    mesh.neighbors_within(x as f64, y as f64, params.neighborhood_radius, &mut scratch);
    injected.extend(scratch.iter().map(|&i| mesh.points[i as usize].d));
    prior_from_parts(mu, &mut injected, params)
}

/// Builds the candidate set and probabilities from an interpolated mean and
/// the disparities of neighboring support points.
pub fn prior_from_parts(
    mu: f64,
    injected: &mut Vec<f64>,
    params: &PriorParams,
) -> PriorDistribution {
    let n_grid = params.grid_len();
    let half_width = 3.0 * params.sigma;
    let lo = ((mu - half_width) / params.step - SAME_CANDIDATE)
        .ceil()
        .max(0.0) as usize;
    let hi_f = ((mu + half_width) / params.step + SAME_CANDIDATE).floor();
    let mut candidates: Vec<f64> = Vec::new();
    if hi_f >= 0.0 {
        let hi = (hi_f as usize).min(n_grid - 1);
        candidates.extend((lo..=hi).map(|i| params.grid_value(i)));
    }
    injected.retain(|d| d.is_finite() && *d >= 0.0 && *d <= params.d_max + SAME_CANDIDATE);
    injected.sort_by(f64::total_cmp);
    injected.dedup_by(|a, b| (*a - *b).abs() <= SAME_CANDIDATE);
    for &d in injected.iter() {
        let pos = candidates.partition_point(|&c| c < d - SAME_CANDIDATE);
        let dup = candidates
            .get(pos)
            .is_some_and(|&c| (c - d).abs() <= SAME_CANDIDATE);
        if !dup {
            candidates.insert(pos, d);
        }
    }

    let floor = params.gamma / n_grid as f64;
    let two_var = 2.0 * params.sigma * params.sigma;
    let mut weights: Vec<f64> = candidates
        .iter()
        .map(|&c| {
            let off = c - mu;
            if off.abs() <= half_width + SAME_CANDIDATE {
                floor + (1.0 - params.gamma) * (-(off * off) / two_var).exp()
            } else {
                floor
            }
        })
        .collect();
    // Zero-weight candidates (gamma = 0 outside the window) are not emitted.
    let mut keep = weights.iter().map(|&w| w > 0.0);
    candidates.retain(|_| keep.next().unwrap());
    weights.retain(|&w| w > 0.0);
    let total: f64 = weights.iter().sum();
    let probabilities = weights.into_iter().map(|w| w / total).collect();
    PriorDistribution {
        mu: Some(mu),
        candidates,
        probabilities,
    }
}

/// Uniform prior over the full candidate grid, used when no mesh exists.
pub fn uniform_prior(params: &PriorParams) -> PriorDistribution {
    let n = params.grid_len();
    PriorDistribution {
        mu: None,
        candidates: (0..n).map(|i| params.grid_value(i)).collect(),
        probabilities: vec![1.0 / n as f64; n],
    }
}
