//! Piecewise-planar disparity prior: sparse support points matched on a
//! grid (plus points recovered from behind dynamic objects through the other
//! views), outlier filtering, and a Delaunay mesh over the survivors.

pub mod delaunay;
pub mod filter;
pub mod matching;
pub mod prior;

pub use filter::{filter_support_points, FilterParams};
pub use matching::{match_support_grid, match_view_pair, recover_occluded_support, MatchParams};
pub use prior::{prior_distribution_at, uniform_prior, PriorDistribution, PriorParams};

use crate::error::{Error, Result};
use delaunay::{triangulate_in_rect, Triangulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    /// Matched directly in the reference view.
    Reference,
    /// Matched in view `k` and reprojected onto a dynamic reference pixel.
    Recovered(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportPoint {
    pub u: usize,
    pub v: usize,
    /// Disparity in unit-baseline pixels.
    pub d: f64,
    pub origin: Origin,
}

impl SupportPoint {
    pub fn new(u: usize, v: usize, d: f64, origin: Origin) -> Self {
        Self { u, v, d, origin }
    }

    pub(crate) fn dist2(&self, other: &SupportPoint) -> f64 {
        let du = self.u as f64 - other.u as f64;
        let dv = self.v as f64 - other.v as f64;
        du * du + dv * dv
    }
}

/// Bucket grid over support points for radius queries.
#[derive(Debug, Clone)]
pub(crate) struct PointGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
}

impl PointGrid {
    pub(crate) fn new(points: &[SupportPoint], cell: f64) -> Self {
        let cell = cell.max(1.0);
        let max_u = points.iter().map(|p| p.u).max().unwrap_or(0);
        let max_v = points.iter().map(|p| p.v).max().unwrap_or(0);
        let cols = (max_u as f64 / cell) as usize + 1;
        let rows = (max_v as f64 / cell) as usize + 1;
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, p) in points.iter().enumerate() {
            let c = (p.u as f64 / cell) as usize;
            let r = (p.v as f64 / cell) as usize;
            buckets[r * cols + c].push(i as u32);
        }
        Self {
            cell,
            cols,
            rows,
            buckets,
        }
    }

    /// Indices of points within Euclidean distance `radius` of `(u, v)`, ascending.
    pub(crate) fn within(
        &self,
        points: &[SupportPoint],
        u: f64,
        v: f64,
        radius: f64,
        out: &mut Vec<u32>,
    ) {
        out.clear();
        let r2 = radius * radius;
        let c0 = ((u - radius) / self.cell).floor().max(0.0) as usize;
        let r0 = ((v - radius) / self.cell).floor().max(0.0) as usize;
        let c1 = ((u + radius) / self.cell).floor();
        let r1 = ((v + radius) / self.cell).floor();
        if c1 < 0.0 || r1 < 0.0 {
            return;
        }
        let c1 = (c1 as usize).min(self.cols - 1);
        let r1 = (r1 as usize).min(self.rows - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                for &i in &self.buckets[r * self.cols + c] {
                    let p = &points[i as usize];
                    let du = p.u as f64 - u;
                    let dv = p.v as f64 - v;
                    if du * du + dv * dv <= r2 {
                        out.push(i);
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

/// Support points and their triangulation over the full image rectangle.
#[derive(Debug, Clone)]
pub struct SupportMesh {
    pub points: Vec<SupportPoint>,
    pub triangulation: Triangulation,
    /// Disparity at each triangulation vertex (corners included).
    pub vertex_disparity: Vec<f64>,
    width: usize,
    height: usize,
    /// Triangle index per pixel.
    pixel_triangle: Vec<u32>,
    grid: PointGrid,
}

/// Radius of the bucket cells used for neighborhood queries.
const GRID_CELL: f64 = 16.0;

/// Triangulates support points over a `width x height` image. The image
/// corners are added as extra vertices carrying the disparity of their
/// nearest support point, so every pixel lies in some triangle.
pub fn build_triangulation(
    points: &[SupportPoint],
    width: usize,
    height: usize,
) -> Result<SupportMesh> {
    if points.len() < 3 {
        return Err(Error::Mesh(format!(
            "{} support points are too few to triangulate (need 3)",
            points.len()
        )));
    }
    if width < 2 || height < 2 {
        return Err(Error::Mesh(format!(
            "image {width}x{height} is too small to triangulate"
        )));
    }
    let coords: Vec<[f64; 2]> = points.iter().map(|p| [p.u as f64, p.v as f64]).collect();
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    let triangulation = triangulate_in_rect(&coords, max_x, max_y)?;
    let vertex_disparity = triangulation
        .vertices
        .iter()
        .zip(&triangulation.source)
        .map(|(v, src)| match src {
            Some(i) => points[*i].d,
            None => nearest_disparity(points, *v),
        })
        .collect();
    let pixel_triangle = triangulation.rasterize(width, height);
    debug_assert!(pixel_triangle.iter().all(|&t| t != u32::MAX));
    Ok(SupportMesh {
        grid: PointGrid::new(points, GRID_CELL),
        points: points.to_vec(),
        triangulation,
        vertex_disparity,
        width,
        height,
        pixel_triangle,
    })
}

fn nearest_disparity(points: &[SupportPoint], q: [f64; 2]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for p in points {
        let du = p.u as f64 - q[0];
        let dv = p.v as f64 - q[1];
        let d2 = du * du + dv * dv;
        if d2 < best.0 {
            best = (d2, p.d);
        }
    }
    best.1
}

impl SupportMesh {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Triangle index containing integer pixel `(x, y)`.
    pub fn triangle_at(&self, x: usize, y: usize) -> usize {
        self.pixel_triangle[y * self.width + x] as usize
    }

    /// Barycentric interpolation of vertex disparities at a continuous position.
    pub fn interpolate(&self, u: f64, v: f64) -> f64 {
        let t = if u.fract() == 0.0
            && v.fract() == 0.0
            && u >= 0.0
            && v >= 0.0
            && (u as usize) < self.width
            && (v as usize) < self.height
        {
            Some(self.triangle_at(u as usize, v as usize))
        } else {
            self.triangulation.find([u, v])
        };
        let t = t.expect("corner anchoring covers the image rectangle");
        self.interpolate_in(t, u, v)
    }

    pub fn interpolate_in(&self, t: usize, u: f64, v: f64) -> f64 {
        let w = self.triangulation.barycentric(t, [u, v]);
        let [a, b, c] = self.triangulation.triangles[t];
        w[0] * self.vertex_disparity[a]
            + w[1] * self.vertex_disparity[b]
            + w[2] * self.vertex_disparity[c]
    }

    /// Coarse disparity map: the interpolated prior mean at every pixel.
    pub fn coarse_map(&self) -> crate::raster::Raster<f32> {
        crate::raster::Raster::from_fn(self.width, self.height, |x, y| {
            self.interpolate_in(self.triangle_at(x, y), x as f64, y as f64) as f32
        })
    }

    pub(crate) fn neighbors_within(&self, u: f64, v: f64, radius: f64, out: &mut Vec<u32>) {
        self.grid.within(&self.points, u, v, radius, out);
    }
}
