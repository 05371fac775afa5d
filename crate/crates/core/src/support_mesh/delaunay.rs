//! Incremental Delaunay triangulation of points inside an axis-aligned
//! rectangle whose four corners are always vertices.
//!
//! Orientation and in-circle tests use adaptive exact predicates. When four
//! vertices are co-circular both diagonals are Delaunay; the diagonal that
//! touches the lexicographically smallest `(x, y)` vertex of the quad is kept.

use std::collections::HashMap;

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub vertices: Vec<[f64; 2]>,
    /// Counter-clockwise (positive `orient2d`) vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Input index of each vertex; `None` for the rectangle corners.
    pub source: Vec<Option<usize>>,
}

#[inline]
fn coord(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

#[inline]
pub fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    orient2d(coord(a), coord(b), coord(c))
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counter-clockwise triangle `a, b, c`.
#[inline]
pub fn in_circle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    incircle(coord(a), coord(b), coord(c), coord(d))
}

fn lex_less(a: [f64; 2], b: [f64; 2]) -> bool {
    (a[0], a[1]) < (b[0], b[1])
}

struct Builder {
    pts: Vec<[f64; 2]>,
    tris: Vec<Option<[u32; 3]>>,
    free: Vec<u32>,
    /// Directed edge -> triangle holding it in counter-clockwise order.
    edges: HashMap<(u32, u32), u32>,
    last: u32,
}

impl Builder {
    fn p(&self, i: u32) -> [f64; 2] {
        self.pts[i as usize]
    }

    fn add(&mut self, t: [u32; 3]) -> u32 {
        debug_assert!(orient(self.p(t[0]), self.p(t[1]), self.p(t[2])) > 0.0);
        let id = match self.free.pop() {
            Some(id) => {
                self.tris[id as usize] = Some(t);
                id
            }
            None => {
                self.tris.push(Some(t));
                (self.tris.len() - 1) as u32
            }
        };
        for i in 0..3 {
            self.edges.insert((t[i], t[(i + 1) % 3]), id);
        }
        self.last = id;
        id
    }

    fn remove(&mut self, id: u32) -> [u32; 3] {
        let t = self.tris[id as usize].take().expect("live triangle");
        for i in 0..3 {
            self.edges.remove(&(t[i], t[(i + 1) % 3]));
        }
        self.free.push(id);
        t
    }

    /// Triangle containing `q` (boundary inclusive).
    fn locate(&self, q: [f64; 2]) -> Option<u32> {
        let mut cur = self.last;
        if self.tris[cur as usize].is_none() {
            cur = self.tris.iter().position(Option::is_some)? as u32;
        }
        let budget = 4 * self.tris.len() + 16;
        'walk: for _ in 0..budget {
            let t = self.tris[cur as usize].expect("walk stays on live triangles");
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                if orient(self.p(a), self.p(b), q) < 0.0 {
                    match self.edges.get(&(b, a)) {
                        Some(&next) => {
                            cur = next;
                            continue 'walk;
                        }
                        None => return None,
                    }
                }
            }
            return Some(cur);
        }
        // Walk did not settle; fall back to a scan.
        self.tris.iter().enumerate().find_map(|(id, t)| {
            let t = (*t)?;
            (0..3)
                .all(|i| orient(self.p(t[i]), self.p(t[(i + 1) % 3]), q) >= 0.0)
                .then_some(id as u32)
        })
    }

    /// Restores the Delaunay property on edge `a -> b` of triangle `a, b, p`.
    fn legalize(&mut self, a: u32, b: u32, p: u32) {
        let mut stack = vec![(a, b, p)];
        while let Some((a, b, p)) = stack.pop() {
            let Some(&t) = self.edges.get(&(a, b)) else {
                continue;
            };
            // Stale entry: the edge now belongs to a different triangle.
            if !self.tris[t as usize].unwrap().contains(&p) {
                continue;
            }
            let Some(&other) = self.edges.get(&(b, a)) else {
                continue;
            };
            let o = self.tris[other as usize].unwrap();
            let q = third(o, b, a);
            if in_circle(self.p(a), self.p(b), self.p(p), self.p(q)) > 0.0 {
                self.remove(t);
                self.remove(other);
                self.add([a, q, p]);
                self.add([q, b, p]);
                stack.push((a, q, p));
                stack.push((q, b, p));
            }
        }
    }

    fn insert(&mut self, v: u32) -> Result<bool> {
        let q = self.p(v);
        let t_id = self.locate(q).ok_or_else(|| {
            Error::Mesh(format!(
                "point ({}, {}) lies outside the image rectangle",
                q[0], q[1]
            ))
        })?;
        let t = self.tris[t_id as usize].unwrap();
        let o: Vec<f64> = (0..3)
            .map(|i| orient(self.p(t[i]), self.p(t[(i + 1) % 3]), q))
            .collect();
        if (0..3).any(|i| self.p(t[i]) == q) {
            return Ok(false);
        }
        match o.iter().position(|&x| x == 0.0) {
            None => {
                let [a, b, c] = self.remove(t_id);
                self.add([a, b, v]);
                self.add([b, c, v]);
                self.add([c, a, v]);
                self.legalize(a, b, v);
                self.legalize(b, c, v);
                self.legalize(c, a, v);
            }
            Some(i) => {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                let c = t[(i + 2) % 3];
                let other = self.edges.get(&(b, a)).copied();
                self.remove(t_id);
                self.add([c, a, v]);
                self.add([b, c, v]);
                let mut legal = vec![(c, a, v), (b, c, v)];
                if let Some(other) = other {
                    let d = third(self.tris[other as usize].unwrap(), b, a);
                    self.remove(other);
                    self.add([a, d, v]);
                    self.add([d, b, v]);
                    legal.push((a, d, v));
                    legal.push((d, b, v));
                }
                for (x, y, z) in legal {
                    self.legalize(x, y, z);
                }
            }
        }
        Ok(true)
    }

    /// Picks the canonical diagonal of every co-circular quad.
    fn canonicalize(&mut self) {
        // Each flip replaces an edge by one whose smaller endpoint is strictly
        // smaller in lexicographic order, so the loop terminates.
        loop {
            let mut flipped = false;
            let mut keys: Vec<(u32, u32)> =
                self.edges.keys().copied().filter(|(a, b)| a < b).collect();
            keys.sort_unstable();
            for (a, b) in keys {
                let (Some(&t1), Some(&t2)) = (self.edges.get(&(a, b)), self.edges.get(&(b, a)))
                else {
                    continue;
                };
                let c = third(self.tris[t1 as usize].unwrap(), a, b);
                let d = third(self.tris[t2 as usize].unwrap(), b, a);
                if in_circle(self.p(a), self.p(b), self.p(c), self.p(d)) != 0.0 {
                    continue;
                }
                let smallest = [a, b, c, d]
                    .into_iter()
                    .reduce(|m, x| if lex_less(self.p(x), self.p(m)) { x } else { m })
                    .unwrap();
                if smallest == c || smallest == d {
                    self.remove(t1);
                    self.remove(t2);
                    self.add([c, a, d]);
                    self.add([d, b, c]);
                    flipped = true;
                }
            }
            if !flipped {
                break;
            }
        }
    }
}

fn rotate_to(t: [u32; 3], first: u32) -> [u32; 3] {
    match t.iter().position(|&x| x == first) {
        Some(0) | None => t,
        Some(1) => [t[1], t[2], t[0]],
        Some(_) => [t[2], t[0], t[1]],
    }
}

/// Vertex of `t` that is neither `a` nor `b`.
fn third(t: [u32; 3], a: u32, b: u32) -> u32 {
    *t.iter()
        .find(|&&x| x != a && x != b)
        .expect("triangle has a third vertex")
}

/// Triangulates `points`, all of which must lie in `[0, max_x] x [0, max_y]`,
/// together with the four rectangle corners. Points that duplicate an
/// existing vertex are skipped.
pub fn triangulate_in_rect(points: &[[f64; 2]], max_x: f64, max_y: f64) -> Result<Triangulation> {
    if !(max_x > 0.0 && max_y > 0.0) {
        return Err(Error::Mesh("triangulation rectangle is degenerate".into()));
    }
    let corners = [[0.0, 0.0], [max_x, 0.0], [max_x, max_y], [0.0, max_y]];
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (points[i], points[j]);
        a[0].total_cmp(&b[0])
            .then(a[1].total_cmp(&b[1]))
            .then(i.cmp(&j))
    });

    let mut b = Builder {
        pts: corners.to_vec(),
        tris: Vec::new(),
        free: Vec::new(),
        edges: HashMap::new(),
        last: 0,
    };
    b.add([0, 1, 2]);
    b.add([0, 2, 3]);
    let mut source = vec![None; 4];
    for i in order {
        let p = points[i];
        if !(p[0].is_finite() && p[1].is_finite())
            || p[0] < 0.0
            || p[1] < 0.0
            || p[0] > max_x
            || p[1] > max_y
        {
            return Err(Error::Mesh(format!(
                "point ({}, {}) lies outside the image rectangle",
                p[0], p[1]
            )));
        }
        let v = b.pts.len() as u32;
        b.pts.push(p);
        if b.insert(v)? {
            source.push(Some(i));
        } else {
            b.pts.pop();
        }
    }
    b.canonicalize();

    let mut triangles: Vec<[usize; 3]> = b
        .tris
        .iter()
        .flatten()
        .map(|t| {
            let t = rotate_to(*t, *t.iter().min().unwrap());
            [t[0] as usize, t[1] as usize, t[2] as usize]
        })
        .collect();
    triangles.sort_unstable();
    Ok(Triangulation {
        vertices: b.pts,
        triangles,
        source,
    })
}

impl Triangulation {
    pub fn corner(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Barycentric weights of `q` in triangle `t`.
    pub fn barycentric(&self, t: usize, q: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.corner(t);
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        let wa = ((b[0] - q[0]) * (c[1] - q[1]) - (b[1] - q[1]) * (c[0] - q[0])) / area;
        let wb = ((c[0] - q[0]) * (a[1] - q[1]) - (c[1] - q[1]) * (a[0] - q[0])) / area;
        [wa, wb, 1.0 - wa - wb]
    }

    pub fn contains(&self, t: usize, q: [f64; 2]) -> bool {
        let [a, b, c] = self.corner(t);
        orient(a, b, q) >= 0.0 && orient(b, c, q) >= 0.0 && orient(c, a, q) >= 0.0
    }

    /// First triangle (in index order) containing `q`, edges inclusive.
    pub fn find(&self, q: [f64; 2]) -> Option<usize> {
        (0..self.triangles.len()).find(|&t| self.contains(t, q))
    }

    /// Per-pixel triangle index over a `width x height` grid; pixels on shared
    /// edges take the lowest-index triangle.
    pub fn rasterize(&self, width: usize, height: usize) -> Vec<u32> {
        let mut out = vec![u32::MAX; width * height];
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corner(t);
            let x0 = a[0].min(b[0]).min(c[0]).ceil().max(0.0) as usize;
            let y0 = a[1].min(b[1]).min(c[1]).ceil().max(0.0) as usize;
            let x1 = (a[0].max(b[0]).max(c[0]).floor() as usize).min(width.saturating_sub(1));
            let y1 = (a[1].max(b[1]).max(c[1]).floor() as usize).min(height.saturating_sub(1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let slot = &mut out[y * width + x];
                    if *slot == u32::MAX && self.contains(t, [x as f64, y as f64]) {
                        *slot = t as u32;
                    }
                }
            }
        }
        out
    }
}
