//! Sobel descriptor fields.
//!
//! Both variants start from the 3x3 horizontal and vertical Sobel responses
//! (replicate border). `Likelihood` keeps the two responses at the pixel;
//! `Match` samples sixteen responses on a sparse 5x5 pattern around it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{Image, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorKind {
    Match,
    Likelihood,
}

impl DescriptorKind {
    pub fn dim(self) -> usize {
        match self {
            DescriptorKind::Match => 16,
            DescriptorKind::Likelihood => 2,
        }
    }

    /// Distance from the image border below which a descriptor is invalid.
    pub fn margin(self) -> usize {
        match self {
            DescriptorKind::Match => 3,
            DescriptorKind::Likelihood => 1,
        }
    }
}

/// `(du, dv, horizontal?)` offsets of the 16-entry matching descriptor.
/// Entries 5 and 6 intentionally repeat the center horizontal response.
pub const MATCH_PATTERN: [(i32, i32, bool); 16] = [
    (0, -2, true),
    (-2, -1, true),
    (0, -1, true),
    (2, -1, true),
    (-1, 0, true),
    (0, 0, true),
    (0, 0, true),
    (1, 0, true),
    (-2, 1, true),
    (0, 1, true),
    (2, 1, true),
    (0, 2, true),
    (0, -1, false),
    (-1, 0, false),
    (1, 0, false),
    (0, 1, false),
];

/// Minimum side length accepted by [`sobel_descriptor_field`].
pub const MIN_IMAGE_SIDE: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    kind: DescriptorKind,
    width: usize,
    height: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl DescriptorField {
    pub fn kind(&self) -> DescriptorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Descriptor at a pixel, `None` near the border.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<&[f32]> {
        let i = y * self.width + x;
        if self.valid[i] {
            let d = self.dim();
            Some(&self.data[i * d..(i + 1) * d])
        } else {
            None
        }
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Builds a field directly from per-pixel vectors; used for synthetic inputs.
    pub fn from_parts(
        kind: DescriptorKind,
        width: usize,
        height: usize,
        data: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if data.len() != width * height * kind.dim() || valid.len() != width * height {
            return Err(Error::Validation(
                "descriptor field buffer sizes do not match dimensions".into(),
            ));
        }
        Ok(Self {
            kind,
            width,
            height,
            data,
            valid,
        })
    }
}

/// Horizontal and vertical 3x3 Sobel responses with replicated borders.
pub fn sobel_responses(image: &Image) -> (Raster<f32>, Raster<f32>) {
    let (w, h) = image.dims();
    let at = |x: i64, y: i64| -> f32 {
        let xc = x.clamp(0, w as i64 - 1) as usize;
        let yc = y.clamp(0, h as i64 - 1) as usize;
        *image.get(xc, yc)
    };
    let rows: Vec<(Vec<f32>, Vec<f32>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let y = y as i64;
            let mut gx = Vec::with_capacity(w);
            let mut gy = Vec::with_capacity(w);
            for x in 0..w as i64 {
                let (a, b, c) = (at(x - 1, y - 1), at(x, y - 1), at(x + 1, y - 1));
                let (d, f) = (at(x - 1, y), at(x + 1, y));
                let (g, hh, i) = (at(x - 1, y + 1), at(x, y + 1), at(x + 1, y + 1));
                gx.push((c + 2.0 * f + i) - (a + 2.0 * d + g));
                gy.push((g + 2.0 * hh + i) - (a + 2.0 * b + c));
            }
            (gx, gy)
        })
        .collect();
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    for (rx, ry) in rows {
        gx.extend(rx);
        gy.extend(ry);
    }
    (
        Raster::from_vec(w, h, gx).expect("sized"),
        Raster::from_vec(w, h, gy).expect("sized"),
    )
}

pub fn sobel_descriptor_field(image: &Image, kind: DescriptorKind) -> Result<DescriptorField> {
    let (w, h) = image.dims();
    if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Err(Error::Size(format!(
            "descriptor fields need at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} pixels, image is {w}x{h}"
        )));
    }
    let (gx, gy) = sobel_responses(image);
    let dim = kind.dim();
    let m = kind.margin();
    let mut data = vec![0.0f32; w * h * dim];
    let mut valid = vec![false; w * h];
    data.par_chunks_mut(w * dim)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, vrow))| {
            if y < m || y + m >= h {
                return;
            }
            for x in m..w - m {
                vrow[x] = true;
                let out = &mut row[x * dim..(x + 1) * dim];
                match kind {
                    DescriptorKind::Likelihood => {
                        out[0] = *gx.get(x, y);
                        out[1] = *gy.get(x, y);
                    }
                    DescriptorKind::Match => {
                        for (slot, &(du, dv, horizontal)) in
                            out.iter_mut().zip(MATCH_PATTERN.iter())
                        {
                            let sx = (x as i32 + du) as usize;
                            let sy = (y as i32 + dv) as usize;
                            *slot = if horizontal {
                                *gx.get(sx, sy)
                            } else {
                                *gy.get(sx, sy)
                            };
                        }
                    }
                }
            }
        });
    Ok(DescriptorField {
        kind,
        width: w,
        height: h,
        data,
        valid,
    })
}

/// Sum of absolute differences between two descriptors.
#[inline]
pub fn l1_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
