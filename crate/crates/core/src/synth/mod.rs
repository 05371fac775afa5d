//! Deterministic synthetic light fields with exact ground truth.
//!
//! A scene is a stack of textured fronto-parallel planes (the static
//! background) and rectangular occluders in front of them, all placed in the
//! reference camera frame. Every view is rendered by intersecting its pixel
//! rays with the planes and sampling the nearest texel, so parallax is exact.

pub mod oracle;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{format_calibration, rectified_rig, Camera, CameraRig, PixelCoord};
use crate::io::{
    quantize_u8, write_disparity_pfm, write_frame, write_gray_png, write_u8_png, DisparityRaster,
    LightFieldFrame,
};
use crate::raster::{Image, Raster};

pub use oracle::brute_force_disparity_oracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureKind {
    /// Value noise with cells of `scale` pixels; white noise at scale 1.
    Noise,
    /// Square blocks of `scale` pixels, each a random gray.
    Checker,
    /// `level + slope * u`; flat when the slope is zero.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Texture {
    #[serde(rename = "texture", default = "default_kind")]
    pub kind: TextureKind,
    #[serde(default)]
    pub seed: u64,
    /// Cell size in texels; defaults to 1 for noise and 8 for checker.
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub slope: f64,
    /// Gray range of noise and checker textures.
    #[serde(default = "default_contrast")]
    pub contrast: [f64; 2],
}

fn default_kind() -> TextureKind {
    TextureKind::Noise
}
fn default_level() -> f64 {
    0.5
}
fn default_contrast() -> [f64; 2] {
    [0.1, 0.9]
}

impl Texture {
    pub fn new(kind: TextureKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            scale: None,
            level: default_level(),
            slope: 0.0,
            contrast: default_contrast(),
        }
    }

    pub fn flat(level: f64) -> Self {
        Self {
            level,
            ..Self::new(TextureKind::Gradient, 0)
        }
    }

    fn scale(&self) -> f64 {
        self.scale.unwrap_or(match self.kind {
            TextureKind::Checker => 8.0,
            _ => 1.0,
        })
    }

    /// Gray value of texel `(i, j)` on the plane.
    pub fn sample(&self, i: i64, j: i64, scene_seed: u64) -> f64 {
        let [lo, hi] = self.contrast;
        let seed = mix(self.seed ^ scene_seed.rotate_left(17));
        let v = match self.kind {
            TextureKind::Gradient => self.level + self.slope * i as f64,
            TextureKind::Checker => {
                let s = self.scale();
                let (bi, bj) = ((i as f64 / s).floor() as i64, (j as f64 / s).floor() as i64);
                lo + (hi - lo) * lattice(seed, bi, bj)
            }
            TextureKind::Noise => {
                let s = self.scale();
                let (x, y) = (i as f64 / s, j as f64 / s);
                let (x0, y0) = (x.floor(), y.floor());
                let (fx, fy) = (x - x0, y - y0);
                let (x0, y0) = (x0 as i64, y0 as i64);
                let top = lattice(seed, x0, y0) * (1.0 - fx) + lattice(seed, x0 + 1, y0) * fx;
                let bottom =
                    lattice(seed, x0, y0 + 1) * (1.0 - fx) + lattice(seed, x0 + 1, y0 + 1) * fx;
                lo + (hi - lo) * (top * (1.0 - fy) + bottom * fy)
            }
        };
        v.clamp(0.0, 1.0)
    }
}

/// Uniform value in `[0, 1)` attached to lattice point `(i, j)`.
fn lattice(seed: u64, i: i64, j: i64) -> f64 {
    let h = mix(seed ^ mix(i as u64 ^ mix(j as u64 ^ 0x9e37_79b9_7f4a_7c15)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A static fronto-parallel plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    /// Depth in meters along the reference optical axis.
    pub depth: f64,
    #[serde(flatten)]
    pub texture: Texture,
    /// `[x0, y0, x1, y1)` extent in reference pixels; unbounded when absent.
    #[serde(default)]
    pub footprint: Option<[i64; 4]>,
}

/// A dynamic rectangle in front of the background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub depth: f64,
    /// `[x0, y0, x1, y1)` extent in reference pixels.
    pub footprint: [i64; 4],
    #[serde(flatten)]
    pub texture: Texture,
    /// Mask value written on the occluder in every view.
    #[serde(default = "one")]
    pub probability: f64,
    /// Per-view override of `probability`.
    #[serde(default)]
    pub probabilities: Option<Vec<f64>>,
    /// Footprint displacement per frame, reference pixels.
    #[serde(default)]
    pub shift_per_frame: [i64; 2],
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSpec {
    pub focal: f64,
    pub width: usize,
    pub height: usize,
    /// Camera centers along `x`, meters; the first is the reference.
    pub centers: Vec<f64>,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            focal: 500.0,
            width: 640,
            height: 480,
            centers: vec![0.0, 0.1, 0.2, 0.3, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub rig: RigSpec,
    #[serde(default, rename = "plane")]
    pub background: Vec<Plane>,
    #[serde(default, rename = "occluder")]
    pub occluders: Vec<Occluder>,
    /// Standard deviation of additive Gaussian noise on `[0, 1]` intensities.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Mask value on background pixels.
    #[serde(default)]
    pub background_probability: f64,
    /// Number of frames written by [`write_dataset`].
    #[serde(default = "one_frame")]
    pub frames: usize,
}

fn one_frame() -> usize {
    1
}

impl SceneSpec {
    pub fn new(rig: RigSpec) -> Self {
        Self {
            rig,
            background: Vec::new(),
            occluders: Vec::new(),
            noise_sigma: 0.0,
            background_probability: 0.0,
            frames: 1,
        }
    }

    pub fn parse(source: &str) -> Result<Self> {
        let spec: Self =
            toml::from_str(source).map_err(|e| Error::Scene(e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene specs serialize")
    }

    pub fn camera_rig(&self) -> Result<CameraRig<f64>> {
        rectified_rig(
            self.rig.focal,
            self.rig.width,
            self.rig.height,
            &self.rig.centers,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scene(m));
        let rig = self.camera_rig()?;
        if self.background.is_empty() {
            return bad("scene has no background plane".into());
        }
        let depth_ok = |z: f64| z.is_finite() && z > 0.0;
        for (i, p) in self.background.iter().enumerate() {
            if !depth_ok(p.depth) {
                return bad(format!("plane {i} depth must be positive, got {}", p.depth));
            }
            if let Some(f) = p.footprint {
                check_footprint(&f, &format!("plane {i}"))?;
            }
            check_texture(&p.texture, &format!("plane {i}"))?;
        }
        let nearest_bg = self
            .background
            .iter()
            .map(|p| p.depth)
            .fold(f64::INFINITY, f64::min);
        for (i, o) in self.occluders.iter().enumerate() {
            if !depth_ok(o.depth) || o.depth >= nearest_bg {
                return bad(format!(
                    "occluder {i} depth {} must be positive and in front of every plane (nearest {nearest_bg})",
                    o.depth
                ));
            }
            check_footprint(&o.footprint, &format!("occluder {i}"))?;
            check_texture(&o.texture, &format!("occluder {i}"))?;
            let probs = o
                .probabilities
                .clone()
                .unwrap_or_else(|| vec![o.probability; rig.len()]);
            if probs.len() != rig.len() {
                return bad(format!(
                    "occluder {i} lists {} probabilities for {} views",
                    probs.len(),
                    rig.len()
                ));
            }
            if probs
                .iter()
                .chain([&o.probability])
                .any(|p| !(0.0..=1.0).contains(p))
            {
                return bad(format!("occluder {i} probabilities must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.background_probability) {
            return bad("background_probability must lie in [0, 1]".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        Ok(())
    }
}

fn check_footprint(f: &[i64; 4], what: &str) -> Result<()> {
    if f[0] >= f[2] || f[1] >= f[3] {
        return Err(Error::Scene(format!("{what} footprint {f:?} is empty")));
    }
    Ok(())
}

fn check_texture(t: &Texture, what: &str) -> Result<()> {
    if t.scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Scene(format!(
            "{what} texture scale must be positive"
        )));
    }
    let [lo, hi] = t.contrast;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
        return Err(Error::Scene(format!(
            "{what} texture contrast must lie in [0, 1]"
        )));
    }
    Ok(())
}

/// Exact answers for a rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Disparity of the nearest background plane at every reference pixel.
    pub disparity: DisparityRaster,
    /// Reference view of the background alone, noise-free and 8-bit quantized.
    pub background: Image,
    /// Per-view masks of pixels showing an occluder.
    pub dynamic_masks: Vec<Raster<bool>>,
    /// Occluder footprints of this frame, `[x0, y0, x1, y1)` in reference pixels.
    pub footprints: Vec<[i64; 4]>,
}

impl GroundTruth {
    /// Reference pixels hidden by an occluder.
    pub fn occluded(&self) -> &Raster<bool> {
        &self.dynamic_masks[0]
    }
}

/// Surfaces of one frame in front-to-back-agnostic order: background
/// planes first, then occluders.
struct Surface<'a> {
    depth: f64,
    texture: &'a Texture,
    footprint: Option<[i64; 4]>,
    occluder: Option<usize>,
}

fn hits(f: &Option<[i64; 4]>, i: i64, j: i64) -> bool {
    f.is_none_or(|[x0, y0, x1, y1]| i >= x0 && i < x1 && j >= y0 && j < y1)
}

/// Reference-pixel coordinates where the ray of `camera` through `p` meets
/// the plane at reference depth `z`.
fn ray_to_reference(
    reference: &Camera<f64>,
    camera: &Camera<f64>,
    p: PixelCoord<f64>,
    z: f64,
) -> PixelCoord<f64> {
    let a = reference.world_to_camera(&camera.center());
    let b = reference.world_to_camera(&camera.camera_to_world(&camera.ray(p)));
    let s = (z - a[2]) / (b[2] - a[2]);
    let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), z];
    reference.project(&x)
}

/// The visible surface of `camera` at pixel `(x, y)`: `(value, surface index)`.
fn trace(
    surfaces: &[Surface<'_>],
    reference: &Camera<f64>,
    camera: &Camera<f64>,
    x: usize,
    y: usize,
    scene_seed: u64,
) -> Option<(f64, usize)> {
    let p = PixelCoord::new(x as f64, y as f64);
    let mut best: Option<(f64, f64, usize)> = None;
    for (s, surf) in surfaces.iter().enumerate() {
        let q = ray_to_reference(reference, camera, p, surf.depth);
        let (i, j) = (q.u.round() as i64, q.v.round() as i64);
        if !hits(&surf.footprint, i, j) {
            continue;
        }
        // Nearest wins; equal depths go to the later surface.
        if best.is_none_or(|(z, _, _)| surf.depth <= z) {
            best = Some((surf.depth, surf.texture.sample(i, j, scene_seed), s));
        }
    }
    best.map(|(_, v, s)| (v, s))
}

fn quantize(v: f64) -> f32 {
    quantize_u8(v as f32) as f32 / 255.0
}

/// Renders frame 0.
pub fn render_lightfield(spec: &SceneSpec, seed: u64) -> Result<(LightFieldFrame, GroundTruth)> {
    render_frame(spec, seed, 0)
}

/// Renders frame `index`, with occluders displaced by their per-frame shift.
pub fn render_frame(
    spec: &SceneSpec,
    seed: u64,
    index: usize,
) -> Result<(LightFieldFrame, GroundTruth)> {
    spec.validate()?;
    let rig = spec.camera_rig()?;
    let (w, h) = rig.image_size();
    let k_views = rig.len();
    let footprints: Vec<[i64; 4]> = spec
        .occluders
        .iter()
        .map(|o| {
            let [dx, dy] = o.shift_per_frame.map(|s| s * index as i64);
            let f = o.footprint;
            [f[0] + dx, f[1] + dy, f[2] + dx, f[3] + dy]
        })
        .collect();
    let mut surfaces: Vec<Surface<'_>> = spec
        .background
        .iter()
        .map(|p| Surface {
            depth: p.depth,
            texture: &p.texture,
            footprint: p.footprint,
            occluder: None,
        })
        .collect();
    let n_background = surfaces.len();
    surfaces.extend(spec.occluders.iter().enumerate().map(|(i, o)| Surface {
        depth: o.depth,
        texture: &o.texture,
        footprint: Some(footprints[i]),
        occluder: Some(i),
    }));
    let reference = rig.reference();

    let mut images = Vec::with_capacity(k_views);
    let mut masks = Vec::with_capacity(k_views);
    let mut dynamic_masks = Vec::with_capacity(k_views);
    for k in 0..k_views {
        let camera = rig.camera(k);
        let traced: Vec<Option<(f64, usize)>> = (0..h)
            .into_par_iter()
            .flat_map_iter(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| trace(&surfaces, reference, camera, x, y, seed))
            .collect();
        let values: Vec<f64> = traced.iter().map(|t| t.map_or(0.0, |(v, _)| v)).collect();
        let occluder_of = |t: &Option<(f64, usize)>| t.and_then(|(_, s)| surfaces[s].occluder);
        let prob: Vec<f32> = traced
            .iter()
            .map(|t| {
                let p = match occluder_of(t) {
                    Some(i) => {
                        let o = &spec.occluders[i];
                        o.probabilities.as_ref().map_or(o.probability, |p| p[k])
                    }
                    None => spec.background_probability,
                };
                quantize(p)
            })
            .collect();
        images.push(values);
        masks.push(Raster::from_vec(w, h, prob)?);
        dynamic_masks.push(Raster::from_vec(
            w,
            h,
            traced.iter().map(|t| occluder_of(t).is_some()).collect(),
        )?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix(
        seed ^ (index as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)
    ));
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));
    let images: Vec<Image> = images
        .into_iter()
        .map(|values| {
            let noisy = values
                .into_iter()
                .map(|v| quantize(v + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng))))
                .collect();
            Raster::from_vec(w, h, noisy)
        })
        .collect::<Result<_>>()?;

    let background_only = &surfaces[..n_background];
    let bg: Vec<Option<(f64, usize)>> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| trace(background_only, reference, reference, x, y, seed))
        .collect();
    let background = Raster::from_vec(
        w,
        h,
        bg.iter()
            .map(|t| quantize(t.map_or(0.0, |(v, _)| v)))
            .collect(),
    )?;
    let disparity = Raster::from_vec(
        w,
        h,
        bg.iter()
            .map(|t| match t {
                Some((_, s)) => rig.disparity_of(background_only[*s].depth) as f32,
                None => DisparityRaster::INVALID,
            })
            .collect(),
    )?;

    let frame = LightFieldFrame::new(index as u64, images, masks)?;
    let truth = GroundTruth {
        disparity: DisparityRaster::from_values(disparity),
        background,
        dynamic_masks,
        footprints,
    };
    Ok((frame, truth))
}

/// Writes `calib.txt` and one directory per frame holding the views, masks
/// and ground truth (`gt_disparity.pfm`, `gt_background.png`, `gt_mask_<k>.png`).
pub fn write_dataset(spec: &SceneSpec, seed: u64, out: &Path) -> Result<()> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let calib = out.join("calib.txt");
    fs::write(&calib, format_calibration(&spec.camera_rig()?)).map_err(|e| Error::io(&calib, e))?;
    for index in 0..spec.frames {
        let (frame, truth) = render_frame(spec, seed, index)?;
        let dir = out.join(frame_dir_name(index as u64));
        write_frame(&dir, &frame)?;
        write_ground_truth(&dir, &truth)?;
    }
    Ok(())
}

pub fn frame_dir_name(frame_id: u64) -> String {
    format!("{frame_id:04}")
}

pub fn write_ground_truth(dir: &Path, truth: &GroundTruth) -> Result<()> {
    write_disparity_pfm(&truth.disparity, &dir.join("gt_disparity.pfm"))?;
    write_gray_png(&dir.join("gt_background.png"), &truth.background)?;
    for (k, m) in truth.dynamic_masks.iter().enumerate() {
        write_u8_png(
            &dir.join(format!("gt_mask_{k}.png")),
            &m.map(|&d| if d { 255 } else { 0 }),
        )?;
    }
    Ok(())
}
