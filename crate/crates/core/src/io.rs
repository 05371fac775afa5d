//! Frame loading and artifact writers.
//!
//! Dataset layout: `<dataset>/calib.txt` plus one directory per frame holding
//! `cam_<k>.png` and `mask_<k>.png`. Mask pixels encode `P(dynamic) * 255`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::raster::{Image, Raster};
use crate::scalar::Scalar;

/// Per-channel planes of a color view (R, G, B), each in `[0, 1]`.
pub type ColorPlanes = [Image; 3];

/// One synchronized capture from the array.
#[derive(Debug, Clone, PartialEq)]
pub struct LightFieldFrame {
    pub frame_id: u64,
    /// Grayscale intensities in `[0, 1]`, one per camera.
    pub images: Vec<Image>,
    /// Per-pixel probability of being dynamic, one per camera.
    pub prob_masks: Vec<Raster<f32>>,
    /// Color planes, only kept when requested at load time.
    pub colors: Option<Vec<ColorPlanes>>,
}

impl LightFieldFrame {
    pub fn new(frame_id: u64, images: Vec<Image>, prob_masks: Vec<Raster<f32>>) -> Result<Self> {
        let frame = Self {
            frame_id,
            images,
            prob_masks,
            colors: None,
        };
        frame.validate::<f64>(None)?;
        Ok(frame)
    }

    pub fn num_views(&self) -> usize {
        self.images.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.images[0].dims()
    }

    /// Checks view count, shared dimensions and mask range. With a rig, the
    /// dimensions must also match the calibrated image size.
    pub fn validate<T: Scalar>(&self, rig: Option<&CameraRig<T>>) -> Result<()> {
        if self.images.is_empty() || self.images.len() != self.prob_masks.len() {
            return Err(Error::Validation(format!(
                "frame {} has {} images and {} masks",
                self.frame_id,
                self.images.len(),
                self.prob_masks.len()
            )));
        }
        let expected = match rig {
            Some(rig) => {
                if rig.len() != self.images.len() {
                    return Err(Error::Validation(format!(
                        "frame {} has {} views, calibration has {}",
                        self.frame_id,
                        self.images.len(),
                        rig.len()
                    )));
                }
                rig.image_size()
            }
            None => self.images[0].dims(),
        };
        let named = self
            .images
            .iter()
            .enumerate()
            .map(|(k, r)| (format!("cam_{k}"), r.dims()))
            .chain(
                self.prob_masks
                    .iter()
                    .enumerate()
                    .map(|(k, r)| (format!("mask_{k}"), r.dims())),
            );
        for (name, dims) in named {
            if dims != expected {
                return Err(Error::Validation(format!(
                    "{name}: expected {}x{}, found {}x{}",
                    expected.0, expected.1, dims.0, dims.1
                )));
            }
        }
        for (k, mask) in self.prob_masks.iter().enumerate() {
            if let Some(p) = mask.as_slice().iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::Validation(format!(
                    "mask_{k}: probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Loads `cam_<k>.png` and `mask_<k>.png` for every camera of the rig.
pub fn load_frame<T: Scalar>(
    dir: &Path,
    rig: &CameraRig<T>,
    frame_id: u64,
    keep_color: bool,
) -> Result<LightFieldFrame> {
    let k_views = rig.len();
    let mut images = Vec::with_capacity(k_views);
    let mut masks = Vec::with_capacity(k_views);
    let mut colors = keep_color.then(Vec::new);
    for k in 0..k_views {
        let cam = open_png(&dir.join(format!("cam_{k}.png")))?;
        if let Some(colors) = colors.as_mut() {
            colors.push(color_planes(&cam));
        }
        images.push(luma_plane(&cam));
        let mask = open_png(&dir.join(format!("mask_{k}.png")))?;
        masks.push(luma_plane(&mask));
    }
    let frame = LightFieldFrame {
        frame_id,
        images,
        prob_masks: masks,
        colors,
    };
    frame.validate(Some(rig))?;
    Ok(frame)
}

fn open_png(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

const REC601: [f32; 3] = [0.299, 0.587, 0.114];

/// Grayscale plane in `[0, 1]`; color inputs use Rec. 601 luma weights.
fn luma_plane(img: &DynamicImage) -> Image {
    match img {
        DynamicImage::ImageLuma8(g) => gray8_to_plane(g),
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            Raster::from_fn(w as usize, h as usize, |x, y| {
                let p = rgb.get_pixel(x as u32, y as u32).0;
                (REC601[0] * p[0] as f32 + REC601[1] * p[1] as f32 + REC601[2] * p[2] as f32)
                    / 255.0
            })
        }
    }
}

fn gray8_to_plane(g: &GrayImage) -> Image {
    let (w, h) = g.dimensions();
    Raster::from_fn(w as usize, h as usize, |x, y| {
        g.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0
    })
}

fn color_planes(img: &DynamicImage) -> ColorPlanes {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = |c: usize| {
        Raster::from_fn(w, h, |x, y| {
            rgb.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0
        })
    };
    [plane(0), plane(1), plane(2)]
}

/// `[0, 1]` to 8 bit, rounding half up.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn write_gray_png(path: &Path, img: &Image) -> Result<()> {
    let buf: GrayImage = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        Luma([quantize_u8(*img.get(x as usize, y as usize))])
    });
    save(path, DynamicImage::ImageLuma8(buf))
}

pub fn write_u8_png(path: &Path, raster: &Raster<u8>) -> Result<()> {
    let buf = GrayImage::from_raw(
        raster.width() as u32,
        raster.height() as u32,
        raster.as_slice().to_vec(),
    )
    .expect("raster dims match buffer");
    save(path, DynamicImage::ImageLuma8(buf))
}

pub fn write_rgb_png(path: &Path, planes: &ColorPlanes) -> Result<()> {
    let (w, h) = planes[0].dims();
    let buf = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([
            quantize_u8(*planes[0].get(x, y)),
            quantize_u8(*planes[1].get(x, y)),
            quantize_u8(*planes[2].get(x, y)),
        ])
    });
    save(path, DynamicImage::ImageRgb8(buf))
}

/// Reads an 8-bit grayscale PNG as raw byte values.
pub fn read_u8_png(path: &Path) -> Result<Raster<u8>> {
    let img = open_png(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Raster::from_vec(w as usize, h as usize, img.into_raw())
}

pub fn read_gray_png(path: &Path) -> Result<Image> {
    Ok(luma_plane(&open_png(path)?))
}

fn save(path: &Path, img: DynamicImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Writes a full light field frame in the dataset layout (images and masks).
pub fn write_frame(dir: &Path, frame: &LightFieldFrame) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, (img, mask)) in frame.images.iter().zip(&frame.prob_masks).enumerate() {
        write_gray_png(&dir.join(format!("cam_{k}.png")), img)?;
        write_gray_png(&dir.join(format!("mask_{k}.png")), mask)?;
    }
    Ok(())
}

/// Frame directories of a dataset, sorted by name.
pub fn frame_dirs(dataset: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dataset)
        .map_err(|e| Error::io(dataset, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("cam_0.png").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

// --- disparity rasters --------------------------------------------------------

/// Per-pixel disparity; invalid pixels hold negative infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityRaster {
    pub values: Raster<f32>,
}

impl DisparityRaster {
    pub const INVALID: f32 = f32::NEG_INFINITY;

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            values: Raster::filled(width, height, Self::INVALID),
        }
    }

    pub fn from_values(values: Raster<f32>) -> Self {
        let values = values.map(|&v| {
            if v.is_finite() && v >= 0.0 {
                v
            } else {
                Self::INVALID
            }
        });
        Self { values }
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let v = *self.values.get(x, y);
        v.is_finite().then_some(v)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: Option<f32>) {
        self.values.set(x, y, d.unwrap_or(Self::INVALID));
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.values.get(x, y).is_finite()
    }

    pub fn valid_mask(&self) -> Raster<bool> {
        self.values.map(|v| v.is_finite())
    }

    pub fn valid_count(&self) -> usize {
        self.values
            .as_slice()
            .iter()
            .filter(|v| v.is_finite())
            .count()
    }

    /// `(min, max)` over valid pixels.
    pub fn valid_range(&self) -> Option<(f32, f32)> {
        self.values
            .as_slice()
            .iter()
            .filter(|v| v.is_finite())
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

const PFM_INVALID: f32 = -1.0;

/// Grayscale little-endian PFM, rows stored bottom to top.
pub fn write_disparity_pfm(raster: &DisparityRaster, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let (w, h) = raster.dims();
    let mut bytes = Vec::with_capacity(w * h * 4 + 32);
    bytes.extend_from_slice(format!("Pf\n{w} {h}\n-1.0\n").as_bytes());
    for y in (0..h).rev() {
        for x in 0..w {
            let v = raster.get(x, y).unwrap_or(PFM_INVALID);
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_disparity_pfm(path: &Path) -> Result<DisparityRaster> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

fn decode_pfm(bytes: &[u8]) -> Result<DisparityRaster> {
    let fmt = |m: &str| Error::Format(format!("PFM: {m}"));
    // Header: three whitespace-separated tokens, then exactly one whitespace byte.
    let mut tokens = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| fmt("non-ASCII header"))?);
    }
    if pos >= bytes.len() {
        return Err(fmt("missing raster data"));
    }
    pos += 1;
    match tokens[0] {
        "Pf" => {}
        "PF" => return Err(fmt("color PFM is not supported")),
        other => return Err(fmt(&format!("bad magic {other:?}"))),
    }
    let w: usize = tokens[1].parse().map_err(|_| fmt("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| fmt("bad height"))?;
    let scale: f32 = tokens[3].parse().map_err(|_| fmt("bad scale"))?;
    if !(scale < 0.0) {
        return Err(fmt("big-endian (positive scale) files are not supported"));
    }
    let data = &bytes[pos..];
    if data.len() != w * h * 4 {
        return Err(fmt(&format!(
            "expected {} data bytes, found {}",
            w * h * 4,
            data.len()
        )));
    }
    let mut values = Raster::filled(w, h, DisparityRaster::INVALID);
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if v.is_nan() {
            return Err(fmt("NaN value"));
        }
        if v.is_infinite() {
            return Err(fmt("infinite value"));
        }
        let (x, row) = (i % w, i / w);
        if v >= 0.0 {
            values.set(x, h - 1 - row, v);
        }
    }
    Ok(DisparityRaster { values })
}
