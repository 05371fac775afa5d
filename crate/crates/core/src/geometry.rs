//! Pinhole cameras on a linear array, ray reprojection through the
//! reference view, and the fronto-parallel plane homographies that drive
//! every per-pixel warp downstream.
//!
//! Conventions: rotations and translations map world points into the camera
//! frame (`X_cam = R X_world + t`). Disparity is measured in pixels of the
//! reference camera against a camera one `unit_baseline` away, so a point at
//! depth `Z` (along the reference optical axis) has disparity
//! `d = fx_ref * unit_baseline / Z`. Camera `k` sees that point shifted by
//! `alpha_k * d` pixels; for an array laid out towards `+x` the shift is
//! along `-u`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Mat3<T> = [[T; 3]; 3];
pub type Vec3<T> = [T; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord<T> {
    pub u: T,
    pub v: T,
}

impl<T: Scalar> PixelCoord<T> {
    pub fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &Self) -> T {
        ((self.u - other.u).powi(2) + (self.v - other.v).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    /// World to camera rotation.
    pub rotation: Mat3<T>,
    /// World to camera translation, meters.
    pub translation: Vec3<T>,
    pub width: usize,
    pub height: usize,
}

impl<T: Scalar> Camera<T> {
    /// Identity-rotation camera whose optical center sits at `center` (meters).
    pub fn rectified(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        center: Vec3<T>,
        width: usize,
        height: usize,
    ) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            rotation: identity(),
            translation: [-center[0], -center[1], -center[2]],
            width,
            height,
        }
    }

    /// Optical center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vec3<T> {
        let rt = transpose(&self.rotation);
        let c = mat_vec(&rt, &self.translation);
        [-c[0], -c[1], -c[2]]
    }

    pub fn intrinsics(&self) -> Mat3<T> {
        let z = T::zero();
        [
            [self.fx, z, self.cx],
            [z, self.fy, self.cy],
            [z, z, T::one()],
        ]
    }

    pub fn intrinsics_inverse(&self) -> Mat3<T> {
        let z = T::zero();
        [
            [T::one() / self.fx, z, -self.cx / self.fx],
            [z, T::one() / self.fy, -self.cy / self.fy],
            [z, z, T::one()],
        ]
    }

    /// Viewing ray through a pixel in camera coordinates, scaled to unit depth.
    pub fn ray(&self, p: PixelCoord<T>) -> Vec3<T> {
        [
            (p.u - self.cx) / self.fx,
            (p.v - self.cy) / self.fy,
            T::one(),
        ]
    }

    /// Projects a camera-frame point (or direction) onto the image plane.
    pub fn project(&self, x: &Vec3<T>) -> PixelCoord<T> {
        PixelCoord {
            u: self.fx * x[0] / x[2] + self.cx,
            v: self.fy * x[1] / x[2] + self.cy,
        }
    }

    pub fn world_to_camera(&self, x: &Vec3<T>) -> Vec3<T> {
        let r = mat_vec(&self.rotation, x);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn camera_to_world(&self, x: &Vec3<T>) -> Vec3<T> {
        let shifted = [
            x[0] - self.translation[0],
            x[1] - self.translation[1],
            x[2] - self.translation[2],
        ];
        mat_vec(&transpose(&self.rotation), &shifted)
    }

    pub fn contains(&self, p: PixelCoord<T>) -> bool {
        p.u >= T::zero()
            && p.v >= T::zero()
            && p.u <= T::of((self.width - 1) as f64)
            && p.v <= T::of((self.height - 1) as f64)
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Geometry(format!("camera[{index}]: {what}")));
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be non-zero");
        }
        let (w, h) = (T::of(self.width as f64), T::of(self.height as f64));
        if !(self.cx >= T::zero() && self.cx < w && self.cy >= T::zero() && self.cy < h) {
            return bad("principal point outside the image");
        }
        let tol = T::of(1e-9).max(T::epsilon() * T::of(100.0));
        let rtr = mat_mul(&transpose(&self.rotation), &self.rotation);
        for (i, row) in rtr.iter().enumerate() {
            for (j, &value) in row.iter().enumerate() {
                let expect = if i == j { T::one() } else { T::zero() };
                if !((value - expect).abs() <= tol) {
                    return bad("rotation is not orthonormal");
                }
            }
        }
        if self.translation.iter().any(|t| !t.is_finite()) {
            return bad("translation is not finite");
        }
        Ok(())
    }
}

/// Calibrated linear camera array. The reference view is always the first
/// (leftmost) camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig<T> {
    cameras: Vec<Camera<T>>,
    unit_baseline: T,
    ratios: Vec<T>,
}

/// Default maximum perpendicular distance (meters) of a camera center from
/// the array axis.
pub const DEFAULT_COLLINEARITY_TOLERANCE: f64 = 0.01;

impl<T: Scalar> CameraRig<T> {
    pub fn new(cameras: Vec<Camera<T>>, unit_baseline: T) -> Result<Self> {
        Self::with_tolerance(
            cameras,
            unit_baseline,
            T::of(DEFAULT_COLLINEARITY_TOLERANCE),
        )
    }

    pub fn with_tolerance(cameras: Vec<Camera<T>>, unit_baseline: T, tolerance: T) -> Result<Self> {
        if cameras.len() < 2 {
            return Err(Error::Geometry(format!(
                "a camera array needs at least 2 cameras, found {}",
                cameras.len()
            )));
        }
        if !(unit_baseline > T::zero()) {
            return Err(Error::Geometry("unit_baseline must be positive".into()));
        }
        for (i, cam) in cameras.iter().enumerate() {
            cam.validate(i)?;
        }
        let (w, h) = (cameras[0].width, cameras[0].height);
        if let Some(i) = cameras.iter().position(|c| c.width != w || c.height != h) {
            return Err(Error::Geometry(format!(
                "camera[{i}] image size {}x{} differs from reference {w}x{h}",
                cameras[i].width, cameras[i].height
            )));
        }

        let centers: Vec<Vec3<T>> = cameras.iter().map(Camera::center).collect();
        let origin = centers[0];
        let offsets: Vec<Vec3<T>> = centers.iter().map(|c| sub(c, &origin)).collect();
        let far = offsets
            .iter()
            .copied()
            .max_by(|a, b| norm(a).partial_cmp(&norm(b)).unwrap())
            .unwrap();
        let far_len = norm(&far);
        if !(far_len > T::zero()) {
            return Err(Error::Geometry("camera centers coincide".into()));
        }
        let axis = [far[0] / far_len, far[1] / far_len, far[2] / far_len];
        for (i, off) in offsets.iter().enumerate() {
            let along = dot(off, &axis);
            let perp = sub(off, &[axis[0] * along, axis[1] * along, axis[2] * along]);
            if norm(&perp) > tolerance {
                return Err(Error::Geometry(format!(
                    "camera[{i}] center is {} m off the array axis (tolerance {} m)",
                    norm(&perp),
                    tolerance
                )));
            }
        }

        let ratios: Vec<T> = offsets.iter().map(|o| norm(o) / unit_baseline).collect();
        for k in 1..ratios.len() {
            if !(ratios[k] > ratios[k - 1]) {
                return Err(Error::Geometry(format!(
                    "baseline ratios must increase with camera index (camera[{k}] at {} <= camera[{}] at {})",
                    ratios[k],
                    k - 1,
                    ratios[k - 1]
                )));
            }
        }
        let nearest = norm(&offsets[1]);
        if (nearest - unit_baseline).abs() > tolerance {
            return Err(Error::Geometry(format!(
                "unit_baseline {unit_baseline} m does not match the reference-to-neighbor distance {nearest} m"
            )));
        }

        Ok(Self {
            cameras,
            unit_baseline,
            ratios,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    #[inline]
    pub fn reference_index(&self) -> usize {
        0
    }

    pub fn reference(&self) -> &Camera<T> {
        &self.cameras[0]
    }

    pub fn camera(&self, k: usize) -> &Camera<T> {
        &self.cameras[k]
    }

    pub fn cameras(&self) -> &[Camera<T>] {
        &self.cameras
    }

    pub fn unit_baseline(&self) -> T {
        self.unit_baseline
    }

    /// `(width, height)` shared by all views.
    pub fn image_size(&self) -> (usize, usize) {
        (self.cameras[0].width, self.cameras[0].height)
    }

    /// Scale between reference disparity units and the pixel shift seen by camera `k`.
    #[inline]
    pub fn baseline_ratio(&self, k: usize) -> T {
        self.ratios[k]
    }

    pub fn baseline_ratios(&self) -> &[T] {
        &self.ratios
    }

    pub fn max_baseline_ratio(&self) -> T {
        *self.ratios.last().unwrap()
    }

    /// Disparity grid step that moves the widest-baseline view by one pixel.
    pub fn candidate_step(&self) -> T {
        T::one() / self.max_baseline_ratio()
    }

    /// Depth along the reference optical axis for a disparity; infinite at `d = 0`.
    pub fn depth_of(&self, d: T) -> T {
        self.reference().fx * self.unit_baseline / d
    }

    pub fn disparity_of(&self, depth: T) -> T {
        self.reference().fx * self.unit_baseline / depth
    }

    /// Sign of the horizontal image shift in the far camera for increasing
    /// disparity (`-1` for arrays extending towards `+x`).
    pub fn shift_sign(&self) -> T {
        let cam = self.reference();
        let p = PixelCoord::new(cam.cx, cam.cy);
        let k = self.len() - 1;
        let q = reproject_pixel(self, p, T::one(), k);
        if q.u < p.u {
            -T::one()
        } else {
            T::one()
        }
    }
}

/// Warps a reference pixel at disparity `d` into camera `k`.
///
/// `d = 0` selects the plane at infinity. The result may be out of bounds or
/// behind the camera; callers mask it.
pub fn reproject_pixel<T: Scalar>(
    rig: &CameraRig<T>,
    x_ref: PixelCoord<T>,
    d: T,
    k: usize,
) -> PixelCoord<T> {
    if k == rig.reference_index() {
        return x_ref;
    }
    let reference = rig.reference();
    let target = rig.camera(k);
    let ray = reference.ray(x_ref);
    if d == T::zero() {
        let dir_world = mat_vec(&transpose(&reference.rotation), &ray);
        let dir_cam = mat_vec(&target.rotation, &dir_world);
        return target.project(&dir_cam);
    }
    let depth = rig.depth_of(d);
    let point_ref = [ray[0] * depth, ray[1] * depth, depth];
    let world = reference.camera_to_world(&point_ref);
    target.project(&target.world_to_camera(&world))
}

/// 3x3 projective transform, normalized so the bottom-right entry is one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography<T>(pub Mat3<T>);

impl<T: Scalar> Homography<T> {
    pub fn identity() -> Self {
        Self(identity())
    }

    pub fn apply(&self, p: PixelCoord<T>) -> PixelCoord<T> {
        let h = &self.0;
        let x = h[0][0] * p.u + h[0][1] * p.v + h[0][2];
        let y = h[1][0] * p.u + h[1][1] * p.v + h[1][2];
        let w = h[2][0] * p.u + h[2][1] * p.v + h[2][2];
        PixelCoord { u: x / w, v: y / w }
    }
}

/// Homography induced by the fronto-parallel (in the reference frame) plane
/// at disparity `d`, mapping reference pixels into camera `k`.
pub fn plane_warp<T: Scalar>(rig: &CameraRig<T>, k: usize, d: T) -> Homography<T> {
    if k == rig.reference_index() {
        return Homography::identity();
    }
    let reference = rig.reference();
    let target = rig.camera(k);
    // Relative pose reference -> k.
    let rel_rot = mat_mul(&target.rotation, &transpose(&reference.rotation));
    let rotated_t = mat_vec(&rel_rot, &reference.translation);
    let rel_t = sub(&target.translation, &rotated_t);
    let mut m = rel_rot;
    if d != T::zero() {
        // Plane n^T X = depth with n = (0, 0, 1): add t * n^T / depth.
        let inv_depth = T::one() / rig.depth_of(d);
        for (row, t) in m.iter_mut().zip(rel_t.iter()) {
            row[2] = row[2] + *t * inv_depth;
        }
    }
    let h = mat_mul(
        &mat_mul(&target.intrinsics(), &m),
        &reference.intrinsics_inverse(),
    );
    let s = h[2][2];
    let mut out = h;
    if s != T::zero() {
        for row in out.iter_mut() {
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
    }
    Homography(out)
}

/// Precomputed plane-induced warps for every view.
///
/// For the fronto-parallel plane at disparity `d` the homogeneous image of a
/// reference pixel `x` in view `k` is `M_k x + d c_k`, so per-pixel work
/// reduces to one 3x3 product and a division. This is the warp used by the
/// per-pixel estimators.
#[derive(Debug, Clone)]
pub struct RayWarper<T> {
    linear: Vec<Mat3<T>>,
    offset: Vec<Vec3<T>>,
    reference: usize,
}

impl<T: Scalar> RayWarper<T> {
    pub fn new(rig: &CameraRig<T>) -> Self {
        let reference = rig.reference();
        let k_ref_inv = reference.intrinsics_inverse();
        let scale = T::one() / (reference.fx * rig.unit_baseline());
        let mut linear = Vec::with_capacity(rig.len());
        let mut offset = Vec::with_capacity(rig.len());
        for target in rig.cameras() {
            let rel_rot = mat_mul(&target.rotation, &transpose(&reference.rotation));
            let rel_t = sub(
                &target.translation,
                &mat_vec(&rel_rot, &reference.translation),
            );
            let k = target.intrinsics();
            linear.push(mat_mul(&mat_mul(&k, &rel_rot), &k_ref_inv));
            let kt = mat_vec(&k, &rel_t);
            offset.push([kt[0] * scale, kt[1] * scale, kt[2] * scale]);
        }
        Self {
            linear,
            offset,
            reference: rig.reference_index(),
        }
    }

    pub fn num_views(&self) -> usize {
        self.linear.len()
    }

    /// Reference pixel `(u, v)` at disparity `d` seen from view `k`.
    #[inline]
    pub fn warp(&self, u: T, v: T, d: T, k: usize) -> (T, T) {
        if k == self.reference {
            return (u, v);
        }
        let m = &self.linear[k];
        let c = &self.offset[k];
        let x = m[0][0] * u + m[0][1] * v + m[0][2] + d * c[0];
        let y = m[1][0] * u + m[1][1] * v + m[1][2] + d * c[1];
        let w = m[2][0] * u + m[2][1] * v + m[2][2] + d * c[2];
        (x / w, y / w)
    }
}

/// `|center_k - center_ref| / unit_baseline`.
pub fn baseline_ratio<T: Scalar>(rig: &CameraRig<T>, k: usize) -> T {
    rig.baseline_ratio(k)
}

// --- calibration document ---------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationDoc {
    reference_index: usize,
    unit_baseline: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    collinearity_tolerance: Option<f64>,
    camera: Vec<CameraDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    rotation: Vec<f64>,
    t: Vec<f64>,
    width: usize,
    height: usize,
}

/// Parses a calibration document (TOML; see the README for the layout).
pub fn parse_calibration<T: Scalar>(source: &str) -> Result<CameraRig<T>> {
    let schema = |message: String| Error::Schema {
        document: "calibration".into(),
        message,
    };
    let doc: CalibrationDoc = toml::from_str(source).map_err(|e| schema(e.to_string()))?;
    if doc.reference_index != 0 {
        return Err(schema(format!(
            "field `reference_index` must be 0 (leftmost camera), found {}",
            doc.reference_index
        )));
    }
    let mut cameras = Vec::with_capacity(doc.camera.len());
    for (i, c) in doc.camera.iter().enumerate() {
        if c.rotation.len() != 9 {
            return Err(schema(format!(
                "field `camera[{i}].R` needs 9 numbers (row-major), found {}",
                c.rotation.len()
            )));
        }
        if c.t.len() != 3 {
            return Err(schema(format!(
                "field `camera[{i}].t` needs 3 numbers, found {}",
                c.t.len()
            )));
        }
        let r = |j: usize| T::of(c.rotation[j]);
        cameras.push(Camera {
            fx: T::of(c.fx),
            fy: T::of(c.fy),
            cx: T::of(c.cx),
            cy: T::of(c.cy),
            rotation: [[r(0), r(1), r(2)], [r(3), r(4), r(5)], [r(6), r(7), r(8)]],
            translation: [T::of(c.t[0]), T::of(c.t[1]), T::of(c.t[2])],
            width: c.width,
            height: c.height,
        });
    }
    let tolerance = T::of(
        doc.collinearity_tolerance
            .unwrap_or(DEFAULT_COLLINEARITY_TOLERANCE),
    );
    CameraRig::with_tolerance(cameras, T::of(doc.unit_baseline), tolerance)
}

/// Serializes a rig into the calibration document format read by [`parse_calibration`].
pub fn format_calibration<T: Scalar>(rig: &CameraRig<T>) -> String {
    let doc = CalibrationDoc {
        reference_index: 0,
        unit_baseline: rig.unit_baseline.as_f64(),
        collinearity_tolerance: None,
        camera: rig
            .cameras
            .iter()
            .map(|c| CameraDoc {
                fx: c.fx.as_f64(),
                fy: c.fy.as_f64(),
                cx: c.cx.as_f64(),
                cy: c.cy.as_f64(),
                rotation: c.rotation.iter().flatten().map(|v| v.as_f64()).collect(),
                t: c.translation.iter().map(|v| v.as_f64()).collect(),
                width: c.width,
                height: c.height,
            })
            .collect(),
    };
    toml::to_string(&doc).expect("calibration document serializes")
}

/// Rectified identity-rotation rig with cameras along `+x`.
pub fn rectified_rig<T: Scalar>(
    focal: T,
    width: usize,
    height: usize,
    centers_x: &[T],
) -> Result<CameraRig<T>> {
    let cx = T::of(width as f64 / 2.0);
    let cy = T::of(height as f64 / 2.0);
    let cameras = centers_x
        .iter()
        .map(|&x| {
            Camera::rectified(
                focal,
                focal,
                cx,
                cy,
                [x, T::zero(), T::zero()],
                width,
                height,
            )
        })
        .collect();
    let unit = if centers_x.len() >= 2 {
        centers_x[1] - centers_x[0]
    } else {
        T::one()
    };
    CameraRig::new(cameras, unit)
}

// --- small 3x3 helpers -----------------------------------------------------

fn identity<T: Scalar>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

fn transpose<T: Scalar>(m: &Mat3<T>) -> Mat3<T> {
    [
        [m[0][0], m[1][0], m[2][0]],
        [m[0][1], m[1][1], m[2][1]],
        [m[0][2], m[1][2], m[2][2]],
    ]
}

fn mat_mul<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn mat_vec<T: Scalar>(m: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn sub<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm<T: Scalar>(a: &Vec3<T>) -> T {
    dot(a, a).sqrt()
}
