//! Randomized invariant suites, one per documented property. Each runs 100
//! deterministic cases and reports the first counterexample.

use std::collections::BTreeSet;

use lf_core::config::PipelineParams;
use lf_core::descriptor::{
    l1_distance, sobel_descriptor_field, sobel_responses, DescriptorField, DescriptorKind,
};
use lf_core::disparity::{
    fill_gaps, map_disparity, map_disparity_with, median_filter_disparity, static_ray_variance,
    CandidateSet, EstimatorParams, PriorSource, RayInputs,
};
use lf_core::geometry::{
    plane_warp, rectified_rig, reproject_pixel, Camera, CameraRig, Mat3, PixelCoord, RayWarper,
};
use lf_core::io::{
    load_frame, quantize_u8, read_disparity_pfm, read_gray_png, read_u8_png, write_disparity_pfm,
    write_gray_png, write_u8_png, DisparityRaster, LightFieldFrame,
};
use lf_core::pipeline::{process_frame, write_artifacts, FrameResult};
use lf_core::raster::{nearest_pixel, Image, Raster};
use lf_core::refocus::{synthesize_refocused, RefocusParams};
use lf_core::segmentation::{
    assignment_energy, best_static_assignment, refine_labels_estep, threshold_labels, EStepParams,
    Label, LabelMap,
};
use lf_core::support_mesh::{
    build_triangulation, match_support_grid, match_view_pair, recover_occluded_support,
    MatchParams, Origin, SupportPoint,
};
use lf_core::synth::{render_frame, GroundTruth, Plane, RigSpec, SceneSpec, Texture, TextureKind};
use proptest::prelude::any;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{depth_for, random_small_scene};

pub type Suite = (&'static str, fn() -> Result<(), String>);

pub const CASES: u32 = 100;

pub fn all() -> Vec<Suite> {
    vec![
        (
            "reproject_identity_at_reference",
            reproject_identity_at_reference,
        ),
        ("rectified_shift_is_alpha_d", rectified_shift_is_alpha_d),
        (
            "plane_warp_matches_reprojection",
            plane_warp_matches_reprojection,
        ),
        (
            "displacement_increases_with_disparity",
            displacement_increases_with_disparity,
        ),
        ("pfm_and_png_round_trip", pfm_and_png_round_trip),
        (
            "loaded_masks_are_probabilities",
            loaded_masks_are_probabilities,
        ),
        ("estep_fixed_point", estep_fixed_point),
        ("estep_keeps_a_static_view", estep_keeps_a_static_view),
        ("estep_idempotent", estep_idempotent),
        (
            "support_points_bounds_and_origin",
            support_points_bounds_and_origin,
        ),
        ("triangulation_covers_image", triangulation_covers_image),
        (
            "mesh_prior_continuous_on_edges",
            mesh_prior_continuous_on_edges,
        ),
        (
            "matches_are_left_right_consistent",
            matches_are_left_right_consistent,
        ),
        (
            "map_independent_of_candidate_order",
            map_independent_of_candidate_order,
        ),
        ("likelihood_minimal_at_truth", likelihood_minimal_at_truth),
        ("intensity_scaling", intensity_scaling),
        ("filters_stay_in_range", filters_stay_in_range),
        (
            "refocus_is_convex_combination",
            refocus_is_convex_combination,
        ),
        ("gap_mask_definition", gap_mask_definition),
        (
            "fewer_dynamic_labels_more_coverage",
            fewer_dynamic_labels_more_coverage,
        ),
        (
            "rendered_parallax_matches_geometry",
            rendered_parallax_matches_geometry,
        ),
        ("masks_match_footprints", masks_match_footprints),
        (
            "results_independent_of_workers",
            results_independent_of_workers,
        ),
        ("intermediates_written", intermediates_written),
    ]
}

type Case = Result<(), TestCaseError>;

/// Runs `case` on `CASES` seeds drawn from a fixed-seed runner.
fn check(case: impl Fn(&mut ChaCha8Rng) -> Case) -> Result<(), String> {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner
        .run(&any::<u64>(), |seed| {
            case(&mut ChaCha8Rng::seed_from_u64(seed))
        })
        .map_err(|e| e.to_string())
}

fn fail(msg: String) -> Case {
    Err(TestCaseError::fail(msg))
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Case {
    if ok {
        Ok(())
    } else {
        fail(msg())
    }
}

// --- random inputs ----------------------------------------------------------

fn rotation(axis: [f64; 3], angle: f64) -> Mat3<f64> {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn mul(a: &Mat3<f64>, b: &Mat3<f64>) -> Mat3<f64> {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn unit_vec(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ]
}

/// Linear rig in an arbitrary world frame. All cameras share a random base
/// orientation; with `perturb` each also gets its own small rotation.
fn random_rig(rng: &mut ChaCha8Rng, perturb: bool) -> CameraRig<f64> {
    let k_views = rng.random_range(2..=6);
    let fx = rng.random_range(50.0..800.0);
    let fy = fx * rng.random_range(0.9..1.1);
    let (w, h) = (rng.random_range(16..400), rng.random_range(16..300));
    let cx = w as f64 * rng.random_range(0.3..0.7);
    let cy = h as f64 * rng.random_range(0.3..0.7);
    let base = rotation(unit_vec(rng), rng.random_range(-3.0..3.0));
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let axis_cam = [
        side,
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    ];
    // World direction of the array: base^T * axis_cam.
    let axis: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| base[j][i] * axis_cam[j]).sum());
    let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
    let axis = axis.map(|a| a / norm);
    let origin = unit_vec(rng);
    let unit = rng.random_range(0.02..0.3);
    let mut offsets = vec![0.0, unit];
    while offsets.len() < k_views {
        let last = *offsets.last().unwrap();
        offsets.push(last + unit * rng.random_range(0.5..2.0));
    }
    let cameras = offsets
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let r = if perturb && k > 0 {
                mul(
                    &rotation(unit_vec(rng), rng.random_range(-0.05..0.05)),
                    &base,
                )
            } else {
                base
            };
            let c: [f64; 3] = std::array::from_fn(|i| origin[i] + axis[i] * s);
            let t: [f64; 3] = std::array::from_fn(|i| -(0..3).map(|j| r[i][j] * c[j]).sum::<f64>());
            Camera {
                fx,
                fy,
                cx,
                cy,
                rotation: r,
                translation: t,
                width: w,
                height: h,
            }
        })
        .collect();
    CameraRig::new(cameras, unit).expect("random rig is valid")
}

fn random_pixel(rng: &mut ChaCha8Rng, rig: &CameraRig<f64>) -> PixelCoord<f64> {
    let (w, h) = rig.image_size();
    PixelCoord::new(
        rng.random_range(0.0..w as f64),
        rng.random_range(0.0..h as f64),
    )
}

/// Disparity keeping the scene at least 2 m away.
fn random_disparity(rng: &mut ChaCha8Rng, rig: &CameraRig<f64>) -> f64 {
    let d_far = rig.disparity_of(2.0).min(64.0);
    if rng.random_bool(0.1) {
        0.0
    } else {
        rng.random_range(0.0..d_far)
    }
}

fn rendered(rng: &mut ChaCha8Rng) -> (SceneSpec, LightFieldFrame, GroundTruth, CameraRig<f64>) {
    let spec = random_small_scene(rng.random());
    let (frame, truth) = render_frame(&spec, rng.random(), 0).expect("scene renders");
    let rig = spec.camera_rig().expect("rig");
    (spec, frame, truth, rig)
}

fn fields(frame: &LightFieldFrame, kind: DescriptorKind) -> Vec<DescriptorField> {
    frame
        .images
        .iter()
        .map(|i| sobel_descriptor_field(i, kind).unwrap())
        .collect()
}

fn thresholded(frame: &LightFieldFrame, tau: f32) -> Vec<LabelMap> {
    frame
        .prob_masks
        .iter()
        .map(|m| threshold_labels(m, tau).unwrap())
        .collect()
}

/// Ground-truth disparity, jittered by up to one unit and partly invalidated.
fn noisy_disparity(rng: &mut ChaCha8Rng, truth: &GroundTruth, invalid: f64) -> DisparityRaster {
    let mut d = truth.disparity.clone();
    let (w, h) = d.dims();
    for y in 0..h {
        for x in 0..w {
            if rng.random_bool(invalid) {
                d.set(x, y, None);
            } else if let Some(v) = d.get(x, y) {
                d.set(x, y, Some((v + rng.random_range(-1.0f32..1.0)).max(0.0)));
            }
        }
    }
    d
}

fn bits(d: &DisparityRaster) -> Vec<u32> {
    d.values.as_slice().iter().map(|v| v.to_bits()).collect()
}

// --- rig_geometry -----------------------------------------------------------

fn reproject_identity_at_reference() -> Result<(), String> {
    check(|rng| {
        let flag = rng.random_bool(0.5);
        let rig = random_rig(rng, flag);
        let p = random_pixel(rng, &rig);
        let d = rng.random_range(0.0..100.0);
        let q = reproject_pixel(&rig, p, d, rig.reference_index());
        ensure(q == p, || format!("{p:?} at d={d} maps to {q:?}"))
    })
}

fn rectified_shift_is_alpha_d() -> Result<(), String> {
    check(|rng| {
        let k_views = rng.random_range(2..=6);
        let (w, h) = (rng.random_range(16..640), rng.random_range(16..480));
        let focal = rng.random_range(50.0..1000.0);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut x = 0.0;
        let unit = rng.random_range(0.02..0.3);
        let cameras = (0..k_views)
            .map(|k| {
                if k == 1 {
                    x = unit;
                } else if k > 1 {
                    x += unit * rng.random_range(0.5..2.0);
                }
                Camera::rectified(
                    focal,
                    focal,
                    w as f64 / 2.0,
                    h as f64 / 2.0,
                    [side * x, 0.0, 0.0],
                    w,
                    h,
                )
            })
            .collect();
        let rig = CameraRig::new(cameras, unit).unwrap();
        let p = random_pixel(rng, &rig);
        let d = rng.random_range(0.0..64.0);
        let sign = rig.shift_sign();
        for k in 0..k_views {
            let q = reproject_pixel(&rig, p, d, k);
            let expected = p.u + sign * rig.baseline_ratio(k) * d;
            ensure(
                (q.u - expected).abs() < 1e-9 && (q.v - p.v).abs() < 1e-9,
                || format!("view {k}: {p:?} at d={d} -> {q:?}, expected u={expected}"),
            )?;
        }
        ensure(sign == -side, || {
            format!("shift sign {sign} for an array towards {side}")
        })
    })
}

fn plane_warp_matches_reprojection() -> Result<(), String> {
    check(|rng| {
        let flag = rng.random_bool(0.7);
        let rig = random_rig(rng, flag);
        let d = random_disparity(rng, &rig);
        for k in 0..rig.len() {
            let hmg = plane_warp(&rig, k, d);
            for _ in 0..8 {
                let p = random_pixel(rng, &rig);
                let a = hmg.apply(p);
                let b = reproject_pixel(&rig, p, d, k);
                ensure(a.distance(&b) < 1e-6, || {
                    format!("view {k}, d={d}: homography {a:?}, reprojection {b:?}")
                })?;
            }
        }
        Ok(())
    })
}

fn displacement_increases_with_disparity() -> Result<(), String> {
    check(|rng| {
        let flag = rng.random_bool(0.5);
        let rig = random_rig(rng, flag);
        let p = random_pixel(rng, &rig);
        let d_far = rig.disparity_of(2.0).min(64.0);
        let mut ds: Vec<f64> = (0..6).map(|_| rng.random_range(1e-3..d_far)).collect();
        ds.push(0.0);
        ds.sort_by(f64::total_cmp);
        ds.dedup();
        for k in 1..rig.len() {
            let at_infinity = reproject_pixel(&rig, p, 0.0, k);
            let disp: Vec<f64> = ds
                .iter()
                .map(|&d| reproject_pixel(&rig, p, d, k).distance(&at_infinity))
                .collect();
            ensure(disp.windows(2).all(|w| w[1] > w[0]), || {
                format!("view {k}: displacements {disp:?} for disparities {ds:?}")
            })?;
        }
        Ok(())
    })
}

// --- lightfield_io ----------------------------------------------------------

fn pfm_and_png_round_trip() -> Result<(), String> {
    check(|rng| {
        let dir = tempfile::tempdir().unwrap();
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let invalid = rng.random_range(0.0..1.0);
        let values = Raster::from_fn(w, h, |_, _| {
            if rng.random_bool(invalid) {
                DisparityRaster::INVALID
            } else {
                rng.random_range(0.0f32..64.0)
            }
        });
        let d = DisparityRaster::from_values(values);
        let pfm = dir.path().join("d.pfm");
        write_disparity_pfm(&d, &pfm).unwrap();
        let back = read_disparity_pfm(&pfm).unwrap();
        ensure(bits(&back) == bits(&d), || {
            "PFM round trip changed values".into()
        })?;

        let bytes = Raster::from_fn(w, h, |_, _| rng.random::<u8>());
        let png = dir.path().join("b.png");
        write_u8_png(&png, &bytes).unwrap();
        ensure(read_u8_png(&png).unwrap() == bytes, || {
            "8-bit PNG round trip changed values".into()
        })?;
        let img: Image = bytes.map(|&b| b as f32 / 255.0);
        write_gray_png(&png, &img).unwrap();
        ensure(read_gray_png(&png).unwrap() == img, || {
            "gray PNG round trip changed values".into()
        })
    })
}

fn loaded_masks_are_probabilities() -> Result<(), String> {
    check(|rng| {
        let dir = tempfile::tempdir().unwrap();
        let k_views = rng.random_range(2..=4);
        let (w, h) = (rng.random_range(1..24), rng.random_range(1..24));
        let centers: Vec<f64> = (0..k_views).map(|k| 0.1 * k as f64).collect();
        let rig = rectified_rig(50.0, w, h, &centers).unwrap();
        let mut gray_masks = Vec::new();
        for k in 0..k_views {
            let random_image = |rng: &mut ChaCha8Rng| -> image::DynamicImage {
                match rng.random_range(0..3) {
                    0 => image::DynamicImage::ImageLuma8(image::GrayImage::from_fn(
                        w as u32,
                        h as u32,
                        |_, _| image::Luma([rng.random()]),
                    )),
                    1 => image::DynamicImage::ImageRgb8(image::RgbImage::from_fn(
                        w as u32,
                        h as u32,
                        |_, _| image::Rgb(rng.random()),
                    )),
                    _ => image::DynamicImage::ImageRgba8(image::RgbaImage::from_fn(
                        w as u32,
                        h as u32,
                        |_, _| image::Rgba(rng.random()),
                    )),
                }
            };
            random_image(rng)
                .save(dir.path().join(format!("cam_{k}.png")))
                .unwrap();
            let mask = random_image(rng);
            gray_masks.push(match &mask {
                image::DynamicImage::ImageLuma8(g) => Some(g.clone()),
                _ => None,
            });
            mask.save(dir.path().join(format!("mask_{k}.png"))).unwrap();
        }
        let frame = load_frame(dir.path(), &rig, 0, rng.random_bool(0.5)).unwrap();
        for (k, m) in frame.prob_masks.iter().enumerate() {
            ensure(m.as_slice().iter().all(|p| (0.0..=1.0).contains(p)), || {
                format!("mask {k} leaves [0, 1]")
            })?;
            for (x, y, v) in (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y, 0)))
                .map(|(x, y, _)| (x, y, *m.get(x, y)))
            {
                if let Some(g) = &gray_masks[k] {
                    let want = g.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0;
                    ensure(v == want, || {
                        format!("mask {k} at ({x}, {y}): {v} != {want}")
                    })?;
                }
            }
            ensure(
                frame.images[k]
                    .as_slice()
                    .iter()
                    .all(|p| (0.0..=1.0).contains(p)),
                || format!("image {k} leaves [0, 1]"),
            )?;
        }
        Ok(())
    })
}

// --- segmentation -----------------------------------------------------------

/// Every admissible labeling with its energy, computed from scratch.
fn enumerate_energies(descs: &[Vec<f32>], p: &[f64], beta: f64) -> Vec<(f64, u32)> {
    let m = descs.len();
    (1u32..(1 << m))
        .map(|mask| {
            let chosen: Vec<&Vec<f32>> = (0..m)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| &descs[i])
                .collect();
            let n = chosen.len() as f64;
            let dim = descs[0].len();
            let mean: Vec<f64> = (0..dim)
                .map(|j| chosen.iter().map(|c| c[j] as f64).sum::<f64>() / n)
                .collect();
            let var = chosen
                .iter()
                .map(|c| {
                    (0..dim)
                        .map(|j| (c[j] as f64 - mean[j]).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n;
            let prior: f64 = (0..m)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        -(1.0 - p[i]).ln()
                    } else {
                        -p[i].ln()
                    }
                })
                .sum();
            (beta * var + prior, mask)
        })
        .collect()
}

fn random_bundle(rng: &mut ChaCha8Rng, consistent: bool) -> (Vec<Vec<f32>>, Vec<f64>) {
    let m = rng.random_range(1..=7);
    let dim = rng.random_range(1..=16);
    let center: Vec<f32> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut descs = Vec::new();
    let mut p = Vec::new();
    for i in 0..m {
        let is_static = !consistent || i == 0 || rng.random_bool(0.6);
        if consistent && is_static {
            descs.push(
                center
                    .iter()
                    .map(|c| c + rng.random_range(-1e-3..1e-3))
                    .collect(),
            );
            p.push(rng.random_range(0.0..0.3));
        } else if consistent {
            descs.push(
                center
                    .iter()
                    .map(|c| c + rng.random_range(2.0..4.0))
                    .collect(),
            );
            p.push(rng.random_range(0.7..1.0));
        } else {
            descs.push((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect());
            p.push(rng.random_range(0.0..1.0));
        }
    }
    (descs, p)
}

fn estep_fixed_point() -> Result<(), String> {
    check(|rng| {
        let flag = rng.random_bool(0.7);
        let (descs, p) = random_bundle(rng, flag);
        let params = EStepParams {
            beta: rng.random_range(1.0..100.0),
            ..Default::default()
        };
        let refs: Vec<&[f32]> = descs.iter().map(|d| d.as_slice()).collect();
        let got = best_static_assignment(&refs, &p, &params).unwrap();
        let threshold = (0..p.len())
            .filter(|&i| (p[i] as f32) < params.tau)
            .fold(0u32, |a, i| a | 1 << i);
        let mut energies = enumerate_energies(&descs, &p, params.beta);
        energies.sort_by(|a, b| a.0.total_cmp(&b.0));
        let best = energies[0].0;
        let margin = 1e-9 * best.abs().max(1.0);
        let near: Vec<u32> = energies
            .iter()
            .take_while(|e| e.0 <= best + margin)
            .map(|e| e.1)
            .collect();
        if threshold != 0 && near == [threshold] {
            ensure(got == threshold, || {
                format!("threshold labels {threshold:b} minimize, update chose {got:b}")
            })
        } else {
            ensure(near.contains(&got), || {
                format!("update chose {got:b}, minimizers {near:?}")
            })
        }
    })
}

fn estep_keeps_a_static_view() -> Result<(), String> {
    check(|rng| {
        let flag = rng.random_bool(0.5);
        let (descs, mut p) = random_bundle(rng, flag);
        for v in p.iter_mut() {
            match rng.random_range(0..4) {
                0 => *v = 0.0,
                1 => *v = 1.0,
                _ => {}
            }
        }
        let params = EStepParams {
            beta: rng.random_range(0.1..100.0),
            tau: rng.random_range(0.05f32..0.95),
            probability_floor: if rng.random_bool(0.5) { 0.0 } else { 1e-6 },
        };
        let refs: Vec<&[f32]> = descs.iter().map(|d| d.as_slice()).collect();
        let got = best_static_assignment(&refs, &p, &params).unwrap();
        let e = assignment_energy(&refs, &p, got, params.beta, params.probability_floor);
        ensure(got != 0 && got < 1 << p.len() && !e.is_nan(), || {
            format!("chose {got:b} for {} views", p.len())
        })
    })
}

fn estep_idempotent() -> Result<(), String> {
    check(|rng| {
        let (_, frame, truth, rig) = rendered(rng);
        let params = EStepParams {
            beta: rng.random_range(1.0..200.0),
            tau: rng.random_range(0.1f32..0.9),
            probability_floor: if rng.random_bool(0.5) { 0.0 } else { 1e-6 },
        };
        let descr = fields(&frame, DescriptorKind::Likelihood);
        let warper = RayWarper::new(&rig);
        let labels = thresholded(&frame, params.tau);
        let disparity = noisy_disparity(rng, &truth, 0.2);
        let once =
            refine_labels_estep(&frame, &labels, &disparity, &descr, &warper, &params).unwrap();
        let twice =
            refine_labels_estep(&frame, &once, &disparity, &descr, &warper, &params).unwrap();
        for k in 0..once.len() {
            ensure(once[k].labels == twice[k].labels, || {
                format!("view {k} changed on the second update")
            })?;
        }
        Ok(())
    })
}

// --- support_mesh -----------------------------------------------------------

fn support_points_bounds_and_origin() -> Result<(), String> {
    check(|rng| {
        let (_, frame, _, rig) = rendered(rng);
        let tau = rng.random_range(0.1f32..0.9);
        let labels = thresholded(&frame, tau);
        let descr = fields(&frame, DescriptorKind::Match);
        let params = MatchParams {
            grid_step: rng.random_range(1..6),
            d_max: rng.random_range(2.0..32.0),
            ratio: rng.random_range(0.5f32..1.0),
        };
        let (w, h) = frame.dims();
        let mut points = match_support_grid(&descr[0], &descr[1], &labels[0], &rig, &params);
        points.extend(recover_occluded_support(&labels, &descr, &rig, &params));
        for p in &points {
            ensure(
                p.u < w && p.v < h && p.d >= 0.0 && p.d <= params.d_max + 1e-9,
                || format!("{p:?} out of bounds"),
            )?;
            let dynamic = !labels[0].is_static(p.u, p.v);
            match p.origin {
                Origin::Reference => ensure(!dynamic, || format!("{p:?} lies on a dynamic pixel"))?,
                Origin::Recovered(k) => ensure(dynamic && k >= 1 && k < rig.len(), || {
                    format!("{p:?} lies on a static pixel")
                })?,
            }
        }
        Ok(())
    })
}

fn random_points(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<SupportPoint> {
    let n = rng.random_range(0..80);
    let mut seen = BTreeSet::new();
    let snap = rng.random_bool(0.3);
    (0..n)
        .filter_map(|_| {
            let (mut u, mut v) = (rng.random_range(0..w), rng.random_range(0..h));
            if snap {
                // Put points on the border and on a coarse lattice, to provoke
                // collinear and cocircular configurations.
                u = (u / 8 * 8).min(w - 1);
                v = if rng.random_bool(0.2) {
                    0
                } else {
                    (v / 8 * 8).min(h - 1)
                };
            }
            seen.insert((u, v))
                .then(|| SupportPoint::new(u, v, rng.random_range(0.0..32.0), Origin::Reference))
        })
        .collect()
}

fn triangulation_covers_image() -> Result<(), String> {
    check(|rng| {
        let (w, h) = (rng.random_range(2..90), rng.random_range(2..70));
        let points = random_points(rng, w, h);
        let mesh = match build_triangulation(&points, w, h) {
            Ok(mesh) => mesh,
            Err(e) if points.len() < 3 => {
                return ensure(matches!(e, lf_core::Error::Mesh(_)), || e.to_string())
            }
            Err(e) => return fail(format!("{} points: {e}", points.len())),
        };
        let tri = &mesh.triangulation;
        let area: f64 = (0..tri.triangles.len())
            .map(|t| {
                let [a, b, c] = tri.corner(t);
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
            })
            .sum();
        let full = ((w - 1) * (h - 1)) as f64;
        ensure((area - full).abs() < 1e-6 * full.max(1.0), || {
            format!("triangles cover {area}, image {full}")
        })?;
        for y in 0..h {
            for x in 0..w {
                let t = mesh.triangle_at(x, y);
                ensure(tri.contains(t, [x as f64, y as f64]), || {
                    format!("pixel ({x}, {y}) outside its triangle {t}")
                })?;
            }
        }
        Ok(())
    })
}

fn mesh_prior_continuous_on_edges() -> Result<(), String> {
    check(|rng| {
        let (w, h) = (rng.random_range(8..90), rng.random_range(8..70));
        let mut points = random_points(rng, w, h);
        while points.len() < 3 {
            points.push(SupportPoint::new(
                points.len() + 1,
                points.len() * 2 + 1,
                3.0,
                Origin::Reference,
            ));
        }
        let mesh = build_triangulation(&points, w, h).unwrap();
        let tri = &mesh.triangulation;
        let mut shared = Vec::new();
        for (t, a) in tri.triangles.iter().enumerate() {
            for (s, b) in tri.triangles.iter().enumerate().skip(t + 1) {
                let common: Vec<usize> = a.iter().copied().filter(|v| b.contains(v)).collect();
                if common.len() == 2 {
                    shared.push((t, s, common[0], common[1]));
                }
            }
        }
        for _ in 0..100 {
            let Some(&(t, s, i, j)) = shared.choose(rng) else {
                break;
            };
            let lambda = rng.random_range(0.0..1.0);
            let (a, b) = (tri.vertices[i], tri.vertices[j]);
            let q = [a[0] + lambda * (b[0] - a[0]), a[1] + lambda * (b[1] - a[1])];
            let (mu_t, mu_s) = (
                mesh.interpolate_in(t, q[0], q[1]),
                mesh.interpolate_in(s, q[0], q[1]),
            );
            ensure((mu_t - mu_s).abs() < 1e-6, || {
                format!("edge point {q:?}: {mu_t} vs {mu_s}")
            })?;
        }
        Ok(())
    })
}

/// First minimum over the shifts, second-lowest cost.
fn scan_oracle(
    src: &[f32],
    dst: &DescriptorField,
    u: usize,
    v: usize,
    dir: i64,
    max_shift: usize,
) -> Option<(usize, f32, f32)> {
    let mut costs: Vec<(usize, f32)> = Vec::new();
    for s in 0..=max_shift {
        let ud = u as i64 + dir * s as i64;
        if ud >= 0 && (ud as usize) < dst.width() {
            if let Some(d) = dst.get(ud as usize, v) {
                costs.push((s, l1_distance(src, d)));
            }
        }
    }
    let best = costs
        .iter()
        .copied()
        .reduce(|a, b| if b.1 < a.1 { b } else { a })?;
    let mut sorted: Vec<f32> = costs.iter().map(|c| c.1).collect();
    sorted.sort_by(f32::total_cmp);
    Some((
        best.0,
        best.1,
        sorted.get(1).copied().unwrap_or(f32::INFINITY),
    ))
}

fn matches_are_left_right_consistent() -> Result<(), String> {
    check(|rng| {
        let (_, frame, _, _) = rendered(rng);
        let descr = fields(&frame, DescriptorKind::Match);
        let (src, dst) = if rng.random_bool(0.5) { (0, 1) } else { (2, 1) };
        let dir = if src < dst { -1 } else { 1 };
        let max_shift = rng.random_range(1..20);
        let ratio = rng.random_range(0.5f32..1.0);
        let matches = match_view_pair(
            &descr[src],
            &descr[dst],
            None,
            dir,
            max_shift,
            rng.random_range(1..6),
            ratio,
        );
        for m in matches {
            let desc = descr[src].get(m.u, m.v).unwrap();
            let (s, best, second) =
                scan_oracle(desc, &descr[dst], m.u, m.v, dir, max_shift).unwrap();
            ensure(s == m.shift && best < ratio * second, || {
                format!("{m:?} is not the ratio-tested best shift {s}")
            })?;
            let ud = (m.u as i64 + dir * s as i64) as usize;
            let back = descr[dst].get(ud, m.v).unwrap();
            let (s_back, _, _) = scan_oracle(back, &descr[src], ud, m.v, -dir, max_shift).unwrap();
            ensure(s_back.abs_diff(s) <= 1, || {
                format!("{m:?}: reverse match at shift {s_back}")
            })?;
        }
        Ok(())
    })
}

// --- disparity_map ----------------------------------------------------------

/// Cheap per-pixel hash for deterministic candidate sets.
fn hash(seed: u64, x: usize, y: usize) -> u64 {
    let mut z = seed
        ^ (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn map_independent_of_candidate_order() -> Result<(), String> {
    check(|rng| {
        let (_, mut frame, _, rig) = rendered(rng);
        if rng.random_bool(0.5) {
            // Coarse intensities make equal variances, and so ties, common.
            for img in frame.images.iter_mut() {
                *img = img.map(|v| (v * 3.0).round() / 3.0);
            }
        }
        let descr = fields(&frame, DescriptorKind::Likelihood);
        let labels = thresholded(&frame, 0.5);
        let warper = RayWarper::new(&rig);
        let rays = RayInputs {
            descriptors: &descr,
            labels: &labels,
            warper: &warper,
        };
        let params = EstimatorParams {
            d_max: 8.0,
            step: rig.candidate_step(),
            ..Default::default()
        };
        let seed: u64 = rng.random();
        let ascending = move |x: usize, y: usize| -> CandidateSet {
            let h = hash(seed, x, y);
            (0..=32)
                .filter(|i| h >> (i % 64) & 1 == 1 || i % 7 == 0)
                .map(|i| (i as f64 * 0.25, -(((h >> (i % 61)) & 1) as f64)))
                .collect()
        };
        let reversed = move |x: usize, y: usize| -> CandidateSet {
            ascending(x, y).into_iter().rev().collect()
        };
        let shuffled = move |x: usize, y: usize| -> CandidateSet {
            let mut c = ascending(x, y);
            c.shuffle(&mut ChaCha8Rng::seed_from_u64(hash(!seed, x, y)));
            c
        };
        let a = map_disparity_with(&rays, &ascending, &params).unwrap();
        let b = map_disparity_with(&rays, &reversed, &params).unwrap();
        let c = map_disparity_with(&rays, &shuffled, &params).unwrap();
        ensure(
            bits(&a.disparity) == bits(&b.disparity) && bits(&a.disparity) == bits(&c.disparity),
            || "candidate order changed the MAP disparity".into(),
        )
    })
}

fn likelihood_minimal_at_truth() -> Result<(), String> {
    check(|rng| {
        let rig_spec = RigSpec {
            focal: 80.0,
            width: 64,
            height: 48,
            centers: vec![0.0, 0.1, 0.2, 0.3, 0.4],
        };
        let step = 0.25;
        // Whole-pixel shifts in every view, so nearest-sampled rendering is exact.
        let d_true = rng.random_range(1..=8) as f64;
        let mut spec = SceneSpec::new(rig_spec.clone());
        let mut texture = Texture::new(TextureKind::Noise, rng.random());
        texture.scale = Some(rng.random_range(1.0..3.0));
        spec.background.push(Plane {
            depth: depth_for(&rig_spec, d_true),
            texture,
            footprint: None,
        });
        let (frame, _) = render_frame(&spec, rng.random(), 0).unwrap();
        let rig = spec.camera_rig().unwrap();
        let descr = fields(&frame, DescriptorKind::Likelihood);
        let labels = vec![LabelMap::all(64, 48, Label::Static); 5];
        let warper = RayWarper::new(&rig);
        let rays = RayInputs {
            descriptors: &descr,
            labels: &labels,
            warper: &warper,
        };
        let (gx, gy) = sobel_responses(&frame.images[0]);
        let (mut textured, mut good) = (0usize, 0usize);
        for y in 1..47 {
            for x in 1..63 {
                if gx.get(x, y).abs() + gy.get(x, y).abs() < 0.1 {
                    continue;
                }
                let (v_true, n_true) = static_ray_variance(&rays, x, y, d_true);
                if n_true < 2 {
                    continue;
                }
                textured += 1;
                let ok = (0..=48)
                    .map(|i| i as f64 * step)
                    .filter(|d| (d - d_true).abs() >= 2.0 * step - 1e-9)
                    .all(|d| {
                        let (v, n) = static_ray_variance(&rays, x, y, d);
                        n < 2 || v_true <= v
                    });
                good += ok as usize;
            }
        }
        ensure(
            textured > 0 && good as f64 >= 0.99 * textured as f64,
            || format!("d={d_true}: truth minimal at {good}/{textured} textured pixels"),
        )
    })
}

fn intensity_scaling() -> Result<(), String> {
    check(|rng| {
        let (_, frame, _, rig) = rendered(rng);
        let c = [0.25f32, 0.5, 2.0, 4.0][rng.random_range(0..4)];
        let mut scaled = frame.clone();
        for img in scaled.images.iter_mut() {
            *img = img.map(|v| v * c);
        }
        let labels = thresholded(&frame, 0.5);
        let warper = RayWarper::new(&rig);
        let (da, db) = (
            fields(&frame, DescriptorKind::Likelihood),
            fields(&scaled, DescriptorKind::Likelihood),
        );
        let a = RayInputs {
            descriptors: &da,
            labels: &labels,
            warper: &warper,
        };
        let b = RayInputs {
            descriptors: &db,
            ..a
        };
        for _ in 0..50 {
            let (x, y) = (rng.random_range(0..64), rng.random_range(0..48));
            let d = rng.random_range(0.0..8.0);
            let (va, na) = static_ray_variance(&a, x, y, d);
            let (vb, nb) = static_ray_variance(&b, x, y, d);
            let c2 = (c as f64).powi(2);
            ensure(
                na == nb && (vb - c2 * va).abs() <= 1e-12 * vb.abs().max(1e-300),
                || format!("({x}, {y}) at d={d}: variance {va} became {vb} under scale {c}"),
            )?;
        }
        let params = EstimatorParams {
            d_max: 8.0,
            step: rig.candidate_step(),
            ..Default::default()
        };
        let ma = map_disparity(&a, PriorSource::Uniform, &params).unwrap();
        let mb = map_disparity(&b, PriorSource::Uniform, &params).unwrap();
        ensure(bits(&ma.disparity) == bits(&mb.disparity), || {
            format!("argmin changed under scale {c}")
        })
    })
}

fn filters_stay_in_range() -> Result<(), String> {
    check(|rng| {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let invalid = rng.random_range(0.0..1.0);
        let mut d = DisparityRaster::invalid(w, h);
        for y in 0..h {
            for x in 0..w {
                if !rng.random_bool(invalid) {
                    d.set(x, y, Some(rng.random_range(0.0f32..32.0)));
                }
            }
        }
        let window = 2 * rng.random_range(1..5) + 1;
        let filled = fill_gaps(&d);
        let median = median_filter_disparity(&d, window).unwrap();
        let both = median_filter_disparity(&filled, window).unwrap();
        let Some((lo, hi)) = d.valid_range() else {
            return ensure(
                filled.valid_count() == 0 && median.valid_count() == 0,
                || "values from nothing".into(),
            );
        };
        for (name, out) in [
            ("fill", &filled),
            ("median", &median),
            ("fill+median", &both),
        ] {
            ensure(
                out.values
                    .as_slice()
                    .iter()
                    .filter(|v| v.is_finite())
                    .all(|&v| v >= lo && v <= hi),
                || format!("{name} left [{lo}, {hi}]"),
            )?;
        }
        Ok(())
    })
}

// --- refocus ----------------------------------------------------------------

fn bilinear_oracle(img: &Image, u: f64, v: f64) -> Option<f64> {
    let (w, h) = img.dims();
    if u < 0.0 || v < 0.0 || u > (w - 1) as f64 || v > (h - 1) as f64 {
        return None;
    }
    let (x0, y0) = (u.floor(), v.floor());
    let mut acc = 0.0;
    for (dx, dy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let wgt = (1.0 - (u - (x0 + dx)).abs()) * (1.0 - (v - (y0 + dy)).abs());
        if wgt > 0.0 {
            acc += wgt * *img.get((x0 + dx) as usize, (y0 + dy) as usize) as f64;
        }
    }
    Some(acc)
}

fn refocus_case(
    rng: &mut ChaCha8Rng,
) -> (
    LightFieldFrame,
    Vec<LabelMap>,
    DisparityRaster,
    RayWarper<f64>,
) {
    let (_, frame, truth, rig) = rendered(rng);
    let mut labels = thresholded(&frame, rng.random_range(0.1f32..0.9));
    let flip = rng.random_range(0.0..0.3);
    for l in labels.iter_mut() {
        for v in l.labels.as_mut_slice() {
            if rng.random_bool(flip) {
                *v = if v.is_static() {
                    Label::Dynamic
                } else {
                    Label::Static
                };
            }
        }
    }
    let invalid = rng.random_range(0.0..0.3);
    let disparity = noisy_disparity(rng, &truth, invalid);
    (frame, labels, disparity, RayWarper::new(&rig))
}

fn refocus_is_convex_combination() -> Result<(), String> {
    check(|rng| {
        let (frame, labels, disparity, warper) = refocus_case(rng);
        let out = synthesize_refocused(
            &frame,
            &labels,
            &warper,
            &disparity,
            &RefocusParams::default(),
        )
        .unwrap();
        let (w, h) = frame.dims();
        for y in 0..h {
            for x in 0..w {
                if labels[0].is_static(x, y) || *out.gap_mask.get(x, y) {
                    continue;
                }
                let d = disparity.get(x, y).unwrap() as f64;
                let samples: Vec<f64> = (0..frame.num_views())
                    .filter_map(|k| {
                        let (u, v) = warper.warp(x as f64, y as f64, d, k);
                        let (px, py) = nearest_pixel(u, v, w, h)?;
                        labels[k]
                            .is_static(px, py)
                            .then(|| bilinear_oracle(&frame.images[k], u, v))
                            .flatten()
                    })
                    .collect();
                let got = *out.image.get(x, y) as f64;
                let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                ensure(samples.len() == *out.coverage.get(x, y) as usize, || {
                    format!(
                        "({x}, {y}): coverage {} but {} static rays",
                        out.coverage.get(x, y),
                        samples.len()
                    )
                })?;
                ensure(got >= lo - 1e-6 && got <= hi + 1e-6, || {
                    format!("({x}, {y}): {got} outside [{lo}, {hi}]")
                })?;
            }
        }
        Ok(())
    })
}

fn gap_mask_definition() -> Result<(), String> {
    check(|rng| {
        let (frame, labels, disparity, warper) = refocus_case(rng);
        let out = synthesize_refocused(
            &frame,
            &labels,
            &warper,
            &disparity,
            &RefocusParams::default(),
        )
        .unwrap();
        let (w, h) = frame.dims();
        for y in 0..h {
            for x in 0..w {
                let want = *out.coverage.get(x, y) == 0 || !disparity.is_valid(x, y);
                ensure(*out.gap_mask.get(x, y) == want, || {
                    format!("gap mask wrong at ({x}, {y})")
                })?;
            }
        }
        Ok(())
    })
}

fn fewer_dynamic_labels_more_coverage() -> Result<(), String> {
    check(|rng| {
        let (frame, labels, disparity, warper) = refocus_case(rng);
        let keep = rng.random_range(0.0..1.0);
        let mut shrunk = labels.clone();
        for l in shrunk.iter_mut() {
            for v in l.labels.as_mut_slice() {
                if !v.is_static() && !rng.random_bool(keep) {
                    *v = Label::Static;
                }
            }
        }
        let params = RefocusParams::default();
        let before = synthesize_refocused(&frame, &labels, &warper, &disparity, &params).unwrap();
        let after = synthesize_refocused(&frame, &shrunk, &warper, &disparity, &params).unwrap();
        let (w, h) = frame.dims();
        for y in 0..h {
            for x in 0..w {
                if shrunk[0].is_static(x, y) {
                    continue;
                }
                let (b, a) = (*before.coverage.get(x, y), *after.coverage.get(x, y));
                ensure(a >= b, || {
                    format!("({x}, {y}): coverage fell from {b} to {a}")
                })?;
            }
        }
        Ok(())
    })
}

// --- synth_scene ------------------------------------------------------------

/// True when `u` is within `eps` of a rounding boundary.
fn near_half(u: f64) -> bool {
    ((u - u.floor()) - 0.5).abs() < 1e-6
}

fn rendered_parallax_matches_geometry() -> Result<(), String> {
    check(|rng| {
        let mut spec = random_small_scene(rng.random());
        spec.background.truncate(1);
        spec.noise_sigma = 0.0;
        let seed = rng.random();
        let (frame, truth) = render_frame(&spec, seed, 0).unwrap();
        let rig = spec.camera_rig().unwrap();
        let plane = &spec.background[0];
        let (w, h) = frame.dims();
        let mut checked = 0;
        for y in 0..h {
            for x in 0..w {
                let d = truth.disparity.get(x, y).unwrap() as f64;
                let want = quantize_u8(plane.texture.sample(x as i64, y as i64, seed) as f32)
                    as f32
                    / 255.0;
                ensure(*truth.background.get(x, y) == want, || {
                    format!("background wrong at ({x}, {y})")
                })?;
                for k in 0..rig.len() {
                    let q = reproject_pixel(&rig, PixelCoord::new(x as f64, y as f64), d, k);
                    if near_half(q.u) || near_half(q.v) {
                        continue;
                    }
                    let Some((px, py)) = nearest_pixel(q.u, q.v, w, h) else {
                        continue;
                    };
                    if *truth.dynamic_masks[k].get(px, py) {
                        continue;
                    }
                    let got = *frame.images[k].get(px, py);
                    ensure(got == want, || {
                        format!("({x}, {y}) in view {k} at {q:?} shows {got}, texel is {want}")
                    })?;
                    checked += 1;
                }
            }
        }
        ensure(checked > 0, || "no unoccluded rays".into())
    })
}

fn masks_match_footprints() -> Result<(), String> {
    check(|rng| {
        let mut spec = random_small_scene(rng.random());
        for o in spec.occluders.iter_mut() {
            o.shift_per_frame = [rng.random_range(-3..=3), rng.random_range(-2..=2)];
        }
        let index = rng.random_range(0..3);
        let (frame, truth) = render_frame(&spec, rng.random(), index).unwrap();
        let rig = spec.camera_rig().unwrap();
        let (w, h) = frame.dims();
        let bg_p = quantize_u8(spec.background_probability as f32) as f32 / 255.0;
        for (i, o) in spec.occluders.iter().enumerate() {
            let f = o.footprint;
            let [dx, dy] = o.shift_per_frame.map(|s| s * index as i64);
            ensure(
                truth.footprints[i] == [f[0] + dx, f[1] + dy, f[2] + dx, f[3] + dy],
                || format!("footprint {i} not displaced by the frame shift"),
            )?;
        }
        for k in 0..rig.len() {
            let alpha = rig.baseline_ratio(k);
            for y in 0..h {
                for x in 0..w {
                    let mut ambiguous = false;
                    let hit = spec.occluders.iter().zip(&truth.footprints).any(|(o, fp)| {
                        let u = x as f64 + alpha * rig.disparity_of(o.depth);
                        ambiguous |= near_half(u);
                        let i = u.round() as i64;
                        let j = y as i64;
                        i >= fp[0] && i < fp[2] && j >= fp[1] && j < fp[3]
                    });
                    if ambiguous {
                        continue;
                    }
                    ensure(*truth.dynamic_masks[k].get(x, y) == hit, || {
                        format!(
                            "view {k} ({x}, {y}): mask {} vs footprint {hit}",
                            truth.dynamic_masks[k].get(x, y)
                        )
                    })?;
                    if !hit {
                        ensure(*frame.prob_masks[k].get(x, y) == bg_p, || {
                            format!("view {k} ({x}, {y}): background probability")
                        })?;
                    }
                }
            }
        }
        Ok(())
    })
}

// --- cli --------------------------------------------------------------------

fn run_in_pool(
    threads: usize,
    frame: &LightFieldFrame,
    rig: &CameraRig<f64>,
    params: &PipelineParams,
) -> FrameResult {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| process_frame(frame, rig, params).unwrap())
}

fn small_params(rng: &mut ChaCha8Rng, rig: &CameraRig<f64>) -> PipelineParams {
    let mut params = PipelineParams::for_rig(rig);
    params.estimator.d_max = 12.0;
    params.matching.d_max = 12.0;
    params.matching.grid_step = rng.random_range(2..6);
    params.em_iters = rng.random_range(0..3);
    params.uniform_prior = rng.random_bool(0.2);
    params
}

fn results_independent_of_workers() -> Result<(), String> {
    check(|rng| {
        let (_, frame, _, rig) = rendered(rng);
        let params = small_params(rng, &rig);
        let one = run_in_pool(1, &frame, &rig, &params);
        let three = run_in_pool(3, &frame, &rig, &params);
        let same = bits(&one.disparity) == bits(&three.disparity)
            && bits(&one.raw_disparity) == bits(&three.raw_disparity)
            && one.support_points == three.support_points
            && one.refocus.image == three.refocus.image
            && one.refocus.coverage == three.refocus.coverage
            && one
                .labels
                .iter()
                .zip(&three.labels)
                .all(|(a, b)| a.labels == b.labels);
        ensure(same, || "results differ between 1 and 3 workers".into())
    })
}

fn intermediates_written() -> Result<(), String> {
    check(|rng| {
        let (_, frame, _, rig) = rendered(rng);
        let params = small_params(rng, &rig);
        let result = process_frame(&frame, &rig, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let intermediates = rng.random_bool(0.7);
        write_artifacts(dir.path(), &frame, &result, intermediates).unwrap();
        let mut want: BTreeSet<String> = ["disparity.pfm", "refocused.png", "coverage.png"]
            .map(String::from)
            .into();
        want.extend((0..frame.num_views()).map(|k| format!("labels_{k}.png")));
        if intermediates {
            want.extend(
                [
                    "support_points.png",
                    "disparity_raw.pfm",
                    "disparity_refined.pfm",
                    "gap_mask.png",
                ]
                .map(String::from),
            );
            if result.mesh.is_some() {
                want.insert("coarse_prior.pfm".into());
            }
        }
        let found: BTreeSet<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        ensure(found == want, || {
            format!("wrote {found:?}, expected {want:?}")
        })?;
        let read = |name: &str| read_disparity_pfm(&dir.path().join(name)).unwrap();
        ensure(
            bits(&read("disparity.pfm")) == bits(&result.disparity),
            || "disparity.pfm differs".into(),
        )?;
        for (k, l) in result.labels.iter().enumerate() {
            let png = read_u8_png(&dir.path().join(format!("labels_{k}.png"))).unwrap();
            ensure(png == l.to_u8(), || format!("labels_{k}.png differs"))?;
        }
        let coverage = read_u8_png(&dir.path().join("coverage.png")).unwrap();
        ensure(
            coverage == result.refocus.coverage_u8(frame.num_views()),
            || "coverage.png differs".into(),
        )?;
        if intermediates {
            ensure(
                bits(&read("disparity_raw.pfm")) == bits(&result.raw_disparity),
                || "raw map differs".into(),
            )?;
            ensure(
                bits(&read("disparity_refined.pfm")) == bits(&result.refined_disparity),
                || "refined map differs".into(),
            )?;
            if let Some(mesh) = &result.mesh {
                let coarse = DisparityRaster::from_values(mesh.coarse_map());
                ensure(bits(&read("coarse_prior.pfm")) == bits(&coarse), || {
                    "coarse prior differs".into()
                })?;
            }
            let overlay = read_u8_png(&dir.path().join("support_points.png")).unwrap();
            ensure(overlay.dims() == frame.dims(), || {
                "overlay has the wrong size".into()
            })?;
            let gaps = read_u8_png(&dir.path().join("gap_mask.png")).unwrap();
            ensure(
                gaps == result.refocus.gap_mask.map(|&g| if g { 255 } else { 0 }),
                || "gap_mask.png differs".into(),
            )?;
        }
        Ok(())
    })
}
