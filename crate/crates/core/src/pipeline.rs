//! Per-frame processing and the dataset driver.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{PipelineConfig, PipelineParams};
use crate::descriptor::{sobel_descriptor_field, DescriptorField, DescriptorKind};
use crate::disparity::{fill_gaps, map_disparity, median_filter_disparity, PriorSource, RayInputs};
use crate::error::{Error, Result};
use crate::geometry::{parse_calibration, CameraRig, RayWarper};
use crate::io::{
    frame_dirs, load_frame, write_disparity_pfm, write_gray_png, write_rgb_png, write_u8_png,
    DisparityRaster, LightFieldFrame,
};
use crate::raster::Raster;
use crate::refocus::{synthesize_refocused, RefocusResult};
use crate::segmentation::{refine_labels_estep, threshold_labels, LabelMap};
use crate::support_mesh::{
    build_triangulation, filter_support_points, match_support_grid, recover_occluded_support,
    Origin, SupportMesh, SupportPoint,
};

/// Processing stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Labels,
    Descriptors,
    Support,
    Triangulation,
    Disparity,
    EStep,
    PostFilter,
    Refocus,
    Write,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Load,
        Stage::Labels,
        Stage::Descriptors,
        Stage::Support,
        Stage::Triangulation,
        Stage::Disparity,
        Stage::EStep,
        Stage::PostFilter,
        Stage::Refocus,
        Stage::Write,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Labels => "labels",
            Stage::Descriptors => "descriptors",
            Stage::Support => "support points",
            Stage::Triangulation => "triangulation",
            Stage::Disparity => "disparity",
            Stage::EStep => "e-step",
            Stage::PostFilter => "post-filter",
            Stage::Refocus => "refocus",
            Stage::Write => "write",
        }
    }

    /// Stages counted as depth estimation in the summary.
    fn is_depth(self) -> bool {
        matches!(
            self,
            Stage::Labels
                | Stage::Descriptors
                | Stage::Support
                | Stage::Triangulation
                | Stage::Disparity
                | Stage::EStep
                | Stage::PostFilter
        )
    }
}

/// Milliseconds spent per stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub ms: Vec<(Stage, f64)>,
}

impl StageTimings {
    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.add(stage, start.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn add(&mut self, stage: Stage, ms: f64) {
        match self.ms.iter_mut().find(|(s, _)| *s == stage) {
            Some((_, t)) => *t += ms,
            None => self.ms.push((stage, ms)),
        }
    }

    pub fn get(&self, stage: Stage) -> f64 {
        self.ms
            .iter()
            .find(|(s, _)| *s == stage)
            .map_or(0.0, |(_, t)| *t)
    }

    pub fn depth_map(&self) -> f64 {
        self.ms
            .iter()
            .filter(|(s, _)| s.is_depth())
            .map(|(_, t)| t)
            .sum()
    }

    pub fn refocusing(&self) -> f64 {
        self.get(Stage::Refocus)
    }

    pub fn total(&self) -> f64 {
        self.ms.iter().map(|(_, t)| t).sum()
    }
}

impl fmt::Display for StageTimings {
    /// `depth map X ms | refocusing Y ms | total Z ms` followed by the per-stage breakdown.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "depth map {:.1} ms | refocusing {:.1} ms | total {:.1} ms |",
            self.depth_map(),
            self.refocusing(),
            self.total()
        )?;
        for stage in Stage::ALL {
            if let Some((_, t)) = self.ms.iter().find(|(s, _)| *s == stage) {
                write!(f, " {} {:.1}", stage.name(), t)?;
            }
        }
        Ok(())
    }
}

/// Everything computed for one frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    /// Thresholded labels.
    pub initial_labels: Vec<LabelMap>,
    /// Labels after the last label update (equal to `initial_labels` without one).
    pub labels: Vec<LabelMap>,
    /// Support points kept by the filter.
    pub support_points: Vec<SupportPoint>,
    /// `None` when too few support points survived and a uniform prior was used.
    pub mesh: Option<SupportMesh>,
    /// First disparity search, before label updates and filtering.
    pub raw_disparity: DisparityRaster,
    /// Last disparity search, before filtering.
    pub refined_disparity: DisparityRaster,
    /// Gap-filled and median-filtered disparity.
    pub disparity: DisparityRaster,
    pub refocus: RefocusResult,
    pub timings: StageTimings,
}

/// A failure tagged with the stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Runs every stage after loading on one frame.
pub fn process_frame(
    frame: &LightFieldFrame,
    rig: &CameraRig<f64>,
    params: &PipelineParams,
) -> std::result::Result<FrameResult, StageError> {
    let mut timings = StageTimings::default();
    frame.validate(Some(rig)).at(Stage::Load)?;
    let (w, h) = frame.dims();
    let warper = RayWarper::new(rig);

    let initial_labels: Vec<LabelMap> = timings
        .time(Stage::Labels, || {
            frame
                .prob_masks
                .iter()
                .map(|m| threshold_labels(m, params.tau))
                .collect::<Result<_>>()
        })
        .at(Stage::Labels)?;

    let (match_descr, like_descr) = timings
        .time(
            Stage::Descriptors,
            || -> Result<(Vec<DescriptorField>, Vec<DescriptorField>)> {
                let fields = |kind| {
                    frame
                        .images
                        .iter()
                        .map(|img| sobel_descriptor_field(img, kind))
                        .collect::<Result<Vec<_>>>()
                };
                Ok((
                    fields(DescriptorKind::Match)?,
                    fields(DescriptorKind::Likelihood)?,
                ))
            },
        )
        .at(Stage::Descriptors)?;

    let support_points = timings.time(Stage::Support, || {
        let mut points = match_support_grid(
            &match_descr[0],
            &match_descr[1],
            &initial_labels[0],
            rig,
            &params.matching,
        );
        points.extend(recover_occluded_support(
            &initial_labels,
            &match_descr,
            rig,
            &params.matching,
        ));
        points.retain(|p| p.d <= params.estimator.d_max);
        filter_support_points(&points, &params.filter)
    });

    let mesh = timings.time(Stage::Triangulation, || {
        match build_triangulation(&support_points, w, h) {
            Ok(mesh) => Ok(Some(mesh)),
            Err(Error::Mesh(_)) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mesh = mesh.at(Stage::Triangulation)?;
    let prior = match &mesh {
        Some(mesh) if !params.uniform_prior => PriorSource::Mesh(mesh),
        _ => PriorSource::Uniform,
    };

    let search = |labels: &[LabelMap]| {
        let rays = RayInputs {
            descriptors: &like_descr,
            labels,
            warper: &warper,
        };
        map_disparity(&rays, prior, &params.estimator).map(|m| m.disparity)
    };
    let raw_disparity = timings
        .time(Stage::Disparity, || search(&initial_labels))
        .at(Stage::Disparity)?;

    let post_filter = |raw: &DisparityRaster| {
        median_filter_disparity(&fill_gaps(raw), params.estimator.median_window)
    };
    let mut labels = initial_labels.clone();
    let mut refined_disparity = raw_disparity.clone();
    let mut disparity = timings
        .time(Stage::PostFilter, || post_filter(&raw_disparity))
        .at(Stage::PostFilter)?;
    for _ in 0..params.em_iters {
        labels = timings
            .time(Stage::EStep, || {
                refine_labels_estep(
                    frame,
                    &labels,
                    &disparity,
                    &like_descr,
                    &warper,
                    &params.estep,
                )
            })
            .at(Stage::EStep)?;
        refined_disparity = timings
            .time(Stage::Disparity, || search(&labels))
            .at(Stage::Disparity)?;
        disparity = timings
            .time(Stage::PostFilter, || post_filter(&refined_disparity))
            .at(Stage::PostFilter)?;
    }

    let refocus = timings
        .time(Stage::Refocus, || {
            synthesize_refocused(frame, &labels, &warper, &disparity, &params.refocus)
        })
        .at(Stage::Refocus)?;

    Ok(FrameResult {
        initial_labels,
        labels,
        support_points,
        mesh,
        raw_disparity,
        refined_disparity,
        disparity,
        refocus,
        timings,
    })
}

/// Writes `disparity.pfm`, `refocused.png`, `coverage.png` and `labels_<k>.png`,
/// plus the intermediate stages when asked.
pub fn write_artifacts(
    dir: &Path,
    frame: &LightFieldFrame,
    result: &FrameResult,
    intermediates: bool,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_disparity_pfm(&result.disparity, &dir.join("disparity.pfm"))?;
    write_gray_png(&dir.join("refocused.png"), &result.refocus.image)?;
    if let Some(color) = &result.refocus.color {
        write_rgb_png(&dir.join("refocused_color.png"), color)?;
    }
    write_u8_png(
        &dir.join("coverage.png"),
        &result.refocus.coverage_u8(frame.num_views()),
    )?;
    for (k, l) in result.labels.iter().enumerate() {
        write_u8_png(&dir.join(format!("labels_{k}.png")), &l.to_u8())?;
    }
    if intermediates {
        write_u8_png(
            &dir.join("support_points.png"),
            &support_overlay(frame, &result.support_points),
        )?;
        if let Some(mesh) = &result.mesh {
            write_disparity_pfm(
                &DisparityRaster::from_values(mesh.coarse_map()),
                &dir.join("coarse_prior.pfm"),
            )?;
        }
        write_disparity_pfm(&result.raw_disparity, &dir.join("disparity_raw.pfm"))?;
        write_disparity_pfm(
            &result.refined_disparity,
            &dir.join("disparity_refined.pfm"),
        )?;
        write_u8_png(
            &dir.join("gap_mask.png"),
            &result.refocus.gap_mask.map(|&g| if g { 255 } else { 0 }),
        )?;
    }
    Ok(())
}

/// Dimmed reference image with reference support points in white and
/// recovered ones in black, each as a 3x3 dot.
fn support_overlay(frame: &LightFieldFrame, points: &[SupportPoint]) -> Raster<u8> {
    let mut out = frame.images[0].map(|&v| (64.0 + 128.0 * v.clamp(0.0, 1.0)).round() as u8);
    let (w, h) = out.dims();
    for p in points {
        let value = if p.origin == Origin::Reference {
            255
        } else {
            0
        };
        for y in p.v.saturating_sub(1)..(p.v + 2).min(h) {
            for x in p.u.saturating_sub(1)..(p.u + 2).min(w) {
                out.set(x, y, value);
            }
        }
    }
    out
}

/// Outcome of one frame in a run.
#[derive(Debug)]
pub struct FrameReport {
    pub name: String,
    pub outcome: std::result::Result<StageTimings, StageError>,
}

/// Outcome of a dataset run.
#[derive(Debug, Default)]
pub struct RunReport {
    pub frames: Vec<FrameReport>,
}

impl RunReport {
    pub fn failures(&self) -> impl Iterator<Item = (&str, &StageError)> {
        self.frames
            .iter()
            .filter_map(|f| f.outcome.as_ref().err().map(|e| (f.name.as_str(), e)))
    }

    pub fn succeeded(&self) -> usize {
        self.frames.iter().filter(|f| f.outcome.is_ok()).count()
    }
}

/// Frame id from a directory name, falling back to its position.
fn frame_id(dir: &Path, index: usize) -> u64 {
    dir.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.parse().ok())
        .unwrap_or(index as u64)
}

/// Processes every frame of the configured dataset. Failed frames are
/// reported and skipped; `on_frame` sees each report as it completes.
pub fn run_pipeline(
    config: &PipelineConfig,
    mut on_frame: impl FnMut(&FrameReport),
) -> Result<RunReport> {
    config.validate()?;
    let calib_path = config.dataset.join("calib.txt");
    let calib = fs::read_to_string(&calib_path).map_err(|e| Error::io(&calib_path, e))?;
    let rig: CameraRig<f64> = parse_calibration(&calib)?;
    let params = config.params(&rig);
    let dirs = frame_dirs(&config.dataset)?;
    if dirs.is_empty() {
        return Err(Error::Validation(format!(
            "no frames found in {}",
            config.dataset.display()
        )));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    let mut report = RunReport::default();
    for (index, dir) in dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .map_or_else(|| index.to_string(), |n| n.to_string_lossy().into_owned());
        let outcome =
            pool.install(|| run_one(dir, frame_id(dir, index), &rig, &params, config, &name));
        let frame_report = FrameReport { name, outcome };
        on_frame(&frame_report);
        report.frames.push(frame_report);
    }
    Ok(report)
}

fn run_one(
    dir: &Path,
    id: u64,
    rig: &CameraRig<f64>,
    params: &PipelineParams,
    config: &PipelineConfig,
    name: &str,
) -> std::result::Result<StageTimings, StageError> {
    let start = Instant::now();
    let frame = load_frame(dir, rig, id, params.refocus.color).at(Stage::Load)?;
    let load_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut result = process_frame(&frame, rig, params)?;
    result.timings.ms.insert(0, (Stage::Load, load_ms));
    let out_dir: PathBuf = config.output.join(name);
    let write_start = Instant::now();
    write_artifacts(&out_dir, &frame, &result, config.emit_intermediates).at(Stage::Write)?;
    result
        .timings
        .add(Stage::Write, write_start.elapsed().as_secs_f64() * 1e3);
    Ok(result.timings)
}
