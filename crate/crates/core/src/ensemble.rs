//! Combining the two detectors, converting rows to physical heights, and
//! the end-to-end per-image pipeline.

use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, SsdInput};
use crate::detectors::{
    detect_water_coordinates_above, detect_waterline_ssd, fit_waterline_regression, reference_line,
    WaterLineEstimate,
};
use crate::edgemap::{self, EdgeKind, EdgeMap};
use crate::error::{Edge, Error, Result};
use crate::image::{crop, to_gray, ColorImage, Raster, Rect};
use crate::matcher::{cut_template, match_template, MatchResult, Template};
use crate::preprocess::{box_filter, screen_brightness, ScreeningOutcome, Verdict};
use crate::rng::{derive_seed, Rng};

pub const DEFAULT_TOLERANCE_PX: f64 = 3.0;

/// Pixel-to-physical conversion anchored on the reference image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationModel {
    /// Physical water height in the reference image (cm).
    pub h_r: f64,
    /// Reference water-line row, in full-frame pixel coordinates.
    pub reference_row: f64,
    #[serde(default = "unit_scale")]
    pub cm_per_pixel: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl CalibrationModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.cm_per_pixel > 0.0) || !self.cm_per_pixel.is_finite() {
            return Err(Error::Config(format!("cm_per_pixel must be > 0, got {}", self.cm_per_pixel)));
        }
        if !(self.h_r > 0.0) || !self.h_r.is_finite() {
            return Err(Error::Config(format!("h_r must be > 0, got {}", self.h_r)));
        }
        if !self.reference_row.is_finite() {
            return Err(Error::Config("reference_row must be finite".into()));
        }
        Ok(())
    }
}

/// `(delta_h_cm, height_cm)`: rows above the reference line are positive.
///
/// The returned delta is recovered as `height - h_r`, which is exact while
/// `|delta| <= h_r` (every height between 0 and `2 * h_r`), so
/// `height - delta == h_r` holds bit-for-bit in that range.
pub fn calibrate_height(pixel_row: f64, cal: &CalibrationModel) -> (f64, f64) {
    let raw = (cal.reference_row - pixel_row) * cal.cm_per_pixel;
    let height = cal.h_r + raw;
    (height - cal.h_r, height)
}

/// Mean of the two rows when they lie within `tol_px` of each other
/// (inclusive); `None` means the detectors did not converge.
pub fn combine(reg: &WaterLineEstimate, ssd: &WaterLineEstimate, tol_px: f64) -> Option<f64> {
    combine_rows(reg.row_at_center, ssd.row_at_center, tol_px)
}

pub fn combine_rows(a: f64, b: f64, tol_px: f64) -> Option<f64> {
    ((a - b).abs() <= tol_px).then(|| (a + b) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    RejectedDark,
    NoMatch,
    DetectorFailure,
    NonConvergent,
    /// The frame could not be read or processed at all (batch only).
    Error,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::RejectedDark => "rejected_dark",
            Status::NoMatch => "no_match",
            Status::DetectorFailure => "detector_failure",
            Status::NonConvergent => "non_convergent",
            Status::Error => "error",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::RejectedDark => 2,
            Status::NoMatch => 3,
            Status::DetectorFailure => 4,
            Status::NonConvergent => 5,
            Status::Error => 1,
        }
    }
}

impl std::str::FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ok" => Status::Ok,
            "rejected_dark" => Status::RejectedDark,
            "no_match" => Status::NoMatch,
            "detector_failure" => Status::DetectorFailure,
            "non_convergent" => Status::NonConvergent,
            "error" => Status::Error,
            other => return Err(Error::Input(format!("unknown status `{other}`"))),
        })
    }
}

/// Physical reading derived from a converged water-line row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    /// Full-frame row of the water line.
    pub pixel_row: f64,
    pub delta_h_cm: f64,
    pub height_cm: f64,
}

/// Outcome for one frame. Height fields exist only for `Status::Ok`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingRecord {
    pub timestamp: Option<NaiveDateTime>,
    pub status: Status,
    pub reading: Option<Reading>,
    pub match_score: Option<f64>,
    pub detector_gap_px: Option<f64>,
}

impl ReadingRecord {
    pub fn without_reading(timestamp: Option<NaiveDateTime>, status: Status) -> Self {
        debug_assert!(status != Status::Ok);
        Self { timestamp, status, reading: None, match_score: None, detector_gap_px: None }
    }
}

/// Everything the pipeline learned about one frame, for `--debug` output.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineDiagnostics {
    pub screening: Option<ScreeningOutcome>,
    pub matched: Option<MatchResult>,
    pub regression: Option<WaterLineEstimate>,
    pub ssd: Option<WaterLineEstimate>,
    pub regression_error: Option<String>,
    pub ssd_error: Option<String>,
}

/// Per-frame inputs that do not come from the configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrameContext<'a> {
    pub timestamp: Option<NaiveDateTime>,
    /// Where the frame came from; needed to locate external edge maps.
    pub image_path: Option<&'a Path>,
    /// Label mixed into the screening seed, usually the file name.
    pub label: &'a str,
}

fn external_edge_map(cfg: &PipelineConfig, ctx: &FrameContext<'_>) -> Result<EdgeMap> {
    let image_path = ctx
        .image_path
        .ok_or_else(|| Error::Config("external edge maps need the input image path".into()))?;
    let stamp = ctx.timestamp.map(|t| t.format(crate::records::FILE_TIMESTAMP).to_string());
    let path = cfg.edge.external_path(image_path, stamp.as_deref());
    edgemap::load_external(path, Some((cfg.roi.width, cfg.roi.height)))
}

/// Runs one frame through crop, screening, smoothing, edge extraction,
/// template matching, both detectors, the agreement check and calibration.
///
/// Rejections are reported through the record's status; `Err` is reserved
/// for configuration, bounds and I/O problems.
pub fn run_pipeline(
    img: &ColorImage,
    tmpl: &Template,
    cal: &CalibrationModel,
    cfg: &PipelineConfig,
    ctx: &FrameContext<'_>,
) -> Result<(ReadingRecord, PipelineDiagnostics)> {
    let mut diag = PipelineDiagnostics::default();
    let ts = ctx.timestamp;

    let roi = crop(img, &cfg.roi)?;
    let mut rng = Rng::new(derive_seed(cfg.screening.rng_seed, ctx.label));
    let (outcome, roi) = screen_brightness(&roi, &cfg.screening, &mut rng);
    diag.screening = Some(outcome);
    if outcome.verdict == Verdict::RejectedDark {
        return Ok((ReadingRecord::without_reading(ts, Status::RejectedDark), diag));
    }

    let smoothed = box_filter(&to_gray(&roi), cfg.box_radius);
    let edges = match cfg.edge.kind {
        EdgeKind::Sobel => edgemap::sobel(&smoothed)?,
        EdgeKind::Canny => edgemap::canny(&smoothed, &cfg.edge)?,
        EdgeKind::External => external_edge_map(cfg, ctx)?,
    };

    let matched = match_template(tmpl, &edges, cfg.match_threshold)?;
    diag.matched = Some(matched);
    let mut record = ReadingRecord::without_reading(ts, Status::NoMatch);
    record.match_score = Some(matched.score);
    if !matched.accepted {
        return Ok((record, diag));
    }

    let region = matched.location;
    let edge_region = crop(edges.image(), &region)?;
    let regression = detect_water_coordinates_above(&edge_region, cfg.regression.edge_floor)
        .and_then(|coords| fit_waterline_regression(&coords, tmpl));
    let ssd_source = match cfg.ssd.input {
        SsdInput::Grayscale => crop(&smoothed, &region)?,
        SsdInput::Edge => edge_region,
    };
    let ssd = detect_waterline_ssd(&ssd_source, &cfg.ssd.window(tmpl.reference_slope));

    let (reg, ssd) = match (regression, ssd) {
        (Ok(r), Ok(s)) => (r, s),
        (r, s) => {
            diag.regression_error = r.as_ref().err().map(ToString::to_string);
            diag.ssd_error = s.as_ref().err().map(ToString::to_string);
            diag.regression = r.ok();
            diag.ssd = s.ok();
            record.status = Status::DetectorFailure;
            return Ok((record, diag));
        }
    };
    let gap = (reg.row_at_center - ssd.row_at_center).abs();
    record.detector_gap_px = Some(gap);
    let combined = combine(&reg, &ssd, cfg.ensemble_tol_px);
    diag.regression = Some(reg);
    diag.ssd = Some(ssd);
    let Some(local_row) = combined else {
        record.status = Status::NonConvergent;
        return Ok((record, diag));
    };

    let pixel_row = (cfg.roi.y + region.y) as f64 + local_row;
    let (delta_h_cm, height_cm) = calibrate_height(pixel_row, cal);
    record.status = Status::Ok;
    record.reading = Some(Reading { pixel_row, delta_h_cm, height_cm });
    Ok((record, diag))
}

/// Same as [`run_pipeline`] but reads the frame from disk.
pub fn run_pipeline_on_file(
    path: &Path,
    tmpl: &Template,
    cal: &CalibrationModel,
    cfg: &PipelineConfig,
) -> Result<(ReadingRecord, PipelineDiagnostics)> {
    let img = ColorImage::load(path)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let ctx = FrameContext {
        timestamp: crate::records::timestamp_from_name(name),
        image_path: Some(path),
        label: name,
    };
    run_pipeline(&img, tmpl, cal, cfg, &ctx)
}

/// Edge map of a ROI exactly as the pipeline computes it, used when cutting
/// templates from a reference frame.
pub fn reference_edge_map(
    img: &ColorImage,
    cfg: &PipelineConfig,
    ctx: &FrameContext<'_>,
) -> Result<(ScreeningOutcome, EdgeMap)> {
    let roi = crop(img, &cfg.roi)?;
    let mut rng = Rng::new(derive_seed(cfg.screening.rng_seed, ctx.label));
    let (outcome, roi) = screen_brightness(&roi, &cfg.screening, &mut rng);
    if outcome.verdict == Verdict::RejectedDark {
        return Err(Error::Calibration(format!(
            "reference frame rejected as too dark (channel means {:?})",
            outcome.mean_rgb
        )));
    }
    let smoothed = box_filter(&to_gray(&roi), cfg.box_radius);
    let edges = match cfg.edge.kind {
        EdgeKind::Sobel => edgemap::sobel(&smoothed)?,
        EdgeKind::Canny => edgemap::canny(&smoothed, &cfg.edge)?,
        EdgeKind::External => external_edge_map(cfg, ctx)?,
    };
    debug_assert_eq!(edges.width(), roi.width());
    Ok((outcome, edges))
}

/// Cuts a template around the annotated water line of a reference frame
/// and anchors the calibration on it.
///
/// `annotated_row` is in full-frame coordinates. The reference slope comes
/// from the best-fitting regression window inside the cut.
pub fn calibrate(
    reference: &ColorImage,
    annotated_row: f64,
    h_r: f64,
    cm_per_pixel: f64,
    cfg: &PipelineConfig,
    ctx: &FrameContext<'_>,
) -> Result<(Template, CalibrationModel)> {
    cfg.validate()?;
    let cal = CalibrationModel { h_r, reference_row: annotated_row, cm_per_pixel };
    cal.validate()?;
    let local = annotated_row - cfg.roi.y as f64;
    let row = local.round();
    if row < 0.0 {
        return Err(Error::OutOfBounds { edge: Edge::Top, extent: (-row) as usize, limit: 0 });
    }
    if row >= cfg.roi.height as f64 {
        return Err(Error::OutOfBounds {
            edge: Edge::Bottom,
            extent: row as usize + cfg.roi.y + 1,
            limit: cfg.roi.bottom(),
        });
    }
    let row = row as usize;
    let (_, edges) = reference_edge_map(reference, cfg, ctx)?;
    let geom = &cfg.template;
    let top = row.checked_sub(geom.rows_above).ok_or(Error::OutOfBounds {
        edge: Edge::Top,
        extent: geom.rows_above,
        limit: row,
    })?;
    let origin = Rect::new(geom.x, top, geom.width, geom.rows_above + geom.rows_below);
    let region = crop(edges.image(), &origin)?;
    let slope = detect_water_coordinates_above(&region, cfg.regression.edge_floor)
        .and_then(|c| reference_line(&c))
        .map_err(|e| Error::Calibration(format!("cannot fit the reference water line: {e}")))?
        .slope;
    let tmpl = cut_template(&edges, origin, geom.rows_above, slope)?;
    Ok((tmpl, cal))
}
