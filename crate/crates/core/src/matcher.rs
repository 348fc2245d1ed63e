//! Template localization by normalized cross-correlation.
//!
//! The score at placement `(x, y)` is
//!
//! ```text
//! C(x, y) = sum T(x', y') I(x + x', y + y') / sqrt(sum T^2 * sum_window I^2)
//! ```
//!
//! with no mean subtraction. Edge maps are non-negative, so scores fall in
//! `[0, 1]`; a window or template with zero energy scores 0.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::edgemap::{EdgeKind, EdgeMap};
use crate::ensemble::CalibrationModel;
use crate::error::{Error, Result};
use crate::image::{GrayImage, Raster, Rect};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.8;

/// Stored reference patch plus the water-line geometry measured on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub patch: EdgeMap,
    /// Where the patch was cut from the reference edge map (ROI frame).
    pub origin_in_reference: Rect,
    /// Row of the reference water line inside the patch.
    pub waterline_row_offset: usize,
    /// Rise per pixel of run of the reference water line.
    pub reference_slope: f64,
}

impl Template {
    pub fn new(
        patch: EdgeMap,
        origin_in_reference: Rect,
        waterline_row_offset: usize,
        reference_slope: f64,
    ) -> Result<Self> {
        if waterline_row_offset >= patch.height() {
            return Err(Error::Input(format!(
                "water line offset {waterline_row_offset} outside template of height {}",
                patch.height()
            )));
        }
        if (origin_in_reference.width, origin_in_reference.height) != (patch.width(), patch.height()) {
            return Err(Error::Input("template origin size differs from patch size".into()));
        }
        if !reference_slope.is_finite() {
            return Err(Error::Input("reference slope must be finite".into()));
        }
        Ok(Self { patch, origin_in_reference, waterline_row_offset, reference_slope })
    }

    pub fn width(&self) -> usize {
        self.patch.width()
    }

    pub fn height(&self) -> usize {
        self.patch.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub score: f64,
    pub location: Rect,
    pub accepted: bool,
}

/// NCC score of one placement, evaluated directly.
pub fn ncc_score(tmpl: &Template, img: &EdgeMap, x: usize, y: usize) -> Result<f64> {
    let (tw, th) = (tmpl.width(), tmpl.height());
    Rect::new(x, y, tw, th).check_within(img.width(), img.height())?;
    let (t, i) = (tmpl.patch.image(), img.image());
    let (mut cross, mut tt, mut ii) = (0.0, 0.0, 0.0);
    for dy in 0..th {
        let trow = t.row(dy);
        let irow = &i.row(y + dy)[x..x + tw];
        for (a, b) in trow.iter().zip(irow) {
            cross += a * b;
            tt += a * a;
            ii += b * b;
        }
    }
    Ok(normalize(cross, tt, ii))
}

fn normalize(cross: f64, tt: f64, ii: f64) -> f64 {
    if tt <= 0.0 || ii <= 0.0 {
        return 0.0;
    }
    (cross / (tt * ii).sqrt()).clamp(0.0, 1.0)
}

/// How the cross-correlation numerator is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMethod {
    /// Direct summation for small problems, FFT otherwise.
    #[default]
    Auto,
    Direct,
    Fft,
}

/// Direct summation is used below this many multiply-adds.
const DIRECT_WORK_LIMIT: usize = 4_000_000;

/// Scores of every valid placement, row-major over `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub width: usize,
    pub height: usize,
    pub scores: Vec<f64>,
}

impl ScoreMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.scores[y * self.width + x]
    }

    /// Best placement; ties go to the smallest `y`, then the smallest `x`.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (i, &s) in self.scores.iter().enumerate() {
            if s > best.2 {
                best = (i % self.width, i / self.width, s);
            }
        }
        best
    }
}

fn check_template_fits(tmpl: &Template, img: &EdgeMap) -> Result<()> {
    if tmpl.width() >= img.width() || tmpl.height() >= img.height() {
        return Err(Error::Size(format!(
            "template {}x{} must be strictly smaller than image {}x{}",
            tmpl.width(),
            tmpl.height(),
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Window sums of `I^2` and non-zero counts for every placement.
///
/// The count decides exactly whether a window is all zero, independent of
/// rounding in the squared sums.
struct WindowEnergy {
    sq: Vec<f64>,
    nonzero: Vec<u32>,
    stride: usize,
}

impl WindowEnergy {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut sq = vec![0.0; stride * (h + 1)];
        let mut nonzero = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let (mut rs, mut rn) = (0.0, 0u32);
            for (x, &v) in img.row(y).iter().enumerate() {
                rs += v * v;
                rn += u32::from(v != 0.0);
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + rs;
                nonzero[(y + 1) * stride + x + 1] = nonzero[y * stride + x + 1] + rn;
            }
        }
        Self { sq, nonzero, stride }
    }

    fn window(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        let s = self.stride;
        let n = self.nonzero[(y + h) * s + x + w] + self.nonzero[y * s + x]
            - self.nonzero[y * s + x + w]
            - self.nonzero[(y + h) * s + x];
        if n == 0 {
            return 0.0;
        }
        let e = self.sq[(y + h) * s + x + w] - self.sq[y * s + x + w] - self.sq[(y + h) * s + x]
            + self.sq[y * s + x];
        e.max(f64::MIN_POSITIVE)
    }
}

/// NCC over all placements.
pub fn score_map(tmpl: &Template, img: &EdgeMap, method: ScoreMethod) -> Result<ScoreMap> {
    check_template_fits(tmpl, img)?;
    let (tw, th) = (tmpl.width(), tmpl.height());
    let (mw, mh) = (img.width() - tw + 1, img.height() - th + 1);
    let method = match method {
        ScoreMethod::Auto if mw * mh * tw * th <= DIRECT_WORK_LIMIT => ScoreMethod::Direct,
        ScoreMethod::Auto => ScoreMethod::Fft,
        m => m,
    };
    let cross = match method {
        ScoreMethod::Fft => cross_correlation_fft(tmpl.patch.image(), img.image(), mw, mh),
        _ => cross_correlation_direct(tmpl.patch.image(), img.image(), mw, mh),
    };
    let tt: f64 = tmpl.patch.image().pixels().iter().map(|v| v * v).sum();
    let energy = WindowEnergy::new(img.image());
    let scores = cross
        .iter()
        .enumerate()
        .map(|(i, &c)| normalize(c, tt, energy.window(i % mw, i / mw, tw, th)))
        .collect();
    Ok(ScoreMap { width: mw, height: mh, scores })
}

fn cross_correlation_direct(t: &GrayImage, img: &GrayImage, mw: usize, mh: usize) -> Vec<f64> {
    let (tw, th) = (t.width(), t.height());
    let mut out = vec![0.0; mw * mh];
    out.par_chunks_mut(mw).enumerate().for_each(|(y, row)| {
        for (x, slot) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for dy in 0..th {
                let irow = &img.row(y + dy)[x..x + tw];
                acc += t.row(dy).iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
            }
            *slot = acc;
        }
    });
    out
}

/// In-place 2-D FFT of a row-major `w x h` buffer.
fn fft2(buf: &mut [Complex<f64>], w: usize, h: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row_fft.process(buf);
    let mut col = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Valid-placement correlation through the frequency domain.
///
/// Circular correlation on the image's own size is exact for placements
/// that keep the template inside the image, since no index wraps.
fn cross_correlation_fft(t: &GrayImage, img: &GrayImage, mw: usize, mh: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut planner = FftPlanner::new();
    let mut a: Vec<Complex<f64>> = img.pixels().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut b = vec![Complex::default(); w * h];
    for y in 0..t.height() {
        for (x, &v) in t.row(y).iter().enumerate() {
            b[y * w + x] = Complex::new(v, 0.0);
        }
    }
    fft2(&mut a, w, h, &mut planner, false);
    fft2(&mut b, w, h, &mut planner, false);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q.conj();
    }
    fft2(&mut a, w, h, &mut planner, true);
    let scale = 1.0 / (w * h) as f64;
    let mut out = Vec::with_capacity(mw * mh);
    for y in 0..mh {
        out.extend(a[y * w..y * w + mw].iter().map(|c| c.re * scale));
    }
    out
}

/// Exhaustive search for the best placement of `tmpl` in `img`.
pub fn match_template(tmpl: &Template, img: &EdgeMap, threshold: f64) -> Result<MatchResult> {
    let map = score_map(tmpl, img, ScoreMethod::Auto)?;
    let (x, y, score) = map.argmax();
    Ok(MatchResult {
        score,
        location: Rect::new(x, y, tmpl.width(), tmpl.height()),
        accepted: score >= threshold,
    })
}

/// On-disk form of a [`Template`]: a TOML sidecar next to an 8-bit patch image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateFile {
    /// Patch image path, relative to the sidecar's directory.
    pub patch: PathBuf,
    pub origin_in_reference: Rect,
    pub waterline_row_offset: usize,
    pub reference_slope: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationModel>,
}

/// Writes `<sidecar>` and the patch image beside it (same stem, `.png`).
pub fn save_template(
    tmpl: &Template,
    calibration: Option<&CalibrationModel>,
    sidecar: impl AsRef<Path>,
) -> Result<()> {
    let sidecar = sidecar.as_ref();
    let patch_name = PathBuf::from(sidecar.file_stem().unwrap_or_default()).with_extension("png");
    let dir = sidecar.parent().unwrap_or(Path::new("."));
    tmpl.patch.save(dir.join(&patch_name))?;
    let file = TemplateFile {
        patch: patch_name,
        origin_in_reference: tmpl.origin_in_reference,
        waterline_row_offset: tmpl.waterline_row_offset,
        reference_slope: tmpl.reference_slope,
        calibration: calibration.cloned(),
    };
    let text = toml::to_string_pretty(&file).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(sidecar, text)?;
    Ok(())
}

/// Loads a template sidecar and its patch; the patch keeps its original
/// edge provenance unknown, so it is tagged as external.
pub fn load_template(sidecar: impl AsRef<Path>) -> Result<(Template, Option<CalibrationModel>)> {
    let sidecar = sidecar.as_ref();
    let ingest = |reason: String| Error::Ingest { path: sidecar.to_path_buf(), reason };
    let text = std::fs::read_to_string(sidecar).map_err(|e| ingest(e.to_string()))?;
    let file: TemplateFile = toml::from_str(&text).map_err(|e| ingest(e.to_string()))?;
    let dir = sidecar.parent().unwrap_or(Path::new("."));
    let patch = crate::edgemap::load_external(dir.join(&file.patch), None)?;
    let patch = EdgeMap::new(patch.into_image(), EdgeKind::External);
    let tmpl = Template::new(patch, file.origin_in_reference, file.waterline_row_offset, file.reference_slope)?;
    if let Some(cal) = &file.calibration {
        cal.validate()?;
    }
    Ok((tmpl, file.calibration))
}

/// Cuts a template out of a reference edge map.
pub fn cut_template(
    reference: &EdgeMap,
    origin: Rect,
    waterline_row_offset: usize,
    reference_slope: f64,
) -> Result<Template> {
    let patch = crate::image::crop(reference.image(), &origin)?;
    Template::new(EdgeMap::new(patch, reference.provenance()), origin, waterline_row_offset, reference_slope)
}
