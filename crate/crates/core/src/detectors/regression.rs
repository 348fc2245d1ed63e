//! Per-column water coordinates and the five-window line fit.

use serde::{Deserialize, Serialize};

use super::{center_column, Diagnostics, Method, WaterLineEstimate};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Raster};
use crate::matcher::Template;

pub const WATER_PERCENTILE: f64 = 70.0;
pub const REGRESSION_WINDOWS: usize = 5;
const SCAN_WINDOW: usize = 3;

/// One `(x, y)` per column where a transition was found, `x` increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WaterCoordinates {
    pub points: Vec<(usize, usize)>,
}

impl WaterCoordinates {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedLine {
    pub slope: f64,
    pub intercept: f64,
    pub window_index: usize,
    pub support: usize,
}

impl FittedLine {
    pub fn at(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Nearest-rank percentile: the smallest value with at least `pct`% of the
/// sample at or below it.
pub fn percentile_nearest_rank(values: &[f64], pct: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Finds, in each column, the lowest 3-pixel vertical window whose pixels
/// all strictly exceed that column's 70th percentile, scanning from the
/// bottom row upward. The window's centre row is the column's coordinate.
pub fn detect_water_coordinates(region: &GrayImage) -> Result<WaterCoordinates> {
    detect_water_coordinates_above(region, 0.0)
}

/// As [`detect_water_coordinates`], but a pixel must also exceed `floor`.
///
/// Built-in gradient maps carry a noise floor in flat areas, where the
/// column percentile alone lets runs of noise qualify below the water line.
pub fn detect_water_coordinates_above(region: &GrayImage, floor: f64) -> Result<WaterCoordinates> {
    let (w, h) = (region.width(), region.height());
    if h < SCAN_WINDOW {
        return Err(Error::Size(format!("region needs at least {SCAN_WINDOW} rows, got {h}")));
    }
    let mut points = Vec::new();
    let mut column = vec![0.0; h];
    for x in 0..w {
        for (y, v) in column.iter_mut().enumerate() {
            *v = region.get(x, y);
        }
        let p = percentile_nearest_rank(&column, WATER_PERCENTILE).max(floor);
        let hit = (0..=h - SCAN_WINDOW)
            .rev()
            .find(|&top| column[top..top + SCAN_WINDOW].iter().all(|&v| v > p));
        if let Some(top) = hit {
            points.push((x, top + SCAN_WINDOW / 2));
        }
    }
    Ok(WaterCoordinates { points })
}

/// Splits `n` items into `k` contiguous groups; earlier groups take the
/// remainder. Returns `(start, len)` pairs.
pub fn split_windows(n: usize, k: usize) -> Vec<(usize, usize)> {
    let (base, rem) = (n / k, n % k);
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < rem);
            let out = (start, len);
            start += len;
            out
        })
        .collect()
}

/// Ordinary least squares `y = slope * x + intercept`.
///
/// Moments are accumulated in integers, so shifting every `y` by a constant
/// leaves the slope bit-for-bit unchanged.
pub fn ols(points: &[(usize, usize)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as i128;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0i128, 0i128, 0i128, 0i128);
    for &(x, y) in points {
        let (x, y) = (x as i128, y as i128);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let den = n * sxx - sx * sx;
    if den == 0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) as f64 / den as f64;
    let intercept = (sy as f64 - slope * sx as f64) / n as f64;
    Some((slope, intercept))
}

/// Fits one line per window of the x-ordered coordinates.
pub fn fit_lines(coords: &WaterCoordinates) -> Result<Vec<FittedLine>> {
    let needed = 2 * REGRESSION_WINDOWS;
    if coords.len() < needed {
        return Err(Error::InsufficientSupport { needed, got: coords.len() });
    }
    split_windows(coords.len(), REGRESSION_WINDOWS)
        .into_iter()
        .enumerate()
        .map(|(i, (start, len))| {
            let pts = &coords.points[start..start + len];
            let (slope, intercept) = ols(pts).ok_or_else(|| {
                Error::Input(format!("window {i} has no horizontal spread"))
            })?;
            Ok(FittedLine { slope, intercept, window_index: i, support: len })
        })
        .collect()
}

/// Picks the window line most parallel to `reference_slope` (ties go to the
/// lowest window index) and reads it at `center_x`.
pub fn fit_waterline(
    coords: &WaterCoordinates,
    reference_slope: f64,
    center_x: f64,
    region_height: usize,
) -> Result<WaterLineEstimate> {
    let lines = fit_lines(coords)?;
    let mut best = lines[0];
    for line in &lines[1..] {
        if (line.slope - reference_slope).abs() < (best.slope - reference_slope).abs() {
            best = *line;
        }
    }
    let row = best.at(center_x).clamp(0.0, region_height.saturating_sub(1) as f64);
    Ok(WaterLineEstimate {
        row_at_center: row,
        method: Method::Regression,
        diagnostics: Diagnostics::Regression {
            window_index: best.window_index,
            slope: best.slope,
            intercept: best.intercept,
            windows: lines,
            points: coords.len(),
        },
    })
}

/// Regression estimate for a region the size of `tmpl`.
pub fn fit_waterline_regression(coords: &WaterCoordinates, tmpl: &Template) -> Result<WaterLineEstimate> {
    fit_waterline(coords, tmpl.reference_slope, center_column(tmpl.width()), tmpl.height())
}

/// Line used as the reference water line when calibrating: the window fit
/// with the smallest mean squared residual.
pub fn reference_line(coords: &WaterCoordinates) -> Result<FittedLine> {
    let lines = fit_lines(coords)?;
    let windows = split_windows(coords.len(), REGRESSION_WINDOWS);
    let residual = |line: &FittedLine| {
        let (start, len) = windows[line.window_index];
        coords.points[start..start + len]
            .iter()
            .map(|&(x, y)| (line.at(x as f64) - y as f64).powi(2))
            .sum::<f64>()
            / len as f64
    };
    let mut best = lines[0];
    let mut best_r = residual(&best);
    for line in &lines[1..] {
        let r = residual(line);
        if r < best_r {
            best = *line;
            best_r = r;
        }
    }
    Ok(best)
}
