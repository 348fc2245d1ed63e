//! The two water-line estimators run inside the matched region.
//!
//! Both report `row_at_center`: the water-line row at the horizontal centre
//! of the region, in region coordinates, so their outputs can be compared
//! directly.

mod regression;
mod ssd;

use serde::{Deserialize, Serialize};

pub use regression::{
    detect_water_coordinates, detect_water_coordinates_above, fit_lines, fit_waterline, fit_waterline_regression, ols,
    percentile_nearest_rank, reference_line, split_windows, FittedLine, WaterCoordinates,
    REGRESSION_WINDOWS, WATER_PERCENTILE,
};
pub use ssd::{detect_waterline_ssd, ssd_profile, SsdWindowConfig, TieBreak};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Regression,
    Ssd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostics {
    Regression {
        window_index: usize,
        slope: f64,
        intercept: f64,
        /// Every per-window fit, in window order.
        windows: Vec<FittedLine>,
        points: usize,
    },
    Ssd {
        divider_row: usize,
        /// `(y, S(y))` from the bottom divider upward.
        profile: Vec<(usize, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterLineEstimate {
    pub row_at_center: f64,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

/// Horizontal centre of a region `width` pixels wide.
pub(crate) fn center_column(width: usize) -> f64 {
    (width as f64 - 1.0) / 2.0
}
