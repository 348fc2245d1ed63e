//! Pipeline configuration, stored as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detectors::{SsdWindowConfig, TieBreak};
use crate::edgemap::EdgeProviderConfig;
use crate::ensemble::{CalibrationModel, DEFAULT_TOLERANCE_PX};
use crate::error::{Error, Result};
use crate::image::Rect;
use crate::matcher::DEFAULT_MATCH_THRESHOLD;
use crate::preprocess::ScreeningConfig;

/// Image the split-window detector scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsdInput {
    /// The box-filtered grayscale ROI.
    #[default]
    Grayscale,
    /// The edge map.
    Edge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsdSettings {
    pub half_height: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    pub input: SsdInput,
    pub tie_break: TieBreak,
}

impl Default for SsdSettings {
    fn default() -> Self {
        let w = SsdWindowConfig::default();
        Self { half_height: w.half_height, width: w.width, input: SsdInput::default(), tie_break: w.tie_break }
    }
}

impl SsdSettings {
    /// Window configuration sheared to the template's reference slope.
    pub fn window(&self, shear_slope: f64) -> SsdWindowConfig {
        SsdWindowConfig {
            half_height: self.half_height,
            width: self.width,
            shear_slope,
            tie_break: self.tie_break,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSettings {
    /// Edge strength a pixel must exceed, on top of the column percentile,
    /// to count as water-line evidence. 0 leaves only the percentile test.
    pub edge_floor: f64,
}

impl Default for RegressionSettings {
    fn default() -> Self {
        Self { edge_floor: 0.2 }
    }
}

/// Where the template is cut from the reference edge map, in ROI
/// coordinates: columns `[x, x + width)` and rows from `rows_above` above
/// the annotated water line to `rows_below` below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateGeometry {
    pub x: usize,
    pub width: usize,
    pub rows_above: usize,
    pub rows_below: usize,
}

impl Default for TemplateGeometry {
    fn default() -> Self {
        Self { x: 100, width: 200, rows_above: 60, rows_below: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Region of interest in full-frame coordinates.
    pub roi: Rect,
    /// Box-filter radius (2 gives a 5x5 window).
    pub box_radius: usize,
    pub match_threshold: f64,
    pub ensemble_tol_px: f64,
    /// Template sidecar; relative paths resolve against the config file.
    pub template_path: PathBuf,
    pub screening: ScreeningConfig,
    pub edge: EdgeProviderConfig,
    pub regression: RegressionSettings,
    pub ssd: SsdSettings,
    pub template: TemplateGeometry,
    /// Overrides the calibration stored with the template.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationModel>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            roi: Rect::new(0, 0, 400, 400),
            box_radius: 2,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            ensemble_tol_px: DEFAULT_TOLERANCE_PX,
            template_path: PathBuf::from("template.toml"),
            screening: ScreeningConfig::default(),
            edge: EdgeProviderConfig::default(),
            regression: RegressionSettings::default(),
            ssd: SsdSettings::default(),
            template: TemplateGeometry::default(),
            calibration: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.roi.width == 0 || self.roi.height == 0 {
            return Err(Error::Config("roi must be at least 1x1".into()));
        }
        if !(0.0..=1.0).contains(&self.match_threshold) {
            return Err(Error::Config(format!(
                "match_threshold must lie in [0, 1], got {}",
                self.match_threshold
            )));
        }
        if !(self.ensemble_tol_px >= 0.0) {
            return Err(Error::Config("ensemble_tol_px must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.regression.edge_floor) {
            return Err(Error::Config(format!(
                "regression.edge_floor must lie in [0, 1), got {}",
                self.regression.edge_floor
            )));
        }
        if self.ssd.half_height == 0 {
            return Err(Error::Config("ssd.half_height must be >= 1".into()));
        }
        if self.ssd.width.is_some_and(|w| w < 2) {
            return Err(Error::Config("ssd.width must be >= 2".into()));
        }
        if self.template.width == 0 || self.template.rows_above + self.template.rows_below == 0 {
            return Err(Error::Config("template geometry must be non-empty".into()));
        }
        self.screening.validate()?;
        self.edge.validate()?;
        if let Some(cal) = &self.calibration {
            cal.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file and resolves `template_path` against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Ingest { path: path.to_path_buf(), reason: e.to_string() })?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.template_path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.template_path = dir.join(&cfg.template_path);
            }
        }
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}
