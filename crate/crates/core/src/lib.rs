//! Water-level estimation from fixed-camera images of a bridge pier.
//!
//! A frame is cropped to its region of interest, screened for darkness,
//! smoothed and turned into an edge map. A template cut from a calibrated
//! reference frame locates the pier by normalized cross-correlation, then
//! two independent detectors estimate the water line inside the match. When
//! they agree the mean row is converted into a physical height.

pub mod config;
pub mod detectors;
pub mod edgemap;
pub mod ensemble;
pub mod error;
pub mod image;
pub mod matcher;
pub mod metrics;
pub mod preprocess;
pub mod records;
pub mod rng;
pub mod synth;

pub use config::PipelineConfig;
pub use edgemap::{EdgeKind, EdgeMap};
pub use ensemble::{run_pipeline, CalibrationModel, ReadingRecord, Status};
pub use error::{Error, Result};
pub use image::{crop, to_gray, ColorImage, GrayImage, Raster, Rect};
pub use matcher::{match_template, MatchResult, Template};
pub use rng::Rng;
