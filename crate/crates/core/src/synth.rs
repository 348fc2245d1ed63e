//! Synthetic creek scenes with a known water line.
//!
//! A bright pier stands on a mid-gray background; everything below the
//! sloped water line `w(x) = water_row + water_slope * (x - pier.x)` is dark
//! water. Pixel `(x, y)` is water iff `y + 0.5 >= w(x)`, so for an integer
//! `w` the first water row is `w` itself.

use std::path::{Path, PathBuf};

use chrono::{NaiveDateTime, TimeDelta};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorImage, Rect};
use crate::records::{format_timestamp, FILE_TIMESTAMP};
use crate::rng::{derive_seed, Rng};

/// Frame spacing used when writing batches.
pub const FRAME_INTERVAL_MINUTES: i64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub pier_rect: Rect,
    /// Water line row at the pier's left edge.
    pub water_row: f64,
    pub water_slope: f64,
    pub pier_intensity: f64,
    pub water_intensity: f64,
    pub background_intensity: f64,
    pub noise_sigma: f64,
    pub debris_count: usize,
    pub brightness_scale: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 400,
            height: 400,
            pier_rect: Rect::new(140, 20, 120, 360),
            water_row: 200.0,
            water_slope: 0.0,
            pier_intensity: 0.92,
            water_intensity: 0.12,
            background_intensity: 0.25,
            noise_sigma: 0.0,
            debris_count: 0,
            brightness_scale: 1.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("scene dimensions must be positive".into());
        }
        if self.pier_rect.width == 0 || self.pier_rect.height == 0 {
            return bad("pier must have positive size".into());
        }
        self.pier_rect
            .check_within(self.width, self.height)
            .map_err(|e| Error::Config(format!("pier: {e}")))?;
        for (name, v) in [
            ("pier_intensity", self.pier_intensity),
            ("water_intensity", self.water_intensity),
            ("background_intensity", self.background_intensity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if !(self.brightness_scale > 0.0 && self.brightness_scale.is_finite()) {
            return bad(format!("brightness_scale must be positive, got {}", self.brightness_scale));
        }
        if !self.water_slope.is_finite() {
            return bad("water_slope must be finite".into());
        }
        let top = self.pier_rect.y as f64;
        let bottom = self.pier_rect.bottom() as f64;
        let right = self.water_line((self.pier_rect.right() - 1) as f64);
        for v in [self.water_row, right] {
            if !(top..=bottom).contains(&v) {
                return bad(format!("water line row {v} leaves the pier's rows [{top}, {bottom}]"));
            }
        }
        Ok(())
    }

    /// Water line row at column `x`.
    pub fn water_line(&self, x: f64) -> f64 {
        self.water_row + self.water_slope * (x - self.pier_rect.x as f64)
    }

    /// Column of the pier's horizontal centre.
    pub fn pier_center(&self) -> f64 {
        self.pier_rect.x as f64 + (self.pier_rect.width as f64 - 1.0) / 2.0
    }
}

/// Renders the scene and returns it with the true water row at the pier centre.
pub fn render(spec: &SceneSpec) -> Result<(ColorImage, f64)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let pier = spec.pier_rect;
    let line: Vec<f64> = (0..w).map(|x| spec.water_line(x as f64)).collect();
    let is_water = |x: usize, y: usize| y as f64 + 0.5 >= line[x];

    let mut base = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            base[y * w + x] = if is_water(x, y) {
                spec.water_intensity
            } else if x >= pier.x && x < pier.right() && y >= pier.y {
                spec.pier_intensity
            } else {
                spec.background_intensity
            };
        }
    }

    let mut rng = Rng::new(spec.seed);
    let streak_len_max = (w / 10).max(2);
    for _ in 0..spec.debris_count {
        let x0 = rng.index(w);
        let len = 2 + rng.index(streak_len_max - 1);
        let lowest = line[x0].ceil().max(0.0) as usize + 2;
        if lowest >= h {
            continue;
        }
        let y = lowest + rng.index(h - lowest);
        let level = rng.uniform(0.75, 1.0);
        for x in x0..(x0 + len).min(w) {
            if is_water(x, y) {
                base[y * w + x] = level;
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        for v in base.iter_mut() {
            *v += rng.gaussian(spec.noise_sigma);
        }
    }
    let pixels = base
        .into_iter()
        .map(|v| {
            let q = (v.clamp(0.0, 1.0) * spec.brightness_scale * 255.0).round().clamp(0.0, 255.0) as u8;
            [q, q, q]
        })
        .collect();
    let img = ColorImage::new(w, h, pixels)?;
    Ok((img, spec.water_line(spec.pier_center())))
}

/// One frame of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchFrame {
    pub timestamp: NaiveDateTime,
    pub path: PathBuf,
    pub true_row: f64,
    pub brightness_scale: f64,
}

/// File name for a frame taken at `t`.
pub fn frame_name(t: &NaiveDateTime) -> String {
    format!("frame_{}.png", t.format(FILE_TIMESTAMP))
}

/// Renders one frame per `(water_row, seed)` pair at a 10-minute cadence
/// from `start` and writes `ground_truth.csv` next to them.
pub fn render_batch(
    base: &SceneSpec,
    water_rows: &[f64],
    seeds: &[u64],
    start: NaiveDateTime,
    out_dir: &Path,
) -> Result<Vec<BatchFrame>> {
    if water_rows.len() != seeds.len() {
        return Err(Error::Input(format!(
            "{} water rows but {} seeds",
            water_rows.len(),
            seeds.len()
        )));
    }
    let specs: Vec<SceneSpec> = water_rows
        .iter()
        .zip(seeds)
        .map(|(&water_row, &seed)| SceneSpec { water_row, seed, ..base.clone() })
        .collect();
    render_batch_with(&specs, start, out_dir)
}

/// Like [`render_batch`] with a full spec per frame.
pub fn render_batch_with(specs: &[SceneSpec], start: NaiveDateTime, out_dir: &Path) -> Result<Vec<BatchFrame>> {
    for s in specs {
        s.validate()?;
    }
    std::fs::create_dir_all(out_dir)?;
    let frames: Vec<BatchFrame> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let timestamp = start + TimeDelta::minutes(FRAME_INTERVAL_MINUTES * i as i64);
            let path = out_dir.join(frame_name(&timestamp));
            let (img, true_row) = render(spec)?;
            img.save(&path)
                .map_err(|e| Error::Ingest { path: path.clone(), reason: e.to_string() })?;
            Ok(BatchFrame { timestamp, path, true_row, brightness_scale: spec.brightness_scale })
        })
        .collect::<Result<_>>()?;
    write_ground_truth(&frames, &out_dir.join("ground_truth.csv"))?;
    Ok(frames)
}

fn write_ground_truth(frames: &[BatchFrame], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Input(e.to_string()))?;
    let csv_err = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(["identifier", "row"]).map_err(csv_err)?;
    for f in frames {
        w.write_record([format_timestamp(&f.timestamp), f.true_row.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Batch description read by the `synth` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scene: SceneSpec,
    pub start: NaiveDateTime,
    pub count: usize,
    /// Water rows ramp linearly from `row_start` to `row_end`.
    pub row_start: f64,
    pub row_end: f64,
    /// Optional sinusoid added to the ramp.
    pub sine_amplitude: f64,
    pub sine_period: f64,
    /// Every `dark_every`-th frame (1-based) is rendered at `dark_scale`.
    pub dark_every: usize,
    pub dark_scale: f64,
    /// Per-frame seeds derive from this.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            start: chrono::NaiveDate::from_ymd_opt(2019, 10, 3)
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .unwrap_or_default(),
            count: 100,
            row_start: 170.0,
            row_end: 230.0,
            sine_amplitude: 0.0,
            sine_period: 144.0,
            dark_every: 0,
            dark_scale: 0.1,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn water_rows(&self) -> Vec<f64> {
        let span = self.row_end - self.row_start;
        (0..self.count)
            .map(|i| {
                let t = if self.count > 1 { i as f64 / (self.count - 1) as f64 } else { 0.0 };
                let wave = if self.sine_period > 0.0 {
                    self.sine_amplitude * (std::f64::consts::TAU * i as f64 / self.sine_period).sin()
                } else {
                    0.0
                };
                self.row_start + span * t + wave
            })
            .collect()
    }

    pub fn specs(&self) -> Vec<SceneSpec> {
        self.water_rows()
            .into_iter()
            .enumerate()
            .map(|(i, water_row)| {
                let dark = self.dark_every > 0 && (i + 1) % self.dark_every == 0;
                SceneSpec {
                    water_row,
                    seed: derive_seed(self.seed, &i.to_string()),
                    brightness_scale: if dark { self.dark_scale } else { self.scene.brightness_scale },
                    ..self.scene.clone()
                }
            })
            .collect()
    }

    pub fn render(&self, out_dir: &Path) -> Result<Vec<BatchFrame>> {
        render_batch_with(&self.specs(), self.start, out_dir)
    }
}
