//! Edge-map providers: built-in Sobel and Canny detectors, and ingestion of
//! edge maps produced by an external network (e.g. HED) as 8-bit images.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Sobel,
    Canny,
    External,
}

impl std::str::FromStr for EdgeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sobel" => Ok(Self::Sobel),
            "canny" => Ok(Self::Canny),
            "external" => Ok(Self::External),
            other => Err(Error::Config(format!("unknown edge provider `{other}`"))),
        }
    }
}

/// Edge strengths in `[0, 1]` together with the provider that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    map: GrayImage,
    provenance: EdgeKind,
}

impl EdgeMap {
    pub fn new(map: GrayImage, provenance: EdgeKind) -> Self {
        Self { map, provenance }
    }

    pub fn provenance(&self) -> EdgeKind {
        self.provenance
    }

    pub fn image(&self) -> &GrayImage {
        &self.map
    }

    pub fn into_image(self) -> GrayImage {
        self.map
    }

    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    /// Writes the map as an 8-bit grayscale PNG/PGM.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.map.save_8bit(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeProviderConfig {
    pub kind: EdgeKind,
    pub canny_low: f64,
    pub canny_high: f64,
    pub gaussian_sigma: f64,
    /// Path of the externally produced map for an input image. `{stem}`,
    /// `{name}` and `{timestamp}` are substituted; relative paths resolve
    /// against the input image's directory.
    pub external_path_template: String,
}

impl Default for EdgeProviderConfig {
    fn default() -> Self {
        Self {
            kind: EdgeKind::Sobel,
            canny_low: 0.1,
            canny_high: 0.3,
            gaussian_sigma: 1.4,
            external_path_template: "edges/{stem}.png".into(),
        }
    }
}

impl EdgeProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == EdgeKind::Canny {
            if !(0.0..=1.0).contains(&self.canny_low) || !(0.0..=1.0).contains(&self.canny_high) {
                return Err(Error::Config("canny thresholds must lie in [0, 1]".into()));
            }
            if self.canny_low >= self.canny_high {
                return Err(Error::Config(format!(
                    "canny_low ({}) must be below canny_high ({})",
                    self.canny_low, self.canny_high
                )));
            }
            if !(self.gaussian_sigma > 0.0) {
                return Err(Error::Config("gaussian_sigma must be > 0".into()));
            }
        }
        if self.kind == EdgeKind::External && !self.external_path_template.contains('{') {
            return Err(Error::Config(
                "external_path_template needs a {stem}, {name} or {timestamp} placeholder".into(),
            ));
        }
        Ok(())
    }

    /// Resolves the external edge-map path for one input image.
    pub fn external_path(&self, image_path: &Path, timestamp: Option<&str>) -> PathBuf {
        let stem = image_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let name = image_path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        let resolved = self
            .external_path_template
            .replace("{stem}", stem)
            .replace("{name}", name)
            .replace("{timestamp}", timestamp.unwrap_or(stem));
        let resolved = PathBuf::from(resolved);
        if resolved.is_absolute() {
            resolved
        } else {
            image_path.parent().unwrap_or(Path::new(".")).join(resolved)
        }
    }
}

/// Gradients below this are rounding residue from upstream filtering.
const GRADIENT_FLOOR: f64 = 1e-9;

/// Sobel derivatives with a zero border. Each derivative is the difference
/// of two identically weighted sums, so flat neighbourhoods give exactly 0,
/// and differences at rounding level are flushed to 0.
fn sobel_gradients(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 1..h - 1 {
        let (up, mid, down) = (img.row(y - 1), img.row(y), img.row(y + 1));
        for x in 1..w - 1 {
            let right = up[x + 1] + 2.0 * mid[x + 1] + down[x + 1];
            let left = up[x - 1] + 2.0 * mid[x - 1] + down[x - 1];
            let bottom = down[x - 1] + 2.0 * down[x] + down[x + 1];
            let top = up[x - 1] + 2.0 * up[x] + up[x + 1];
            let (dx, dy) = (right - left, bottom - top);
            if dx.abs() > GRADIENT_FLOOR || dy.abs() > GRADIENT_FLOOR {
                gx[y * w + x] = dx;
                gy[y * w + x] = dy;
            }
        }
    }
    (gx, gy)
}

fn rescale_by_max(mut values: Vec<f64>) -> Vec<f64> {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut values {
            *v /= max;
        }
    }
    values
}

fn require_size(img: &GrayImage, min: usize) -> Result<()> {
    if img.width() < min || img.height() < min {
        return Err(Error::Size(format!(
            "edge detection needs at least {min}x{min}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Sobel gradient magnitude, rescaled so the strongest response is 1.
pub fn sobel(img: &GrayImage) -> Result<EdgeMap> {
    require_size(img, 3)?;
    let (gx, gy) = sobel_gradients(img);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let map = GrayImage::from_clamped(img.width(), img.height(), rescale_by_max(mag))?;
    Ok(EdgeMap::new(map, EdgeKind::Sobel))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut tmp = vec![0.0; img.pixels().len()];
    for y in 0..h {
        let row = img.row(y as usize);
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x + i as isize - r).clamp(0, w - 1);
                s += kv * row[xx as usize];
            }
            tmp[(y * w + x) as usize] = s;
        }
    }
    let mut out = vec![0.0; tmp.len()];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y + i as isize - r).clamp(0, h - 1);
                s += kv * tmp[(yy * w + x) as usize];
            }
            out[(y * w + x) as usize] = s;
        }
    }
    GrayImage::from_clamped(img.width(), img.height(), out).expect("dimensions unchanged")
}

/// Gradient magnitude (rescaled to `[0, 1]`) after non-maximum suppression
/// along the gradient direction quantized to 0, 45, 90 and 135 degrees.
///
/// Plateaus of equal magnitude keep only their first pixel along the
/// gradient direction, so a symmetric step yields a one-pixel line.
pub fn non_max_suppression(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let (gx, gy) = sobel_gradients(img);
    let mag = rescale_by_max(gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect());
    let mut out = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            // (dx, dy) of the neighbour along +gradient; y grows downward.
            let (dx, dy): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let ahead = mag[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            let behind = mag[(y as isize - dy) as usize * w + (x as isize - dx) as usize];
            if m > behind && m >= ahead {
                out[i] = m;
            }
        }
    }
    out
}

/// Canny detector producing a binary `{0, 1}` map.
///
/// A pixel is strong when its suppressed magnitude exceeds `canny_high`
/// and weak when it exceeds `canny_low`; weak pixels survive when
/// 8-connected to a strong one.
pub fn canny(img: &GrayImage, cfg: &EdgeProviderConfig) -> Result<EdgeMap> {
    require_size(img, 5)?;
    let check = EdgeProviderConfig { kind: EdgeKind::Canny, ..cfg.clone() };
    check.validate()?;
    let (w, h) = (img.width(), img.height());
    let blurred = gaussian_blur(img, cfg.gaussian_sigma);
    let nms = non_max_suppression(&blurred);

    let mut out = vec![0.0; w * h];
    let mut queue: VecDeque<usize> = nms
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > cfg.canny_high)
        .map(|(i, _)| i)
        .collect();
    for &i in &queue {
        out[i] = 1.0;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && nms[j] > cfg.canny_low {
                    out[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(EdgeMap::new(GrayImage::new(w, h, out)?, EdgeKind::Canny))
}

/// Reads an externally produced 8-bit edge map, checking its size against
/// `expected` (width, height) when given.
pub fn load_external(path: impl AsRef<Path>, expected: Option<(usize, usize)>) -> Result<EdgeMap> {
    let path = path.as_ref();
    let ingest = |reason: String| Error::Ingest { path: path.to_path_buf(), reason };
    if !path.is_file() {
        return Err(ingest("file not found".into()));
    }
    let map = GrayImage::load_8bit(path).map_err(|e| ingest(e.to_string()))?;
    if let Some((w, h)) = expected {
        if (map.width(), map.height()) != (w, h) {
            return Err(ingest(format!(
                "edge map is {}x{}, expected {w}x{h}",
                map.width(),
                map.height()
            )));
        }
    }
    Ok(EdgeMap::new(map, EdgeKind::External))
}
