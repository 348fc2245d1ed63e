//! Pixel containers shared by every stage of the pipeline.
//!
//! Rows are stored top to bottom: `y = 0` is the top of the frame and a
//! rising water line moves toward smaller `y`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Edge, Error, Result};

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    pub fn right(&self) -> usize {
        self.x + self.width
    }

    pub fn bottom(&self) -> usize {
        self.y + self.height
    }

    /// Checks that the rectangle is non-empty and lies inside a
    /// `width` x `height` host.
    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Size(format!(
                "rectangle {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        if self.right() > width {
            return Err(Error::OutOfBounds { edge: Edge::Right, extent: self.right(), limit: width });
        }
        if self.bottom() > height {
            return Err(Error::OutOfBounds { edge: Edge::Bottom, extent: self.bottom(), limit: height });
        }
        Ok(())
    }

    /// Rectangle `inner`, given relative to `self`, expressed in the frame `self` lives in.
    pub fn compose(&self, inner: &Rect) -> Rect {
        Rect::new(self.x + inner.x, self.y + inner.y, inner.width, inner.height)
    }
}

/// Common access to row-major pixel grids.
pub trait Raster: Sized {
    type Pixel: Copy;

    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn pixels(&self) -> &[Self::Pixel];

    /// Builds an image from parts the caller has already validated.
    fn from_raw_parts(width: usize, height: usize, pixels: Vec<Self::Pixel>) -> Self;

    fn get(&self, x: usize, y: usize) -> Self::Pixel {
        self.pixels()[y * self.width() + x]
    }

    fn row(&self, y: usize) -> &[Self::Pixel] {
        let w = self.width();
        &self.pixels()[y * w..(y + 1) * w]
    }

    fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width(), self.height())
    }
}

/// Copies the pixels under `roi` into a new image of the same kind.
pub fn crop<I: Raster>(img: &I, roi: &Rect) -> Result<I> {
    roi.check_within(img.width(), img.height())?;
    let mut out = Vec::with_capacity(roi.width * roi.height);
    for y in roi.y..roi.bottom() {
        out.extend_from_slice(&img.row(y)[roi.x..roi.right()]);
    }
    Ok(I::from_raw_parts(roi.width, roi.height, out))
}

/// 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    pub fn flip_vertical(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in (0..self.height).rev() {
            pixels.extend_from_slice(self.row(y));
        }
        Self { width: self.width, height: self.height, pixels }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let rgb = image::open(path.as_ref())?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.pixels().map(|p| p.0).collect();
        Self::new(w as usize, h as usize, pixels)
    }

    /// Writes PNG, or binary PPM for `.ppm`/`.pnm` extensions.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions");
        buf.save(path.as_ref())?;
        Ok(())
    }
}

impl Raster for ColorImage {
    type Pixel = [u8; 3];

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }
    fn from_raw_parts(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Self {
        Self { width, height, pixels }
    }
}

/// Real-valued single-channel image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Fails when any value is outside `[0, 1]` or NaN.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        if let Some(i) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input(format!(
                "gray value {} at index {i} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// Builds an image, clamping every value into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(width: usize, height: usize, mut pixels: Vec<f64>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        for v in &mut pixels {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::from_clamped(width, height, pixels)
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn transpose(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for x in 0..self.width {
            for y in 0..self.height {
                pixels.push(self.get(x, y));
            }
        }
        Self { width: self.height, height: self.width, pixels }
    }

    pub fn flip_vertical(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in (0..self.height).rev() {
            pixels.extend_from_slice(self.row(y));
        }
        Self { width: self.width, height: self.height, pixels }
    }

    pub fn max_value(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.pixels.iter().copied().fold(1.0, f64::min)
    }

    /// Decodes an 8-bit grayscale PNG/PGM (other formats are converted to luma)
    /// and maps each value `v` to `v / 255`.
    pub fn load_8bit(path: impl AsRef<Path>) -> Result<Self> {
        let luma = image::open(path.as_ref())?.to_luma8();
        let (w, h) = luma.dimensions();
        let pixels = luma.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Self::new(w as usize, h as usize, pixels)
    }

    /// Quantizes to 8 bits (`round(v * 255)`) and writes PNG, or binary PGM for `.pgm`.
    pub fn save_8bit(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw: Vec<u8> = self.pixels.iter().map(|&v| quantize(v)).collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions");
        let is_pnm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("pnm"));
        if is_pnm {
            use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
            use image::ImageEncoder;
            let file = std::io::BufWriter::new(std::fs::File::create(path)?);
            PnmEncoder::new(file)
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
                .write_image(buf.as_raw(), buf.width(), buf.height(), image::ExtendedColorType::L8)?;
        } else {
            buf.save(path)?;
        }
        Ok(())
    }
}

impl Raster for GrayImage {
    type Pixel = f64;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[f64] {
        &self.pixels
    }
    fn from_raw_parts(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        Self { width, height, pixels }
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Size(format!("image {width}x{height} must be at least 1x1")));
    }
    if width * height != len {
        return Err(Error::Size(format!(
            "{len} pixels do not fill a {width}x{height} image"
        )));
    }
    Ok(())
}

/// ITU-R BT.601 luma, normalized to `[0, 1]`.
pub fn to_gray(img: &ColorImage) -> GrayImage {
    let pixels = img
        .pixels()
        .iter()
        .map(|&[r, g, b]| {
            let luma = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
            (luma / 255.0).clamp(0.0, 1.0)
        })
        .collect();
    GrayImage::from_raw_parts(img.width(), img.height(), pixels)
}
