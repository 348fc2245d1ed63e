//! Split sliding window: the squared difference between an upper and a
//! lower half-window peaks when the divider sits on the water line.
//!
//! For divider row `y` and half height `h`, column `x` pairs rows
//! `r in [y - h + o(x), y + o(x))` with `r + h`, where
//! `o(x) = round(shear_slope * (x - x0))` keeps the window parallel to the
//! water line. Pairs falling outside the region are skipped and `S(y)` is
//! the mean over the pairs that remain.

use serde::{Deserialize, Serialize};

use super::{center_column, Diagnostics, Method, WaterLineEstimate};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Raster};

/// Which divider wins when two rows have the same score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Larger `y`: report the lower (more conservative) water line.
    #[default]
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsdWindowConfig {
    pub half_height: usize,
    /// Window width; `None` spans the whole region. Narrower windows are centred.
    pub width: Option<usize>,
    pub shear_slope: f64,
    pub tie_break: TieBreak,
}

impl Default for SsdWindowConfig {
    fn default() -> Self {
        Self { half_height: 8, width: None, shear_slope: 0.0, tie_break: TieBreak::Lower }
    }
}

/// Scores within this relative distance of the maximum count as ties.
const TIE_EPS: f64 = 1e-12;

impl SsdWindowConfig {
    fn window_columns(&self, region_width: usize) -> Result<(usize, usize)> {
        let width = self.width.unwrap_or(region_width);
        if width < 2 {
            return Err(Error::Config(format!("ssd window width must be >= 2, got {width}")));
        }
        if width > region_width {
            return Err(Error::Size(format!(
                "ssd window width {width} exceeds region width {region_width}"
            )));
        }
        Ok(((region_width - width) / 2, width))
    }
}

/// `S(y)` for every divider from the bottom (`height - h - 1`) up to `h`.
pub fn ssd_profile(region: &GrayImage, cfg: &SsdWindowConfig) -> Result<Vec<(usize, f64)>> {
    let h = cfg.half_height;
    if h == 0 {
        return Err(Error::Config("ssd half_height must be >= 1".into()));
    }
    let height = region.height();
    if height < 2 * h + 1 {
        return Err(Error::Size(format!(
            "region of {height} rows too short for half-windows of {h}"
        )));
    }
    let (x0, width) = cfg.window_columns(region.width())?;

    // Per column: prefix sums of (I(r) - I(r + h))^2 over r in [0, height - h).
    let pair_rows = height - h;
    let mut prefix = vec![0.0f64; width * (pair_rows + 1)];
    let mut offsets = Vec::with_capacity(width);
    for c in 0..width {
        let x = x0 + c;
        let base = c * (pair_rows + 1);
        for r in 0..pair_rows {
            let d = region.get(x, r) - region.get(x, r + h);
            prefix[base + r + 1] = prefix[base + r] + d * d;
        }
        offsets.push((cfg.shear_slope * c as f64).round() as i64);
    }

    let clip = |v: i64| v.clamp(0, pair_rows as i64) as usize;
    let mut profile = Vec::with_capacity(height - 2 * h);
    for y in (h..height - h).rev() {
        let (mut sum, mut count) = (0.0, 0usize);
        for (c, &o) in offsets.iter().enumerate() {
            let lo = clip(y as i64 - h as i64 + o);
            let hi = clip(y as i64 + o);
            if hi > lo {
                let base = c * (pair_rows + 1);
                sum += prefix[base + hi] - prefix[base + lo];
                count += hi - lo;
            }
        }
        profile.push((y, if count > 0 { sum / count as f64 } else { 0.0 }));
    }
    Ok(profile)
}

/// Divider with the highest `S(y)`, read at the region's centre column.
pub fn detect_waterline_ssd(region: &GrayImage, cfg: &SsdWindowConfig) -> Result<WaterLineEstimate> {
    let profile = ssd_profile(region, cfg)?;
    let max = profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let tol = max.abs() * TIE_EPS;
    let near = profile.iter().filter(|p| p.1 >= max - tol).map(|p| p.0);
    let divider = match cfg.tie_break {
        TieBreak::Lower => near.max(),
        TieBreak::Upper => near.min(),
    }
    .expect("profile is non-empty");
    let (x0, _) = cfg.window_columns(region.width())?;
    let row = divider as f64 + cfg.shear_slope * (center_column(region.width()) - x0 as f64);
    Ok(WaterLineEstimate {
        row_at_center: row.clamp(0.0, (region.height() - 1) as f64),
        method: Method::Ssd,
        diagnostics: Diagnostics::Ssd { divider_row: divider, profile },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct evaluation of the split-window score, one pair at a time.
    fn brute_profile(img: &GrayImage, h: usize, slope: f64) -> Vec<(usize, f64)> {
        let (w, ht) = (img.width() as i64, img.height() as i64);
        let mut out = Vec::new();
        for y in (h as i64..ht - h as i64).rev() {
            let (mut s, mut n) = (0.0, 0);
            for x in 0..w {
                let o = (slope * x as f64).round() as i64;
                for yp in (y - h as i64)..y {
                    let (u, l) = (yp + o, yp + o + h as i64);
                    if u >= 0 && l < ht {
                        let d = img.get(x as usize, u as usize) - img.get(x as usize, l as usize);
                        s += d * d;
                        n += 1;
                    }
                }
            }
            out.push((y as usize, if n > 0 { s / n as f64 } else { 0.0 }));
        }
        out
    }

    fn step(w: usize, h: usize, row: usize, slope: f64) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            if (y as f64) < row as f64 + (slope * x as f64).round() { 1.0 } else { 0.0 }
        })
        .unwrap()
    }

    fn cfg(h: usize, slope: f64) -> SsdWindowConfig {
        SsdWindowConfig { half_height: h, shear_slope: slope, ..Default::default() }
    }

    #[test]
    fn uniform_region_scores_zero() {
        let p = ssd_profile(&GrayImage::filled(10, 40, 0.3).unwrap(), &cfg(4, 0.0)).unwrap();
        assert!(p.iter().all(|&(_, s)| s == 0.0));
        assert_eq!(p.first().unwrap().0, 40 - 4 - 1);
        assert_eq!(p.last().unwrap().0, 4);
    }

    #[test]
    fn step_peaks_at_boundary() {
        let img = step(20, 200, 100, 0.0);
        let p = ssd_profile(&img, &cfg(4, 0.0)).unwrap();
        let oracle = brute_profile(&img, 4, 0.0);
        for (a, b) in p.iter().zip(&oracle) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
        let est = detect_waterline_ssd(&img, &cfg(4, 0.0)).unwrap();
        assert_eq!(est.row_at_center, 100.0);
    }

    #[test]
    fn sheared_step_peaks_at_left_edge_row() {
        let img = step(40, 200, 100, 0.1);
        let est = detect_waterline_ssd(&img, &cfg(4, 0.1)).unwrap();
        match est.diagnostics {
            Diagnostics::Ssd { divider_row, ref profile } => {
                assert_eq!(divider_row, 100);
                let oracle = brute_profile(&img, 4, 0.1);
                for (a, b) in profile.iter().zip(&oracle) {
                    assert!((a.1 - b.1).abs() < 1e-12);
                }
            }
            _ => unreachable!(),
        }
        assert!((est.row_at_center - (100.0 + 0.1 * 19.5)).abs() < 1e-12);
    }

    #[test]
    fn equal_steps_prefer_lower_divider() {
        let img = GrayImage::from_fn(12, 200, |_, y| match y {
            0..=59 => 1.0,
            60..=99 => 0.0,
            100..=139 => 1.0,
            _ => 0.0,
        })
        .unwrap();
        let est = detect_waterline_ssd(&img, &cfg(8, 0.0)).unwrap();
        assert_eq!(est.row_at_center, 140.0);
        let up = SsdWindowConfig { tie_break: TieBreak::Upper, ..cfg(8, 0.0) };
        assert_eq!(detect_waterline_ssd(&img, &up).unwrap().row_at_center, 60.0);
    }

    #[test]
    fn noise_still_returns_an_answer() {
        let mut rng = crate::rng::Rng::new(3);
        let img = GrayImage::from_fn(16, 64, |_, _| 0.0).unwrap();
        let noisy = GrayImage::from_clamped(16, 64, img.pixels().iter().map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap();
        let est = detect_waterline_ssd(&noisy, &cfg(8, 0.0)).unwrap();
        assert!(est.row_at_center >= 8.0 && est.row_at_center < 56.0);
    }

    #[test]
    fn too_short_region() {
        assert!(matches!(ssd_profile(&GrayImage::filled(4, 16, 0.0).unwrap(), &cfg(8, 0.0)), Err(Error::Size(_))));
        let narrow = SsdWindowConfig { width: Some(1), ..cfg(2, 0.0) };
        assert!(ssd_profile(&GrayImage::filled(4, 16, 0.0).unwrap(), &narrow).is_err());
    }

    proptest! {
        #[test]
        fn profile_matches_brute_force_and_is_nonnegative(
            vals in proptest::collection::vec(0.0f64..=1.0, 9 * 30), h in 1usize..8, slope in -0.4f64..0.4) {
            let img = GrayImage::new(9, 30, vals).unwrap();
            let p = ssd_profile(&img, &cfg(h, slope)).unwrap();
            let oracle = brute_profile(&img, h, slope);
            prop_assert_eq!(p.len(), oracle.len());
            for (a, b) in p.iter().zip(&oracle) {
                prop_assert_eq!(a.0, b.0);
                prop_assert!(a.1 >= 0.0);
                prop_assert!((a.1 - b.1).abs() < 1e-12);
            }
        }

        #[test]
        fn argmax_invariant_to_offset_and_equivariant_to_shift(
            row in 30usize..70, offset in 0.0f64..0.5, shift in 0usize..10) {
            let base = GrayImage::from_fn(10, 120, |x, y| {
                let v = if y < row { 0.5 } else { 0.1 };
                v + 0.02 * ((x * 7 + y * 3) % 5) as f64
            }).unwrap();
            let lifted = GrayImage::from_clamped(10, 120, base.pixels().iter().map(|v| v + offset).collect()).unwrap();
            prop_assume!(lifted.max_value() < 1.0);
            let a = detect_waterline_ssd(&base, &cfg(6, 0.0)).unwrap().row_at_center;
            let b = detect_waterline_ssd(&lifted, &cfg(6, 0.0)).unwrap().row_at_center;
            prop_assert_eq!(a, b);
            let moved = GrayImage::from_fn(10, 120, |x, y| base.get(x, y.saturating_sub(shift))).unwrap();
            let c = detect_waterline_ssd(&moved, &cfg(6, 0.0)).unwrap().row_at_center;
            prop_assert_eq!(a + shift as f64, c);
        }
    }
}
