//! Smoothing, darkness screening and brightness enhancement of the ROI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorImage, GrayImage, Raster};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningConfig {
    /// Pixels sampled (with replacement) to estimate channel means.
    pub sample_count: usize,
    /// Reject when any channel mean falls below this (0-255 scale).
    pub dark_threshold: f64,
    /// Boost when the all-channel mean is at or below this (0-255 scale).
    pub boost_threshold: f64,
    pub boost_factor: f64,
    pub rng_seed: u64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            sample_count: 500,
            dark_threshold: 30.0,
            boost_threshold: 100.0,
            boost_factor: 1.5,
            rng_seed: 0,
        }
    }
}

impl ScreeningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::Config("screening.sample_count must be >= 1".into()));
        }
        if !(self.dark_threshold > 0.0
            && self.dark_threshold <= self.boost_threshold
            && self.boost_threshold <= 255.0)
        {
            return Err(Error::Config(format!(
                "screening thresholds must satisfy 0 < dark ({}) <= boost ({}) <= 255",
                self.dark_threshold, self.boost_threshold
            )));
        }
        if !(self.boost_factor >= 1.0) {
            return Err(Error::Config(format!(
                "screening.boost_factor must be >= 1, got {}",
                self.boost_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    RejectedDark,
    Boosted,
    Passed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningOutcome {
    pub verdict: Verdict,
    /// Sampled per-channel means on the 0-255 scale.
    pub mean_rgb: [f64; 3],
}

/// Mean over a `(2r+1)` square window, clipped at the borders.
///
/// Uses a summed-area table, so the cost does not depend on `radius`.
pub fn box_filter(img: &GrayImage, radius: usize) -> GrayImage {
    if radius == 0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let stride = w + 1;
    let mut sat = vec![0.0f64; stride * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0.0;
        for x in 0..w {
            row_sum += img.get(x, y);
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row_sum;
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(w);
            let sum = sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
                + sat[y0 * stride + x0];
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            out.push(sum / n);
        }
    }
    // Cancellation in the table can leave values a few ulps outside [0, 1].
    GrayImage::from_clamped(w, h, out).expect("dimensions unchanged")
}

/// Samples pixels to decide whether the frame is too dark to process, and
/// brightens dim frames.
///
/// The returned image is a copy of the input unless the verdict is
/// [`Verdict::Boosted`].
pub fn screen_brightness(
    img: &ColorImage,
    cfg: &ScreeningConfig,
    rng: &mut Rng,
) -> (ScreeningOutcome, ColorImage) {
    let n = img.pixels().len();
    let mut sums = [0.0f64; 3];
    for _ in 0..cfg.sample_count {
        let px = img.pixels()[rng.index(n)];
        for (s, &c) in sums.iter_mut().zip(px.iter()) {
            *s += f64::from(c);
        }
    }
    let count = cfg.sample_count.max(1) as f64;
    let mean_rgb = sums.map(|s| s / count);
    let overall = mean_rgb.iter().sum::<f64>() / 3.0;

    let verdict = if mean_rgb.iter().any(|&m| m < cfg.dark_threshold) {
        Verdict::RejectedDark
    } else if overall <= cfg.boost_threshold {
        Verdict::Boosted
    } else {
        Verdict::Passed
    };

    let out = match verdict {
        Verdict::Boosted => {
            let mut boosted = img.clone();
            for px in boosted.pixels_mut() {
                for c in px.iter_mut() {
                    *c = (f64::from(*c) * cfg.boost_factor).round().min(255.0) as u8;
                }
            }
            boosted
        }
        _ => img.clone(),
    };
    (ScreeningOutcome { verdict, mean_rgb }, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn naive_box(img: &GrayImage, r: usize) -> GrayImage {
        let (w, h) = (img.width() as isize, img.height() as isize);
        let r = r as isize;
        GrayImage::from_fn(img.width(), img.height(), |x, y| {
            let (mut s, mut n) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    if xx >= 0 && yy >= 0 && xx < w && yy < h {
                        s += img.get(xx as usize, yy as usize);
                        n += 1.0;
                    }
                }
            }
            s / n
        })
        .unwrap()
    }

    #[test]
    fn box_constant_and_identity() {
        let c = GrayImage::filled(9, 6, 0.4).unwrap();
        let out = box_filter(&c, 2);
        assert!(out.pixels().iter().all(|v| (v - 0.4).abs() < 1e-12));
        let img = GrayImage::from_fn(5, 5, |x, y| ((x * 3 + y) % 7) as f64 / 7.0).unwrap();
        assert_eq!(box_filter(&img, 0), img);
    }

    #[test]
    fn box_impulse_spreads_over_window() {
        let img = GrayImage::from_fn(7, 7, |x, y| if x == 3 && y == 3 { 1.0 } else { 0.0 }).unwrap();
        let out = box_filter(&img, 2);
        let oracle = naive_box(&img, 2);
        for (a, b) in out.pixels().iter().zip(oracle.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
        for y in 1..=5 {
            for x in 1..=5 {
                assert!((out.get(x, y) - oracle.get(x, y)).abs() < 1e-12);
            }
        }
        // Interior 5x5 windows containing the impulse see 1/25.
        assert!((out.get(3, 3) - 1.0 / 25.0).abs() < 1e-12);
        assert!((out.get(2, 2) - 1.0 / 25.0).abs() < 1e-12);
        assert!((out.get(1, 3) - 1.0 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn screening_examples() {
        let cfg = ScreeningConfig::default();
        let black = ColorImage::filled(20, 20, [0, 0, 0]).unwrap();
        let (o, out) = screen_brightness(&black, &cfg, &mut Rng::new(1));
        assert_eq!(o.verdict, Verdict::RejectedDark);
        assert_eq!(out, black);

        let dim = ColorImage::filled(20, 20, [80, 80, 80]).unwrap();
        let (o, out) = screen_brightness(&dim, &cfg, &mut Rng::new(1));
        assert_eq!(o.verdict, Verdict::Boosted);
        assert_eq!(o.mean_rgb, [80.0; 3]);
        assert!(out.pixels().iter().all(|&p| p == [120, 120, 120]));

        let bright = ColorImage::filled(20, 20, [200, 200, 200]).unwrap();
        let (o, out) = screen_brightness(&bright, &cfg, &mut Rng::new(1));
        assert_eq!(o.verdict, Verdict::Passed);
        assert_eq!(out, bright);
    }

    #[test]
    fn darkness_is_per_channel() {
        // Plenty of light overall but the blue channel is starved.
        let img = ColorImage::filled(4, 4, [200, 200, 10]).unwrap();
        let (o, _) = screen_brightness(&img, &ScreeningConfig::default(), &mut Rng::new(3));
        assert_eq!(o.verdict, Verdict::RejectedDark);
    }

    #[test]
    fn boost_clamps_at_255() {
        let img = ColorImage::new(2, 1, vec![[40, 40, 40], [250, 250, 250]]).unwrap();
        let cfg = ScreeningConfig { boost_threshold: 255.0, ..Default::default() };
        let (o, out) = screen_brightness(&img, &cfg, &mut Rng::new(5));
        assert_eq!(o.verdict, Verdict::Boosted);
        assert_eq!(out.pixels(), &[[60, 60, 60], [255, 255, 255]]);
    }

    #[test]
    fn config_validation() {
        assert!(ScreeningConfig::default().validate().is_ok());
        let bad = ScreeningConfig { dark_threshold: 120.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ScreeningConfig { sample_count: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ScreeningConfig { boost_factor: 0.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn box_matches_naive_and_stays_in_range(
            vals in proptest::collection::vec(0.0f64..=1.0, 48), r in 0usize..4) {
            let img = GrayImage::new(8, 6, vals).unwrap();
            let out = box_filter(&img, r);
            let oracle = naive_box(&img, r);
            let (lo, hi) = (img.min_value(), img.max_value());
            for (a, b) in out.pixels().iter().zip(oracle.pixels()) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!(*a >= lo - 1e-12 && *a <= hi + 1e-12);
            }
        }

        #[test]
        fn screening_is_deterministic(seed in any::<u64>(), v in 0u8..=255) {
            let img = ColorImage::new(3, 3, (0..9).map(|i| [v, (i * 20) as u8, 128]).collect()).unwrap();
            let cfg = ScreeningConfig::default();
            let a = screen_brightness(&img, &cfg, &mut Rng::new(seed));
            let b = screen_brightness(&img, &cfg, &mut Rng::new(seed));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn uniform_image_sampled_mean_is_exact(seed in any::<u64>(), v in 0u8..=255) {
            let img = ColorImage::filled(11, 7, [v, v, v]).unwrap();
            let (o, out) = screen_brightness(&img, &ScreeningConfig::default(), &mut Rng::new(seed));
            prop_assert_eq!(o.mean_rgb, [f64::from(v); 3]);
            if o.verdict != Verdict::Boosted {
                prop_assert_eq!(out, img);
            }
        }
    }
}
