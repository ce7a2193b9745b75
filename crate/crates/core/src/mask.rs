//! Background removal by per-pixel spectral dispersion.
//!
//! A pixel is removed when the population standard deviation of its
//! spectrum reaches `ratio` times its mean (`ratio = 0.5` by default), or
//! when its mean is not positive. Removed pixels become all-`NaN`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypercube::HyperCube;

pub const DEFAULT_RATIO: f64 = 0.5;

/// Returns `true` when the spectrum should be kept as foreground.
pub fn keep_pixel(spectrum: &[f64], ratio: f64) -> bool {
    let n = spectrum.len() as f64;
    let mean = spectrum.iter().sum::<f64>() / n;
    // NaN means fail both comparisons, so sentinel spectra are never kept
    if !(mean > 0.0) {
        return false;
    }
    let var = spectrum.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() < ratio * mean
}

/// Applies the dispersion threshold to every pixel and returns a new cube.
pub fn remove_background(cube: &HyperCube, ratio: f64) -> Result<HyperCube> {
    if cube.bands() < 2 {
        return Err(Error::Dimension(format!(
            "background removal needs at least 2 bands, cube has {}",
            cube.bands()
        )));
    }
    if !(ratio > 0.0) {
        return Err(Error::Argument(format!("ratio must be positive, got {ratio}")));
    }
    let (w, h, bands) = (cube.width(), cube.height(), cube.bands());
    let plane = w * h;
    let data = cube.data();
    let keep: Vec<bool> = (0..plane)
        .into_par_iter()
        .map_init(
            || vec![0.0; bands],
            |buf, p| {
                for (b, v) in buf.iter_mut().enumerate() {
                    *v = data[b * plane + p];
                }
                keep_pixel(buf, ratio)
            },
        )
        .collect();
    let mut out = cube.clone();
    for (p, _) in keep.iter().enumerate().filter(|(_, &k)| !k) {
        out.mask_pixel(p % w, p / w);
    }
    Ok(out)
}

/// Fraction of pixels flagged as background.
pub fn mask_fraction(cube: &HyperCube) -> f64 {
    let total = cube.mask().len();
    if total == 0 {
        return 0.0;
    }
    (total - cube.valid_count()) as f64 / total as f64
}

/// Counts for the CLI summary line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSummary {
    pub masked: usize,
    pub total: usize,
}

impl MaskSummary {
    pub fn of(cube: &HyperCube) -> Self {
        let total = cube.mask().len();
        Self {
            masked: total - cube.valid_count(),
            total,
        }
    }
}

impl std::fmt::Display for MaskSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let frac = if self.total == 0 {
            0.0
        } else {
            self.masked as f64 / self.total as f64
        };
        write!(f, "masked={} total={} fraction={frac}", self.masked, self.total)
    }
}
