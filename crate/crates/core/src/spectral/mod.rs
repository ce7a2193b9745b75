//! Spectral derivatives, derivative-based band screening and red-edge position.
//!
//! All derivatives are taken with respect to wavelength in nanometres.

mod savgol;
mod selection;

pub use savgol::{derivative_weights, savitzky_golay_derivative, uniform_spacing, SgConfig, GRID_TOLERANCE};
pub use selection::{
    find_extrema_bands, intersect_selections, screen_bands, BandSelection, Provenance,
    ScreeningConfig, SelectedBand, DEFAULT_INTERSECT_TOLERANCE, DEFAULT_PROMINENCE,
};

use crate::error::{Error, Result};

/// A spectrum sampled on a strictly increasing wavelength grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    wavelengths: Vec<f64>,
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(wavelengths: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} wavelengths but {} values",
                wavelengths.len(),
                values.len()
            )));
        }
        if wavelengths.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Axis("wavelengths must be strictly increasing".into()));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Argument(
                "spectrum contains sentinel values; filter masked pixels first".into(),
            ));
        }
        Ok(Self {
            wavelengths,
            values,
        })
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn with_values(&self, values: Vec<f64>) -> Spectrum {
        Spectrum {
            wavelengths: self.wavelengths.clone(),
            values,
        }
    }
}

fn first_difference(s: &Spectrum) -> Spectrum {
    let (x, y) = (&s.wavelengths, &s.values);
    let n = y.len();
    let slope = |i: usize| (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
    let mut d = Vec::with_capacity(n);
    d.push(slope(0));
    for i in 1..n - 1 {
        d.push(0.5 * (slope(i) + slope(i - 1)));
    }
    d.push(slope(n - 2));
    s.with_values(d)
}

/// Derivative by averaging the slopes to the two neighbours of each sample.
/// End samples use their single one-sided slope; order 2 applies the
/// operator twice.
pub fn central_difference(s: &Spectrum, order: usize) -> Result<Spectrum> {
    if s.len() < 3 {
        return Err(Error::Dimension(format!(
            "central difference needs >= 3 samples, got {}",
            s.len()
        )));
    }
    match order {
        1 => Ok(first_difference(s)),
        2 => Ok(first_difference(&first_difference(s))),
        other => Err(Error::Argument(format!("derivative order {other} not supported"))),
    }
}

pub const RED_EDGE_LO_NM: f64 = 680.0;
pub const RED_EDGE_HI_NM: f64 = 750.0;

/// Wavelength of maximum first derivative inside `[lo_nm, hi_nm]`; ties go
/// to the shorter wavelength.
pub fn red_edge_position(s: &Spectrum, lo_nm: f64, hi_nm: f64) -> Result<f64> {
    let inside: Vec<usize> = (0..s.len())
        .filter(|&i| s.wavelengths[i] >= lo_nm && s.wavelengths[i] <= hi_nm)
        .collect();
    if inside.len() < 5 {
        return Err(Error::Coverage(format!(
            "{} samples in [{lo_nm}, {hi_nm}] nm, need at least 5",
            inside.len()
        )));
    }
    let d = central_difference(s, 1)?;
    let mut best = inside[0];
    for &i in &inside[1..] {
        if d.values[i] > d.values[best] {
            best = i;
        }
    }
    Ok(s.wavelengths[best])
}
