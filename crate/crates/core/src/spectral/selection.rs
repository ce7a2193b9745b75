//! Band screening from the peaks and troughs of derivative spectra.

use std::fmt;

use super::{savitzky_golay_derivative, SgConfig, Spectrum};
use crate::error::{Error, Result};
use crate::hypercube::{HyperCube, WavelengthAxis};

pub const DEFAULT_PROMINENCE: f64 = 0.3;
pub const DEFAULT_INTERSECT_TOLERANCE: usize = 3;

/// Which derivative screen kept a band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    FirstDeriv,
    SecondDeriv,
    Both,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::FirstDeriv => "first-deriv",
            Provenance::SecondDeriv => "second-deriv",
            Provenance::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedBand {
    pub index: usize,
    pub wavelength_nm: f64,
    pub provenance: Provenance,
    /// `|d_i| / max_j |d_j|` of the derivative that produced the band.
    pub score: f64,
}

/// Sorted, duplicate-free set of retained bands on a given axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSelection {
    axis: WavelengthAxis,
    bands: Vec<SelectedBand>,
}

impl BandSelection {
    pub fn empty(axis: WavelengthAxis) -> Self {
        Self {
            axis,
            bands: Vec::new(),
        }
    }

    /// Builds a selection, sorting by index. Duplicate indices keep the
    /// higher score.
    pub fn from_bands(axis: WavelengthAxis, mut bands: Vec<SelectedBand>) -> Result<Self> {
        if let Some(b) = bands.iter().find(|b| b.index >= axis.len()) {
            return Err(Error::Index(format!(
                "band {} outside axis of {}",
                b.index,
                axis.len()
            )));
        }
        bands.sort_by(|a, b| a.index.cmp(&b.index).then(b.score.total_cmp(&a.score)));
        bands.dedup_by_key(|b| b.index);
        Ok(Self { axis, bands })
    }

    pub fn axis(&self) -> &WavelengthAxis {
        &self.axis
    }

    pub fn bands(&self) -> &[SelectedBand] {
        &self.bands
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bands.iter().map(|b| b.index).collect()
    }

    pub fn wavelengths_nm(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.wavelength_nm).collect()
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    fn union(&mut self, other: BandSelection) {
        let mut all = std::mem::take(&mut self.bands);
        all.extend(other.bands);
        *self = BandSelection::from_bands(self.axis.clone(), all).expect("same axis");
    }

    /// `band_index,wavelength_nm,provenance` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("band_index,wavelength_nm,provenance\n");
        for b in &self.bands {
            s.push_str(&format!("{},{},{}\n", b.index, b.wavelength_nm, b.provenance));
        }
        s
    }
}

/// Strict local extrema of `d` whose magnitude reaches `prominence_ratio`
/// times the largest magnitude. A flat-topped extremum is reported at its
/// lowest index. End samples are never reported.
pub fn find_extrema_bands(
    d: &Spectrum,
    prominence_ratio: f64,
    provenance: Provenance,
) -> Result<BandSelection> {
    if !(prominence_ratio > 0.0 && prominence_ratio <= 1.0) {
        return Err(Error::Argument(format!(
            "prominence ratio must be in (0, 1], got {prominence_ratio}"
        )));
    }
    let axis = &WavelengthAxis::new(d.wavelengths().to_vec())?;
    let v = d.values();
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return Ok(BandSelection::empty(axis.clone()));
    }
    let threshold = prominence_ratio * peak;
    let mut bands = Vec::new();
    let n = v.len();
    let mut i = 1;
    while i + 1 < n {
        // extend over a run of equal values
        let mut j = i;
        while j + 1 < n && v[j + 1] == v[i] {
            j += 1;
        }
        if j + 1 >= n {
            break;
        }
        let (left, right) = (v[i - 1], v[j + 1]);
        let is_max = v[i] > left && v[i] > right;
        let is_min = v[i] < left && v[i] < right;
        if (is_max || is_min) && v[i].abs() >= threshold {
            bands.push(SelectedBand {
                index: i,
                wavelength_nm: axis.values()[i],
                provenance,
                score: v[i].abs() / peak,
            });
        }
        i = j + 1;
    }
    BandSelection::from_bands(axis.clone(), bands)
}

/// Bands of `a` that have a band of `b` within `tol_bands` indices.
pub fn intersect_selections(
    a: &BandSelection,
    b: &BandSelection,
    tol_bands: usize,
) -> Result<BandSelection> {
    if a.axis != b.axis {
        return Err(Error::Argument("selections use different wavelength axes".into()));
    }
    let bands = a
        .bands
        .iter()
        .filter_map(|x| {
            b.bands
                .iter()
                .filter(|y| x.index.abs_diff(y.index) <= tol_bands)
                .min_by_key(|y| (x.index.abs_diff(y.index), y.index))
                .map(|y| SelectedBand {
                    provenance: Provenance::Both,
                    score: x.score.max(y.score),
                    ..*x
                })
        })
        .collect();
    BandSelection::from_bands(a.axis.clone(), bands)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreeningConfig {
    /// Window and polynomial order; the derivative order field is ignored.
    pub sg: SgConfig,
    pub prominence_ratio: f64,
    pub tol_bands: usize,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            sg: SgConfig::default(),
            prominence_ratio: DEFAULT_PROMINENCE,
            tol_bands: DEFAULT_INTERSECT_TOLERANCE,
        }
    }
}

/// Zeroes a derivative whose magnitude is at rounding level for the
/// spectrum it came from, so flat spectra yield no extrema.
fn flush_roundoff(s: &Spectrum, d: Spectrum, order: i32) -> Result<Spectrum> {
    let h = super::uniform_spacing(s.wavelengths())?;
    let scale = s.values().iter().fold(0.0f64, |m, v| m.max(v.abs())) / h.powi(order);
    let peak = d.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak <= 1e-10 * scale {
        return Spectrum::new(d.wavelengths().to_vec(), vec![0.0; d.len()]);
    }
    Ok(d)
}

/// Screens bands over a set of cubes: the foreground-mean spectrum of each
/// cube is differentiated to first and second order, extrema of each order
/// are pooled across cubes, and the two pools are intersected.
pub fn screen_bands(cubes: &[HyperCube], cfg: &ScreeningConfig) -> Result<BandSelection> {
    let first = cubes
        .first()
        .ok_or_else(|| Error::Argument("no cubes to screen".into()))?;
    let axis = first.axis().clone();
    if cubes.iter().any(|c| c.axis() != &axis) {
        return Err(Error::Argument("cubes do not share a wavelength axis".into()));
    }
    let mut pooled_first = BandSelection::empty(axis.clone());
    let mut pooled_second = BandSelection::empty(axis.clone());
    for (i, cube) in cubes.iter().enumerate() {
        let mean = cube.mean_spectrum();
        if mean.iter().any(|v| v.is_nan()) {
            return Err(Error::Argument(format!("cube {i} has no foreground pixels")));
        }
        let s = Spectrum::new(axis.values().to_vec(), mean)?;
        let d1 = flush_roundoff(&s, savitzky_golay_derivative(&s, &cfg.sg.with_deriv(1))?, 1)?;
        let d2 = flush_roundoff(&s, savitzky_golay_derivative(&s, &cfg.sg.with_deriv(2))?, 2)?;
        pooled_first.union(find_extrema_bands(
            &d1,
            cfg.prominence_ratio,
            Provenance::FirstDeriv,
        )?);
        pooled_second.union(find_extrema_bands(
            &d2,
            cfg.prominence_ratio,
            Provenance::SecondDeriv,
        )?);
    }
    intersect_selections(&pooled_first, &pooled_second, cfg.tol_bands)
}
