//! Radiometric calibration.
//!
//! Two routes are provided: reference-plate reflectance
//! (`TR = DN_o / DN_r * RP_r`) and a per-band linear gain/offset model
//! `L = a * DC + b` whose offset is pinned by a zero dark response.

use std::path::Path;

use crate::error::{Error, Result};
use crate::hypercube::{HyperCube, WavelengthAxis};

/// Raw object counts plus per-band reference-plate measurements.
#[derive(Debug, Clone)]
pub struct CalibrationInputs {
    /// Raw digital numbers, shaped like the output cube.
    pub dn_object: HyperCube,
    pub dn_reference: Vec<f64>,
    pub rp_reference: Vec<f64>,
}

impl CalibrationInputs {
    pub fn new(dn_object: HyperCube, dn_reference: Vec<f64>, rp_reference: Vec<f64>) -> Result<Self> {
        let bands = dn_object.bands();
        if dn_reference.len() != bands || rp_reference.len() != bands {
            return Err(Error::Dimension(format!(
                "reference vectors have {} / {} entries for {bands} bands",
                dn_reference.len(),
                rp_reference.len()
            )));
        }
        if let Some(band) = dn_reference.iter().position(|&d| d == 0.0) {
            return Err(Error::DivisionDomain { band });
        }
        if let Some(b) = dn_reference.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::Argument(format!(
                "reference DN must be positive, band {b} has {}",
                dn_reference[b]
            )));
        }
        if let Some(b) = rp_reference.iter().position(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::Argument(format!(
                "plate reflectance must lie in (0, 1], band {b} has {}",
                rp_reference[b]
            )));
        }
        Ok(Self {
            dn_object,
            dn_reference,
            rp_reference,
        })
    }
}

/// Converts raw counts to reflectance band by band. Negative results are kept.
pub fn reflectance_calibrate(inputs: &CalibrationInputs) -> Result<HyperCube> {
    let cube = &inputs.dn_object;
    if inputs.dn_reference.len() != cube.bands() || inputs.rp_reference.len() != cube.bands() {
        return Err(Error::Dimension("reference vectors do not match band count".into()));
    }
    if let Some(band) = inputs.dn_reference.iter().position(|&d| d == 0.0) {
        return Err(Error::DivisionDomain { band });
    }
    let plane = cube.height() * cube.width();
    let data = cube
        .data()
        .chunks(plane.max(1))
        .zip(inputs.dn_reference.iter().zip(&inputs.rp_reference))
        .flat_map(|(band, (&dn_r, &rp_r))| band.iter().map(move |&dn_o| dn_o / dn_r * rp_r))
        .collect();
    HyperCube::new(cube.height(), cube.width(), data, cube.axis().clone())
}

/// Per-band gain `a` and offset `b` of `L = a * DC + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCalibration {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
}

/// Solves gain and offset from a known radiance `L` at count `DC` and the
/// dark count `DC0`, which must map to zero radiance.
pub fn solve_linear_calibration(
    radiance: &[f64],
    counts: &[f64],
    dark_counts: &[f64],
) -> Result<LinearCalibration> {
    if radiance.len() != counts.len() || counts.len() != dark_counts.len() {
        return Err(Error::Dimension(format!(
            "band counts differ: L={}, DC={}, DC0={}",
            radiance.len(),
            counts.len(),
            dark_counts.len()
        )));
    }
    let mut gain = Vec::with_capacity(radiance.len());
    let mut offset = Vec::with_capacity(radiance.len());
    for (band, ((&l, &dc), &dc0)) in radiance.iter().zip(counts).zip(dark_counts).enumerate() {
        if dc == dc0 {
            return Err(Error::DegenerateCalibration { band });
        }
        let a = l / (dc - dc0);
        if !a.is_finite() || a == 0.0 {
            return Err(Error::Numeric(format!("gain {a} in band {band}")));
        }
        gain.push(a);
        offset.push(-a * dc0);
    }
    Ok(LinearCalibration { gain, offset })
}

/// Applies `L = a * DC + b` per band.
pub fn apply_linear_calibration(cal: &LinearCalibration, counts: &[f64]) -> Result<Vec<f64>> {
    if counts.len() != cal.gain.len() {
        return Err(Error::Dimension(format!(
            "{} counts for {} calibrated bands",
            counts.len(),
            cal.gain.len()
        )));
    }
    Ok(counts
        .iter()
        .zip(cal.gain.iter().zip(&cal.offset))
        .map(|(&dc, (&a, &b))| a.mul_add(dc, b))
        .collect())
}

/// Per-band mean over repeated measurements, skipping `NaN` entries.
pub fn average_spectra(spectra: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = spectra
        .first()
        .ok_or_else(|| Error::Argument("no spectra to average".into()))?;
    let n = first.len();
    if let Some(i) = spectra.iter().position(|s| s.len() != n) {
        return Err(Error::Argument(format!(
            "spectrum {i} has {} bands, expected {n}",
            spectra[i].len()
        )));
    }
    Ok((0..n)
        .map(|b| {
            let (sum, count) = spectra
                .iter()
                .map(|s| s[b])
                .filter(|v| !v.is_nan())
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if count == 0 {
                f64::NAN
            } else {
                sum / count as f64
            }
        })
        .collect())
}

/// One row of a reference-plate CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub wavelength_nm: f64,
    pub dn_reference: f64,
    pub rp_reference: f64,
}

/// Parses `wavelength_nm,dn_reference,rp_reference` rows; a header line is optional.
pub fn parse_reference_csv(text: &str) -> Result<Vec<ReferenceRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "reference line {}: expected 3 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("reference line {}: bad number '{s}'", lineno + 1)))
        };
        rows.push(ReferenceRow {
            wavelength_nm: num(fields[0])?,
            dn_reference: num(fields[1])?,
            rp_reference: num(fields[2])?,
        });
    }
    Ok(rows)
}

pub fn load_reference_csv(path: impl AsRef<Path>) -> Result<Vec<ReferenceRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_reference_csv(&text)
}

/// Matches reference rows to the cube axis (within `tol_nm`) and returns the
/// band-ordered `(dn_reference, rp_reference)` vectors.
pub fn align_reference(
    axis: &WavelengthAxis,
    rows: &[ReferenceRow],
    tol_nm: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut dn = Vec::with_capacity(axis.len());
    let mut rp = Vec::with_capacity(axis.len());
    let mut missing = Vec::new();
    for &w in axis.values() {
        match rows
            .iter()
            .filter(|r| (r.wavelength_nm - w).abs() <= tol_nm)
            .min_by(|a, b| {
                (a.wavelength_nm - w)
                    .abs()
                    .total_cmp(&(b.wavelength_nm - w).abs())
            }) {
            Some(r) => {
                dn.push(r.dn_reference);
                rp.push(r.rp_reference);
            }
            None => missing.push(format!("{w}")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Argument(format!(
            "reference has no entry for wavelengths (nm): {}",
            missing.join(", ")
        )));
    }
    Ok((dn, rp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_band(v: f64) -> HyperCube {
        HyperCube::new(1, 1, vec![v], WavelengthAxis::new(vec![500.0]).unwrap()).unwrap()
    }

    #[test]
    fn plate_substitution() {
        let inputs = CalibrationInputs::new(single_band(50.0), vec![100.0], vec![0.5]).unwrap();
        assert_eq!(reflectance_calibrate(&inputs).unwrap().data(), &[0.25]);
    }

    #[test]
    fn equal_counts_give_plate_reflectance() {
        let inputs = CalibrationInputs::new(single_band(123.0), vec![123.0], vec![0.37]).unwrap();
        assert_eq!(reflectance_calibrate(&inputs).unwrap().data(), &[0.37]);
    }

    #[test]
    fn zero_reference_names_band() {
        let axis = WavelengthAxis::new(vec![500.0, 600.0, 700.0]).unwrap();
        let cube = HyperCube::new(1, 1, vec![1.0, 2.0, 3.0], axis).unwrap();
        let err = CalibrationInputs::new(cube, vec![1.0, 0.0, 1.0], vec![0.5; 3]).unwrap_err();
        assert!(matches!(err, Error::DivisionDomain { band: 1 }));
    }

    #[test]
    fn negative_reflectance_is_kept() {
        let inputs = CalibrationInputs::new(single_band(-4.0), vec![8.0], vec![1.0]).unwrap();
        assert_eq!(reflectance_calibrate(&inputs).unwrap().data(), &[-0.5]);
    }

    #[test]
    fn plate_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let axis = WavelengthAxis::uniform(400.0, 1000.0, 7).unwrap();
        let (h, w) = (5, 6);
        let cube = HyperCube::from_fn(h, w, axis, |_, _, _| rng.gen_range(1.0..4000.0)).unwrap();
        let dn_r: Vec<f64> = (0..7).map(|_| rng.gen_range(100.0..5000.0)).collect();
        let rp_r: Vec<f64> = (0..7).map(|_| rng.gen_range(0.1..1.0)).collect();
        let out = reflectance_calibrate(&CalibrationInputs::new(cube.clone(), dn_r.clone(), rp_r.clone()).unwrap())
            .unwrap();
        for b in 0..7 {
            for y in 0..h {
                for x in 0..w {
                    let expect = cube.get(x, y, b) / dn_r[b] * rp_r[b];
                    let got = out.get(x, y, b);
                    assert!((got - expect).abs() <= f64::EPSILON * expect.abs());
                }
            }
        }
    }

    #[test]
    fn linear_substitution() {
        let cal = solve_linear_calibration(&[100.0], &[200.0], &[50.0]).unwrap();
        assert!((cal.gain[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((cal.offset[0] + 100.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn zero_dark_count() {
        let cal = solve_linear_calibration(&[90.0], &[30.0], &[0.0]).unwrap();
        assert_eq!(cal.offset[0], 0.0);
        assert_eq!(cal.gain[0], 3.0);
    }

    #[test]
    fn degenerate_calibration() {
        let err = solve_linear_calibration(&[1.0, 1.0], &[5.0, 7.0], &[4.0, 7.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateCalibration { band: 1 }));
    }

    #[test]
    fn identity_and_dark_mapping() {
        let id = LinearCalibration {
            gain: vec![1.0; 3],
            offset: vec![0.0; 3],
        };
        assert_eq!(apply_linear_calibration(&id, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let cal = solve_linear_calibration(&[10.0, 20.0], &[100.0, 300.0], &[7.0, 11.0]).unwrap();
        let dark = apply_linear_calibration(&cal, &[7.0, 11.0]).unwrap();
        assert!(dark.iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(
            apply_linear_calibration(&cal, &[1.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn averaging() {
        assert_eq!(
            average_spectra(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(),
            vec![2.0, 3.0]
        );
        assert_eq!(average_spectra(&[vec![0.1, 0.7]]).unwrap(), vec![0.1, 0.7]);
        assert!(matches!(average_spectra(&[]), Err(Error::Argument(_))));
        let out = average_spectra(&[vec![f64::NAN, 1.0], vec![f64::NAN, 3.0]]).unwrap();
        assert!(out[0].is_nan());
        assert_eq!(out[1], 2.0);
        assert_eq!(
            average_spectra(&[vec![f64::NAN, 1.0], vec![4.0, 3.0]]).unwrap(),
            vec![4.0, 2.0]
        );
    }

    #[test]
    fn averaging_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spectra: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..16).map(|_| rng.gen_range(0.0..1.2)).collect())
            .collect();
        let got = average_spectra(&spectra).unwrap();
        for b in 0..16 {
            // two-pass: naive mean, then correct by the mean residual
            let n = spectra.len() as f64;
            let m0 = spectra.iter().map(|s| s[b]).sum::<f64>() / n;
            let m = m0 + spectra.iter().map(|s| s[b] - m0).sum::<f64>() / n;
            assert!((got[b] - m).abs() <= 1e-12 * m.abs());
        }
    }

    #[test]
    fn reference_csv_alignment() {
        let rows = parse_reference_csv(
            "wavelength_nm,dn_reference,rp_reference\n500,1000,0.5\n600.01,2000,0.9\n",
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        let axis = WavelengthAxis::new(vec![500.0, 600.0]).unwrap();
        let (dn, rp) = align_reference(&axis, &rows, 0.5).unwrap();
        assert_eq!(dn, vec![1000.0, 2000.0]);
        assert_eq!(rp, vec![0.5, 0.9]);
        let axis = WavelengthAxis::new(vec![500.0, 700.0]).unwrap();
        let err = align_reference(&axis, &rows, 0.5).unwrap_err();
        assert!(err.to_string().contains("700"));
    }
}
