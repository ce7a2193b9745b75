//! Manifest loading, cube-level splitting and band choice for training.

use std::path::Path;

use hsicube::error::Error;
use hsicube::hypercube::{HyperCube, WavelengthAxis};
use hsicube::model::{adapt_bands, class_mean_cubes, samples_from_cubes, stratified_indices, Sample};
use hsicube::spectral::screen_bands;
use hsicube::synth::{load_manifest_cubes, read_manifest};

use crate::config::{BandMode, RunConfig};
use crate::CliResult;

/// Samples of a manifest, split by cube so overlapping patches of one cube
/// never straddle the split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub axis: WavelengthAxis,
    pub bands: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn nearest_bands(axis: &WavelengthAxis, nm: &[f64]) -> CliResult<Vec<usize>> {
    let v = axis.values();
    let lo = v[0];
    let hi = v[v.len() - 1];
    nm.iter()
        .map(|&w| {
            if w < lo || w > hi {
                return Err(Error::Coverage(format!("{w} nm outside the cube's {lo}-{hi} nm")).into());
            }
            Ok(axis.nearest(w).expect("non-empty axis"))
        })
        .collect()
}

/// Loads `manifest`, splits its cubes with `cfg.test_fraction` and
/// `cfg.model.seed`, and cuts `S x S` patches on `fixed_bands` or on the
/// bands chosen by `cfg.band_mode`. Updates `cfg.model.bands` and
/// `cfg.model.num_classes` to match.
pub fn prepare(manifest: &Path, cfg: &mut RunConfig, fixed_bands: Option<Vec<usize>>) -> CliResult<Prepared> {
    let entries = read_manifest(manifest)?;
    let cubes = load_manifest_cubes(&entries)?;
    let axis = cubes[0].0.axis().clone();
    if let Some(i) = cubes.iter().position(|(c, _)| c.axis() != &axis) {
        return Err(Error::Axis(format!("{} has a different wavelength axis", entries[i].path.display())).into());
    }
    let labels: Vec<usize> = cubes.iter().map(|(_, l)| *l).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let (train_ids, test_ids) = stratified_indices(&labels, cfg.test_fraction, cfg.model.seed)?;
    let train_cubes: Vec<(HyperCube, usize)> = train_ids.iter().map(|&i| cubes[i].clone()).collect();
    let bands = match fixed_bands {
        Some(b) => b,
        None => match &cfg.band_mode {
            BandMode::All => (0..axis.len()).collect(),
            BandMode::Selected => {
                let sel = screen_bands(&class_mean_cubes(&train_cubes)?, &cfg.screening)?;
                if sel.is_empty() {
                    return Err(Error::DegenerateData("band screening selected no bands".into()).into());
                }
                adapt_bands(Some(&sel), axis.len(), cfg.model.bands)?
            }
            BandMode::Wavelengths(nm) => nearest_bands(&axis, nm)?,
        },
    };
    if let Some(&b) = bands.iter().find(|&&b| b >= axis.len()) {
        return Err(Error::Index(format!("band {b} outside cubes of {} bands", axis.len())).into());
    }
    cfg.model.bands = bands.len();
    cfg.model.num_classes = num_classes;
    let samples_of = |ids: &[usize]| -> CliResult<Vec<Sample>> {
        let mut out = Vec::new();
        for &i in ids {
            out.extend(samples_from_cubes(
                std::slice::from_ref(&cubes[i]),
                &bands,
                cfg.model.patch_size,
                &entries[i].genotype,
            )?);
        }
        Ok(out)
    };
    Ok(Prepared {
        train: samples_of(&train_ids)?,
        test: samples_of(&test_ids)?,
        axis,
        bands,
        num_classes,
    })
}
