//! Neighborhood patches, band adaptation and dataset splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::hypercube::HyperCube;
use crate::spectral::BandSelection;

/// One `S x S` neighborhood block restricted to the model's bands.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Band-major values: `patch[b * S * S + y * S + x]`.
    pub patch: Vec<f64>,
    pub size: usize,
    pub bands: usize,
    pub label: usize,
    pub genotype: String,
}

/// Centre pixel and values of a patch cut from a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center_x: usize,
    pub center_y: usize,
    pub values: Vec<f64>,
}

/// Every `size x size` neighborhood of `cube` whose pixels are all in
/// bounds and unmasked, restricted to `bands`, in row-major centre order.
pub fn extract_patches(cube: &HyperCube, bands: &[usize], size: usize) -> Result<Vec<Patch>> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::Argument(format!("patch size must be odd, got {size}")));
    }
    if bands.is_empty() {
        return Err(Error::Argument("no bands selected".into()));
    }
    if let Some(&b) = bands.iter().find(|&&b| b >= cube.bands()) {
        return Err(Error::Index(format!("band {b} outside cube of {}", cube.bands())));
    }
    let (w, h) = (cube.width(), cube.height());
    if w < size || h < size {
        return Ok(Vec::new());
    }
    // valid[y][x] prefix sums give the masked count in any window
    let mut bad = vec![0usize; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let v = usize::from(!cube.is_valid(x, y));
            bad[(y + 1) * (w + 1) + x + 1] = v + bad[y * (w + 1) + x + 1] + bad[(y + 1) * (w + 1) + x] - bad[y * (w + 1) + x];
        }
    }
    let window_bad = |x0: usize, y0: usize| {
        let (x1, y1) = (x0 + size, y0 + size);
        bad[y1 * (w + 1) + x1] + bad[y0 * (w + 1) + x0] - bad[y0 * (w + 1) + x1] - bad[y1 * (w + 1) + x0]
    };
    let r = size / 2;
    let mut out = Vec::new();
    for y0 in 0..=h - size {
        for x0 in 0..=w - size {
            if window_bad(x0, y0) != 0 {
                continue;
            }
            let mut values = Vec::with_capacity(bands.len() * size * size);
            for &b in bands {
                for y in y0..y0 + size {
                    for x in x0..x0 + size {
                        values.push(cube.get(x, y, b));
                    }
                }
            }
            out.push(Patch {
                center_x: x0 + r,
                center_y: y0 + r,
                values,
            });
        }
    }
    Ok(out)
}

/// Maps the available bands to exactly `b` model inputs.
///
/// With a selection of at least `b` bands the `b` highest-scoring ones are
/// kept (ties to the lower index), in wavelength order. A shorter selection
/// is padded by repeating its last band. Without a selection, `b` bands are
/// spread evenly over all `total` bands.
pub fn adapt_bands(selection: Option<&BandSelection>, total: usize, b: usize) -> Result<Vec<usize>> {
    if b == 0 {
        return Err(Error::Argument("band count must be >= 1".into()));
    }
    let mut picked = match selection {
        Some(sel) if !sel.is_empty() => {
            let mut bands = sel.bands().to_vec();
            bands.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.index.cmp(&y.index)));
            let mut idx: Vec<usize> = bands.iter().take(b).map(|s| s.index).collect();
            idx.sort_unstable();
            idx
        }
        Some(_) => return Err(Error::Argument("band selection is empty".into())),
        None => {
            if total == 0 {
                return Err(Error::Argument("cube has no bands".into()));
            }
            if b == 1 || total == 1 {
                vec![0]
            } else {
                let k = b.min(total);
                (0..k)
                    .map(|i| ((i * (total - 1)) as f64 / (k - 1) as f64).round() as usize)
                    .collect()
            }
        }
    };
    if let Some(&bad) = picked.iter().find(|&&i| i >= total) {
        return Err(Error::Index(format!("band {bad} outside cube of {total}")));
    }
    let last = *picked.last().expect("non-empty");
    picked.resize(b, last);
    Ok(picked)
}

/// Patches of every labelled cube, each inheriting its cube's label.
pub fn samples_from_cubes(
    cubes: &[(HyperCube, usize)],
    bands: &[usize],
    size: usize,
    genotype: &str,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (cube, label) in cubes {
        for p in extract_patches(cube, bands, size)? {
            if p.values.iter().any(|v| !v.is_finite()) {
                continue;
            }
            out.push(Sample {
                patch: p.values,
                size,
                bands: bands.len(),
                label: *label,
                genotype: genotype.to_string(),
            });
        }
    }
    Ok(out)
}

/// Per class, a seeded shuffle sends `round(n * test_fraction)` of the
/// indices of `labels` to the test side. Both sides are ascending.
pub fn stratified_indices(labels: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Argument(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = labels.iter().map(|l| l + 1).max().unwrap_or(0);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        let (te, tr) = idx.split_at(n_test);
        test.extend_from_slice(te);
        train.extend_from_slice(tr);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// [`stratified_indices`] applied to samples.
pub fn stratified_split(samples: &[Sample], test_fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let (tr, te) = stratified_indices(&labels, test_fraction, seed)?;
    let pick = |ids: Vec<usize>| ids.into_iter().map(|i| samples[i].clone()).collect();
    Ok((pick(tr), pick(te)))
}

/// One 1x1 cube per class present, holding the mean of its cubes'
/// foreground-mean spectra, in class order.
pub fn class_mean_cubes(cubes: &[(HyperCube, usize)]) -> Result<Vec<HyperCube>> {
    let first = cubes
        .first()
        .ok_or_else(|| Error::Argument("no cubes to average".into()))?;
    let axis = first.0.axis().clone();
    let k = cubes.iter().map(|(_, l)| l + 1).max().unwrap_or(0);
    let mut out = Vec::new();
    for class in 0..k {
        let spectra: Vec<Vec<f64>> = cubes
            .iter()
            .filter(|(_, l)| *l == class)
            .map(|(c, _)| {
                if c.axis() != &axis {
                    return Err(Error::Axis("cubes do not share a wavelength axis".into()));
                }
                Ok(c.mean_spectrum())
            })
            .collect::<Result<_>>()?;
        if spectra.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..axis.len())
            .map(|b| spectra.iter().map(|s| s[b]).sum::<f64>() / spectra.len() as f64)
            .collect();
        out.push(HyperCube::new(1, 1, mean, axis.clone())?);
    }
    Ok(out)
}

/// Stacks samples into a `[N, B, S, S]` tensor.
pub fn batch_tensor(samples: &[&Sample], bands: usize, size: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(samples.len() * bands * size * size);
    for s in samples {
        if s.bands != bands || s.size != size || s.patch.len() != bands * size * size {
            return Err(Error::Shape(format!(
                "sample is {}x{}x{}, model expects {size}x{size}x{bands}",
                s.size, s.size, s.bands
            )));
        }
        data.extend_from_slice(&s.patch);
    }
    Tensor::new(vec![samples.len(), bands, size, size], data)
}
