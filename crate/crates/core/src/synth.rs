//! Synthetic hyperspectral scenes with planted class signatures.
//!
//! Foreground spectra are a vegetation-like base curve (flat visible
//! plateau with a green bump, logistic red edge into a near-infrared
//! plateau) plus per-class Gaussian features and i.i.d. Gaussian noise.
//! Background pixels fill the bottom rows of a cube with alternating
//! high/low spectra that the dispersion mask always removes.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hypercube::{load_cube, save_cube, CubeFormat, HyperCube, Tile, TileSet, WavelengthAxis};

/// Visible-range reflectance of the base curve.
pub const VISIBLE_LEVEL: f64 = 0.2;
/// Reflectance gained across the red edge.
pub const RED_EDGE_RISE: f64 = 0.25;
/// Logistic scale of the red edge, nm.
pub const RED_EDGE_SCALE_NM: f64 = 12.0;

/// A Gaussian absorption (negative amplitude) or reflectance (positive) feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFeature {
    pub center_nm: f64,
    /// Standard deviation, nm.
    pub width_nm: f64,
    pub amplitude: f64,
}

impl GaussianFeature {
    pub fn eval(&self, nm: f64) -> f64 {
        let z = (nm - self.center_nm) / self.width_nm;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSignature {
    pub features: Vec<GaussianFeature>,
    pub red_edge_center_nm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub start_nm: f64,
    pub end_nm: f64,
    pub bands: usize,
    pub classes: Vec<ClassSignature>,
    pub noise_sigma: f64,
    pub background_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Four classes whose red edge drifts to longer wavelengths while
    /// absorption features deepen, at 204 bands over 400-1000 nm.
    fn default() -> Self {
        let classes = (0..4)
            .map(|c| {
                let c = c as f64;
                ClassSignature {
                    features: vec![
                        GaussianFeature {
                            center_nm: 492.0,
                            width_nm: 8.0,
                            amplitude: -(0.03 + 0.01 * c),
                        },
                        GaussianFeature {
                            center_nm: 592.0,
                            width_nm: 8.0,
                            amplitude: -(0.06 - 0.01 * c),
                        },
                        GaussianFeature {
                            center_nm: 870.0,
                            width_nm: 10.0,
                            amplitude: -(0.02 + 0.015 * c),
                        },
                    ],
                    red_edge_center_nm: 712.0 + 6.0 * c,
                }
            })
            .collect();
        Self {
            start_nm: 400.0,
            end_nm: 1000.0,
            bands: 204,
            classes,
            noise_sigma: 0.05,
            background_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn axis(&self) -> Result<WavelengthAxis> {
        WavelengthAxis::uniform(self.start_nm, self.end_nm, self.bands)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands < 2 {
            return Err(Error::Argument("synthetic cubes need at least 2 bands".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Argument(format!("noise sigma {} < 0", self.noise_sigma)));
        }
        if !(0.0..=1.0).contains(&self.background_fraction) {
            return Err(Error::Argument(format!(
                "background fraction {} outside [0, 1]",
                self.background_fraction
            )));
        }
        if self.classes.is_empty() {
            return Err(Error::Argument("no class signatures".into()));
        }
        for (c, sig) in self.classes.iter().enumerate() {
            for f in &sig.features {
                if f.center_nm < self.start_nm || f.center_nm > self.end_nm || !(f.width_nm > 0.0) {
                    return Err(Error::Argument(format!(
                        "class {c} feature at {} nm (width {}) outside {}-{} nm",
                        f.center_nm, f.width_nm, self.start_nm, self.end_nm
                    )));
                }
            }
        }
        Ok(())
    }

    /// Noise-free foreground spectrum of `class_id`.
    pub fn template(&self, class_id: usize) -> Result<Vec<f64>> {
        let sig = self
            .classes
            .get(class_id)
            .ok_or_else(|| Error::Argument(format!("class {class_id} >= {}", self.classes.len())))?;
        Ok(self
            .axis()?
            .values()
            .iter()
            .map(|&nm| base_curve(nm, sig.red_edge_center_nm) + sig.features.iter().map(|f| f.eval(nm)).sum::<f64>())
            .collect())
    }
}

/// Vegetation-like reflectance with its red edge centred at `red_edge_nm`.
pub fn base_curve(nm: f64, red_edge_nm: f64) -> f64 {
    let green = 0.04 * (-0.5 * ((nm - 550.0) / 20.0).powi(2)).exp();
    let edge = RED_EDGE_RISE / (1.0 + (-(nm - red_edge_nm) / RED_EDGE_SCALE_NM).exp());
    VISIBLE_LEVEL + green + edge
}

fn rng_for(cfg: &SynthConfig, class_id: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((class_id as u64) << 40) ^ stream);
    rng
}

/// One cube of class `class_id`.
pub fn generate_cube(cfg: &SynthConfig, class_id: usize, height: usize, width: usize) -> Result<HyperCube> {
    generate_cube_with_stream(cfg, class_id, height, width, 0)
}

/// As [`generate_cube`], drawing from an independent random stream so that
/// several cubes of one class differ.
pub fn generate_cube_with_stream(
    cfg: &SynthConfig,
    class_id: usize,
    height: usize,
    width: usize,
    stream: u64,
) -> Result<HyperCube> {
    cfg.validate()?;
    if height * width == 0 {
        return Err(Error::Argument(format!("cannot generate a {height}x{width} cube")));
    }
    let template = cfg.template(class_id)?;
    let axis = cfg.axis()?;
    let mut rng = rng_for(cfg, class_id, stream);
    let plane = height * width;
    let background = (cfg.background_fraction * plane as f64).round() as usize;
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Argument(e.to_string()))?;
    let bands = cfg.bands;
    let mut data = vec![0.0; plane * bands];
    // pixel-major generation keeps each pixel's draws contiguous in the stream
    for p in 0..plane {
        if p >= plane - background {
            let level: f64 = rng.gen_range(0.3..1.0);
            for b in 0..bands {
                data[b * plane + p] = if b % 2 == 0 { level } else { 0.0 };
            }
        } else {
            for b in 0..bands {
                let n = if cfg.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                data[b * plane + p] = template[b] + n;
            }
        }
    }
    HyperCube::new(height, width, data, axis)
}

/// `tiles_per_class` labelled tiles per class, grouped by class.
pub fn generate_dataset(cfg: &SynthConfig, tiles_per_class: usize, tile_size: usize) -> Result<TileSet> {
    if tiles_per_class == 0 {
        return Err(Error::Argument("tiles_per_class must be >= 1".into()));
    }
    let mut tiles = Vec::with_capacity(tiles_per_class * cfg.num_classes());
    for class_id in 0..cfg.num_classes() {
        for t in 0..tiles_per_class {
            tiles.push(Tile {
                cube: generate_cube_with_stream(cfg, class_id, tile_size, tile_size, t as u64 + 1)?,
                origin_x: 0,
                origin_y: 0,
                label: Some(class_id),
            });
        }
    }
    Ok(TileSet { tiles })
}

/// One row of a dataset manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub genotype: String,
}

/// Writes every tile as a raw-le cube under `dir` plus `manifest.csv`
/// (`path,label,genotype`, paths relative to `dir`). Returns the manifest path.
pub fn write_dataset(tiles: &TileSet, dir: &Path, genotype: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("path,label,genotype\n");
    for (i, tile) in tiles.tiles.iter().enumerate() {
        let label = tile
            .label
            .ok_or_else(|| Error::Argument(format!("tile {i} has no label")))?;
        let name = format!("tile_{i:05}_c{label}.raw");
        save_cube(&tile.cube, dir.join(&name), CubeFormat::RawLe)?;
        manifest.push_str(&format!("{name},{label},{genotype}\n"));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a manifest; relative paths are resolved against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("path")) {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (Some(p), Some(l)) = (parts.next(), parts.next()) else {
            return Err(Error::Format(format!("manifest line {}: '{line}'", i + 1)));
        };
        let label = l
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("manifest line {}: bad label '{l}'", i + 1)))?;
        let p = PathBuf::from(p.trim());
        out.push(ManifestEntry {
            path: if p.is_absolute() { p } else { base.join(p) },
            label,
            genotype: parts.next().unwrap_or("").trim().to_string(),
        });
    }
    if out.is_empty() {
        return Err(Error::Format(format!("manifest {} lists no cubes", path.display())));
    }
    Ok(out)
}

/// Loads every cube listed in a manifest, detecting each file's format.
pub fn load_manifest_cubes(entries: &[ManifestEntry]) -> Result<Vec<(HyperCube, usize)>> {
    entries
        .iter()
        .map(|e| {
            let format = CubeFormat::detect(&e.path).ok_or_else(|| {
                Error::Format(format!("no .desc or .hdr sidecar for {}", e.path.display()))
            })?;
            Ok((load_cube(&e.path, format)?, e.label))
        })
        .collect()
}
