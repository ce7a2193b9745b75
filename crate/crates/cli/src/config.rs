//! Run settings: module defaults, overridden by a `key=value` file, then by flags.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use hsicube::model::ModelConfig;
use hsicube::spectral::{ScreeningConfig, SgConfig};

use crate::CliError;

/// How the model's input bands are chosen from each cube.
#[derive(Debug, Clone, PartialEq)]
pub enum BandMode {
    /// Every band; `B` becomes the cube's band count.
    All,
    /// Derivative screening on the per-class mean spectra of the training cubes.
    Selected,
    /// The bands nearest to the listed wavelengths.
    Wavelengths(Vec<f64>),
}

impl FromStr for BandMode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "all" => Ok(BandMode::All),
            "selected" => Ok(BandMode::Selected),
            list => list
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Usage(format!("--bands expects all, selected or a nm list, got '{s}'")))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(BandMode::Wavelengths),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub ratio: f64,
    pub screening: ScreeningConfig,
    pub band_mode: BandMode,
    pub test_fraction: f64,
    pub tiles_per_class: usize,
    pub tile_size: usize,
    pub noise_sigma: f64,
    pub background_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            ratio: hsicube::mask::DEFAULT_RATIO,
            screening: ScreeningConfig::default(),
            band_mode: BandMode::Selected,
            test_fraction: 0.25,
            tiles_per_class: 50,
            tile_size: 11,
            noise_sigma: 0.05,
            background_fraction: 0.0,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value '{v}' for '{key}'")))
}

impl RunConfig {
    /// Applies one setting. Model keys are those of [`ModelConfig::set`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "ratio" => self.ratio = num(key, value)?,
            "sg_window" => self.screening.sg.window = num(key, value)?,
            "sg_order" => self.screening.sg.poly_order = num(key, value)?,
            "prominence" => self.screening.prominence_ratio = num(key, value)?,
            "tol_bands" => self.screening.tol_bands = num(key, value)?,
            "band_selection" => self.band_mode = value.parse()?,
            "test_fraction" => self.test_fraction = num(key, value)?,
            "tiles_per_class" => self.tiles_per_class = num(key, value)?,
            "tile_size" => self.tile_size = num(key, value)?,
            "noise_sigma" => self.noise_sigma = num(key, value)?,
            "background_fraction" => self.background_fraction = num(key, value)?,
            "variant" => self.model.kind = value.trim().parse()?,
            _ => self.model.set(key, value)?,
        }
        Ok(())
    }

    /// Reads `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn sg(&self) -> Result<SgConfig, CliError> {
        Ok(SgConfig::new(self.screening.sg.window, self.screening.sg.poly_order, 1)?)
    }
}
