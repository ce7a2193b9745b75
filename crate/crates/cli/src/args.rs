use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hsicube::model::ModelKind;

use crate::config::{BandMode, RunConfig};
use crate::CliResult;

#[derive(Debug, Parser)]
#[command(name = "hsicube", version, about = "Hyperspectral late-blight pipeline", flatten_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert raw counts to reflectance (reference plate) or radiance (linear gain/offset).
    Calibrate(CalibrateArgs),
    /// Remove background pixels by spectral dispersion.
    Mask(MaskArgs),
    /// Screen bands from first- and second-derivative extrema.
    Bands(BandsArgs),
    /// Locate the red edge of each input.
    Rededge(RedEdgeArgs),
    /// Write a labelled synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Train a classifier on a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Train the four attention/SE variants on one split and compare them.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Raw digital-number cube.
    #[arg(long)]
    pub input: PathBuf,
    /// reflectance (reference plate) or linear (gain/offset from a dark count).
    #[arg(long, default_value = "reflectance")]
    pub method: String,
    /// CSV of `wavelength_nm,dn_reference,rp_reference`.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// CSV of `wavelength_nm,radiance,counts,dark_counts`.
    #[arg(long)]
    pub linear: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Output cube format: raw-le or envi-bsq (default: the input's).
    #[arg(long)]
    pub format: Option<String>,
    /// Largest wavelength mismatch accepted between reference and cube, nm.
    #[arg(long, default_value_t = 0.5)]
    pub tol_nm: f64,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Remove pixels whose spectral standard deviation reaches ratio x mean.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScreenFlags {
    /// Savitzky-Golay window length (odd).
    #[arg(long)]
    pub sg_window: Option<usize>,
    /// Savitzky-Golay polynomial order.
    #[arg(long)]
    pub sg_order: Option<usize>,
    /// Extremum threshold as a fraction of the largest derivative magnitude.
    #[arg(long)]
    pub prominence: Option<f64>,
    /// Index distance within which first- and second-derivative bands match.
    #[arg(long)]
    pub tol_bands: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BandsArgs {
    /// Cubes, or manifests (`.csv`) whose cubes are averaged per class.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Selection CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Directory for per-input mean, first- and second-derivative curves.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    #[command(flatten)]
    pub screen: ScreenFlags,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RedEdgeArgs {
    /// Cubes, or manifests (`.csv`) whose cubes are averaged per class.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// CSV of `source,red_edge_nm`.
    #[arg(long)]
    pub output: PathBuf,
    /// Directory for the 680-750 nm first-derivative curve of each input.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for the tiles and `manifest.csv`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tiles_per_class: Option<usize>,
    #[arg(long)]
    pub tile_size: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub background_fraction: Option<f64>,
    #[arg(long, default_value = "synthetic")]
    pub genotype: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// Neighborhood side S.
    #[arg(long = "S")]
    pub s: Option<usize>,
    /// Input band count B.
    #[arg(long = "B")]
    pub b: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub no_se: bool,
    /// ours, 2dcnn or 3dcnn.
    #[arg(long)]
    pub variant: Option<String>,
    /// all, selected, or a comma-separated list of wavelengths in nm.
    #[arg(long)]
    pub bands: Option<String>,
    /// Fraction of each class's cubes held out for testing.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// File of `key=value` settings, applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub screen: ScreenFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (`path,label,genotype`).
    #[arg(long)]
    pub input: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub output: PathBuf,
    /// Epoch log CSV (default: `<output>.epochs.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Held-out evaluation report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Report JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Confusion-matrix CSV.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Samples to score: test (the checkpoint's held-out split), train or all.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for the four reports, epoch logs and `comparison.csv`.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
}

impl ScreenFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(w) = self.sg_window {
            cfg.screening.sg.window = w;
        }
        if let Some(o) = self.sg_order {
            cfg.screening.sg.poly_order = o;
        }
        if let Some(p) = self.prominence {
            cfg.screening.prominence_ratio = p;
        }
        if let Some(t) = self.tol_bands {
            cfg.screening.tol_bands = t;
        }
    }
}

/// Defaults, then the config file, then explicit flags.
pub(crate) fn base_config(file: Option<&Path>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = file {
        cfg.apply_file(p)?;
    }
    Ok(cfg)
}

impl ModelFlags {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = base_config(self.config.as_deref())?;
        let m = &mut cfg.model;
        if let Some(v) = self.s {
            m.patch_size = v;
        }
        if let Some(v) = self.b {
            m.bands = v;
        }
        if let Some(v) = self.epochs {
            m.epochs = v;
        }
        if let Some(v) = self.batch_size {
            m.batch_size = v;
        }
        if let Some(v) = self.lr {
            m.lr = v;
        }
        if let Some(v) = self.dropout {
            m.dropout = v;
        }
        if self.no_attention {
            m.use_attention = false;
        }
        if self.no_se {
            m.use_se = false;
        }
        if let Some(v) = &self.variant {
            m.kind = v.parse::<ModelKind>()?;
        }
        if let Some(v) = self.seed {
            m.seed = v;
        }
        if let Some(v) = &self.bands {
            cfg.band_mode = v.parse::<BandMode>()?;
        }
        if let Some(v) = self.test_fraction {
            cfg.test_fraction = v;
        }
        self.screen.apply(&mut cfg);
        Ok(cfg)
    }
}
