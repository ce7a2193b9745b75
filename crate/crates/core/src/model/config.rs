use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Parallel 2D/3D branches with staged fusion.
    Plb,
    /// The 2D branch alone.
    Cnn2d,
    /// The 3D branch alone.
    Cnn3d,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Plb => "plb",
            ModelKind::Cnn2d => "cnn2d",
            ModelKind::Cnn3d => "cnn3d",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plb" | "ours" => Ok(ModelKind::Plb),
            "cnn2d" | "2dcnn" => Ok(ModelKind::Cnn2d),
            "cnn3d" | "3dcnn" => Ok(ModelKind::Cnn3d),
            _ => Err(Error::Config(format!("unknown model kind '{s}'"))),
        }
    }
}

/// The four attention/SE ablations of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Ours,
    /// Attention removed.
    OursA,
    /// SE units removed.
    OursS,
    OursAS,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ours, Variant::OursA, Variant::OursS, Variant::OursAS];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ours => "Ours",
            Variant::OursA => "Ours-A",
            Variant::OursS => "Ours-S",
            Variant::OursAS => "Ours-A-S",
        }
    }

    pub fn apply(self, cfg: &ModelConfig) -> ModelConfig {
        let mut c = cfg.clone();
        c.use_attention = matches!(self, Variant::Ours | Variant::OursS);
        c.use_se = matches!(self, Variant::Ours | Variant::OursA);
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Spatial kernel, stride and padding of each stage.
pub const SPATIAL_SCHEDULE: [(usize, usize, usize); 5] = [(3, 1, 0), (3, 1, 1), (3, 1, 0), (2, 2, 0), (3, 1, 1)];
/// Spectral stride of each 3D stage.
pub const DEPTH_STRIDES: [usize; 5] = [1, 1, 1, 2, 1];
pub const STAGE_NAMES: [&str; 5] = ["stage1", "stage2", "stage3a", "stage3b", "stage4"];
/// Stages after which the 2D and 3D maps are fused (indices into the schedule).
pub const FUSION_STAGES: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Neighborhood side `S`.
    pub patch_size: usize,
    /// Input band count `B`.
    pub bands: usize,
    pub num_classes: usize,
    pub use_attention: bool,
    pub use_se: bool,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub width_2d: usize,
    pub filters_3d: usize,
    pub head_width: usize,
    /// Spectral kernel extent of each 3D stage.
    pub depth_kernels: [usize; 5],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Plb,
            patch_size: 11,
            bands: 10,
            num_classes: 4,
            use_attention: true,
            use_se: true,
            dropout: 0.4,
            epochs: 60,
            batch_size: 16,
            lr: 2e-4,
            seed: 0,
            width_2d: 32,
            filters_3d: 8,
            head_width: 64,
            depth_kernels: [4, 4, 1, 2, 2],
        }
    }
}

/// Spatial and spectral extents after every stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub spatial: [usize; 5],
    pub depth: [usize; 5],
}

impl StagePlan {
    /// Spatial sides of the three fused maps.
    pub fn fused_sizes(&self) -> [usize; 3] {
        FUSION_STAGES.map(|s| self.spatial[s])
    }
}

/// Largest depth kernels not exceeding `[4, 4, 1, 2, 2]` that fit `bands`.
pub fn fit_depth_kernels(bands: usize) -> [usize; 5] {
    let mut kernels = [4, 4, 1, 2, 2];
    let mut d = bands;
    for (k, s) in kernels.iter_mut().zip(DEPTH_STRIDES) {
        *k = (*k).min(d).max(1);
        d = (d - *k) / s + 1;
    }
    kernels
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size.is_multiple_of(2) {
            return Err(Error::Config(format!("S must be odd, got {}", self.patch_size)));
        }
        if self.bands < 2 {
            return Err(Error::Config(format!("B must be >= 2, got {}", self.bands)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.width_2d == 0 || self.filters_3d == 0 || self.head_width == 0 {
            return Err(Error::Config("channel widths must be >= 1".into()));
        }
        self.plan().map(|_| ())
    }

    /// Stage extents for this configuration; a stage whose input is smaller
    /// than its kernel is reported by name.
    pub fn plan(&self) -> Result<StagePlan> {
        let mut spatial = [0; 5];
        let mut depth = [0; 5];
        let (mut s, mut d) = (self.patch_size, self.bands);
        for i in 0..5 {
            let (k, stride, pad) = SPATIAL_SCHEDULE[i];
            if s + 2 * pad < k {
                return Err(Error::Config(format!(
                    "{}: spatial extent {s} too small for a {k}x{k} kernel",
                    STAGE_NAMES[i]
                )));
            }
            s = (s + 2 * pad - k) / stride + 1;
            let kd = self.depth_kernels[i];
            if kd == 0 || d < kd {
                return Err(Error::Config(format!(
                    "{}: spectral extent {d} too small for depth kernel {kd}",
                    STAGE_NAMES[i]
                )));
            }
            d = (d - kd) / DEPTH_STRIDES[i] + 1;
            spatial[i] = s;
            depth[i] = d;
        }
        Ok(StagePlan { spatial, depth })
    }

    /// Sets one option from its textual form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "kind" => self.kind = v.parse()?,
            "S" | "patch_size" => self.patch_size = parse_num(key, v)?,
            "B" | "bands" => self.bands = parse_num(key, v)?,
            "num_classes" => self.num_classes = parse_num(key, v)?,
            "use_attention" => self.use_attention = parse_bool(key, v)?,
            "use_se" => self.use_se = parse_bool(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "width_2d" => self.width_2d = parse_num(key, v)?,
            "filters_3d" => self.filters_3d = parse_num(key, v)?,
            "head_width" => self.head_width = parse_num(key, v)?,
            "depth_kernels" => {
                let ks: Vec<usize> = v
                    .split(',')
                    .map(|k| parse_num(key, k.trim()))
                    .collect::<Result<_>>()?;
                self.depth_kernels = ks
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected 5 comma-separated values")))?;
            }
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Every option as `(key, value)` pairs accepted by [`ModelConfig::set`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let dk = self.depth_kernels.map(|k| k.to_string()).join(",");
        [
            ("kind", self.kind.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("bands", self.bands.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("use_attention", self.use_attention.to_string()),
            ("use_se", self.use_se.to_string()),
            ("dropout", self.dropout.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("seed", self.seed.to_string()),
            ("width_2d", self.width_2d.to_string()),
            ("filters_3d", self.filters_3d.to_string()),
            ("head_width", self.head_width.to_string()),
            ("depth_kernels", dk),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}
