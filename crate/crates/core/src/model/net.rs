//! Network assembly and the forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, ModelKind, DEPTH_STRIDES, FUSION_STAGES, SPATIAL_SCHEDULE, STAGE_NAMES};
use crate::autograd::{AttentionBlock, Checkpoint, ConvBnRelu, ConvSpec, Dense, Forward, ParamStore, SeResUnit, Tensor, Var};
use crate::error::{Error, Result};

/// Blocks applied to one fused map.
#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub attention: Option<AttentionBlock>,
    pub se_res: Option<SeResUnit>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub branch_2d: Vec<ConvBnRelu>,
    pub branch_3d: Vec<ConvBnRelu>,
    pub fusions: Vec<FusionBlock>,
    pub head: ConvBnRelu,
    pub classifier: Dense,
}

/// Outputs of one forward pass.
pub struct ForwardOutput {
    pub logits: Var,
    /// Spatial side of each fused map, in order.
    pub fused_sizes: Vec<usize>,
}

/// The full spectral-spatial model described by `cfg` (its `kind` is ignored).
pub fn build_plb_model(cfg: &ModelConfig) -> Result<Model> {
    Model::new(&ModelConfig {
        kind: ModelKind::Plb,
        ..cfg.clone()
    })
}

/// A single-branch baseline with the same head.
pub fn build_baseline(kind: ModelKind, cfg: &ModelConfig) -> Result<Model> {
    if kind == ModelKind::Plb {
        return Err(Error::Config("baseline kind must be cnn2d or cnn3d".into()));
    }
    Model::new(&ModelConfig { kind, ..cfg.clone() })
}

impl Model {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = cfg.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let (w, f) = (cfg.width_2d, cfg.filters_3d);
        let fused = |i: usize| w + f * plan.depth[i];
        let mut branch_2d = Vec::new();
        let mut branch_3d = Vec::new();
        let mut fusions = Vec::new();

        if cfg.kind != ModelKind::Cnn3d {
            for i in 0..5 {
                let (k, s, p) = SPATIAL_SCHEDULE[i];
                let in_c = match (i, cfg.kind) {
                    (0, _) => cfg.bands,
                    (_, ModelKind::Plb) if FUSION_STAGES.contains(&(i - 1)) => fused(i - 1),
                    _ => w,
                };
                let name = format!("branch2d.{}", STAGE_NAMES[i]);
                branch_2d.push(ConvBnRelu::new(&mut store, &name, ConvSpec::conv2d(in_c, w, k, s, p), false, &mut rng)?);
            }
        }
        if cfg.kind != ModelKind::Cnn2d {
            for i in 0..5 {
                let (k, s, p) = SPATIAL_SCHEDULE[i];
                let in_c = if i == 0 { 1 } else { f };
                let spec = ConvSpec::conv3d(in_c, f, (cfg.depth_kernels[i], k), (DEPTH_STRIDES[i], s), p);
                let name = format!("branch3d.{}", STAGE_NAMES[i]);
                branch_3d.push(ConvBnRelu::new(&mut store, &name, spec, true, &mut rng)?);
            }
        }
        if cfg.kind == ModelKind::Plb {
            for (n, &stage) in FUSION_STAGES.iter().enumerate() {
                let c = fused(stage);
                let attention = if cfg.use_attention {
                    Some(AttentionBlock::new(&mut store, &format!("fusion{}.attention", n + 1), c, &mut rng)?)
                } else {
                    None
                };
                let se_res = if cfg.use_se {
                    Some(SeResUnit::new(&mut store, &format!("fusion{}.se_res", n + 1), c, &mut rng)?)
                } else {
                    None
                };
                fusions.push(FusionBlock { attention, se_res });
            }
        }
        let head_in = match cfg.kind {
            ModelKind::Plb => fused(4),
            ModelKind::Cnn2d => w,
            ModelKind::Cnn3d => f * plan.depth[4],
        };
        let head = ConvBnRelu::new(&mut store, "head", ConvSpec::conv2d(head_in, cfg.head_width, 1, 1, 0), false, &mut rng)?;
        let classifier = Dense::new(&mut store, "classifier", cfg.head_width, cfg.num_classes, true, &mut rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            branch_2d,
            branch_3d,
            fusions,
            head,
            classifier,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.cfg.kind
    }

    pub fn param_names(&self) -> Vec<String> {
        self.store.param_names()
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Values per sample expected by [`Model::forward`]: `B * S * S`, band-major.
    pub fn input_len(&self) -> usize {
        self.cfg.bands * self.cfg.patch_size * self.cfg.patch_size
    }

    /// Records the network on `f` for a batch `[N, B, S, S]` of patches.
    pub fn forward(&self, f: &mut Forward, batch: Tensor) -> Result<ForwardOutput> {
        let (s, b) = (self.cfg.patch_size, self.cfg.bands);
        let shape = batch.shape().to_vec();
        if shape.len() != 4 || shape[1] != b || shape[2] != s || shape[3] != s {
            return Err(Error::Shape(format!("model expects [N, {b}, {s}, {s}], got {shape:?}")));
        }
        let n = shape[0];
        let x2 = f.graph.constant(batch);
        // [N, B, S, S] and [N, 1, B, S, S] share a layout
        let x3 = f.graph.reshape(x2, &[n, 1, b, s, s])?;
        let mut fused_sizes = Vec::new();
        let fold = |f: &mut Forward, v: Var| -> Result<Var> {
            let sh = f.graph.shape(v).to_vec();
            f.graph.reshape(v, &[sh[0], sh[1] * sh[2], sh[3], sh[4]])
        };
        let final_map = match self.cfg.kind {
            ModelKind::Cnn2d => {
                let mut a = x2;
                for stage in &self.branch_2d {
                    a = stage.forward(f, a)?;
                }
                a
            }
            ModelKind::Cnn3d => {
                let mut v = x3;
                for stage in &self.branch_3d {
                    v = stage.forward(f, v)?;
                }
                fold(f, v)?
            }
            ModelKind::Plb => {
                let (mut a, mut v) = (x2, x3);
                let mut out = None;
                for i in 0..5 {
                    a = self.branch_2d[i].forward(f, a)?;
                    v = self.branch_3d[i].forward(f, v)?;
                    if i == 0 {
                        continue;
                    }
                    let folded = fold(f, v)?;
                    let mut m = f.graph.concat_channels(&[a, folded])?;
                    if let Some(k) = FUSION_STAGES.iter().position(|&st| st == i) {
                        fused_sizes.push(f.graph.shape(m)[2]);
                        let blk = &self.fusions[k];
                        if let Some(att) = &blk.attention {
                            m = att.forward(f, m)?.0;
                        }
                        if let Some(se) = &blk.se_res {
                            m = se.forward(f, m)?;
                        }
                        a = m;
                    } else {
                        out = Some(m);
                    }
                }
                out.expect("final fusion")
            }
        };
        let h = self.head.forward(f, final_map)?;
        let h = f.graph.global_avg_pool(h)?;
        let h = f.dropout(h, self.cfg.dropout)?;
        let logits = self.classifier.forward(f, h)?;
        Ok(ForwardOutput { logits, fused_sizes })
    }

    /// Logits of a batch in evaluation mode.
    pub fn eval_logits(&self, batch: Tensor) -> Result<Tensor> {
        let mut f = Forward::new(&self.store, false);
        let out = self.forward(&mut f, batch)?;
        Ok(f.graph.tensor(out.logits))
    }

    /// Checkpoint holding the configuration, `extra` metadata, parameters and buffers.
    pub fn to_checkpoint(&self, extra: &[(String, String)]) -> Checkpoint {
        let mut meta: Vec<(String, String)> = self
            .cfg
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (format!("model.{k}"), v))
            .collect();
        meta.extend(extra.iter().cloned());
        Checkpoint::from_store(&self.store, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let pairs = ck
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("model.").map(|k| (k, v.as_str())));
        let cfg = ModelConfig::from_pairs(pairs)?;
        let mut model = Model::new(&cfg)?;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }
}
