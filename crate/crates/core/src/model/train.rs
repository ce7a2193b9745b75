use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ModelConfig, Variant};
use super::data::{batch_tensor, Sample};
use super::net::{build_plb_model, Model};
use crate::autograd::{softmax_in_place, Adam, Forward};
use crate::error::{Error, Result};
use crate::metrics::{confusion, report, EvalReport};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub train: Option<EvalReport>,
    pub test: Option<EvalReport>,
    pub wall_clock_secs: f64,
    pub seed: u64,
}

impl TrainReport {
    /// `epoch,mean_loss` with 1-based epochs.
    pub fn epoch_log_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            s.push_str(&format!("{},{l}\n", i + 1));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

const EVAL_CHUNK: usize = 64;

/// Eval-mode class probabilities for every sample.
pub fn predict(model: &Model, samples: &[Sample]) -> Result<Vec<Prediction>> {
    let (b, s, k) = (model.cfg.bands, model.cfg.patch_size, model.cfg.num_classes);
    let chunks: Vec<&[Sample]> = samples.chunks(EVAL_CHUNK).collect();
    let parts: Vec<Result<Vec<Prediction>>> = chunks
        .par_iter()
        .map(|chunk| {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let logits = model.eval_logits(batch_tensor(&refs, b, s)?)?;
            Ok(logits
                .data()
                .chunks(k)
                .map(|row| {
                    let mut p = row.to_vec();
                    softmax_in_place(&mut p);
                    let class = argmax(&p);
                    Prediction { class, probabilities: p }
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Confusion-matrix report of the model on `samples`.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<EvalReport> {
    let preds = predict(model, samples)?;
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let guess: Vec<usize> = preds.iter().map(|p| p.class).collect();
    report(&confusion(&truth, &guess, model.cfg.num_classes)?)
}

/// Mini-batch Adam on softmax cross-entropy for `model.cfg.epochs` epochs.
///
/// The shuffle order and dropout masks come from streams of `cfg.seed`, so
/// equal seeds give bit-identical parameters. When `test` is given it is
/// evaluated after training.
pub fn train(model: &mut Model, samples: &[Sample], test: Option<&[Sample]>) -> Result<TrainReport> {
    let started = Instant::now();
    let cfg = model.cfg.clone();
    if samples.is_empty() {
        return Err(Error::DegenerateData("training set is empty".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.label >= cfg.num_classes) {
        return Err(Error::Argument(format!("label {} out of range for {} classes", s.label, cfg.num_classes)));
    }
    let first = samples[0].label;
    if samples.iter().all(|s| s.label == first) {
        return Err(Error::DegenerateData(format!("training set holds only class {first}")));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);
    let mut opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let input = batch_tensor(&batch, cfg.bands, cfg.patch_size)?;
            let (grads, stats, loss) = {
                let mut f = Forward::new(&model.store, true).with_dropout_rng(&mut dropout_rng);
                let out = model.forward(&mut f, input)?;
                let loss = f.graph.cross_entropy(out.logits, &labels)?;
                let value = f.graph.value(loss)[0];
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("training loss became {value}")));
                }
                (f.graph.backward(loss)?, f.take_stats(), value)
            };
            model.store.zero_grad();
            grads.accumulate_into(&mut model.store);
            opt.step(&mut model.store)?;
            Forward::commit_stats(stats, &mut model.store);
            total += loss * batch.len() as f64;
        }
        epoch_losses.push(total / samples.len() as f64);
    }
    let (train_report, test_report) = if cfg.epochs > 0 {
        (
            Some(evaluate(model, samples)?),
            test.filter(|t| !t.is_empty()).map(|t| evaluate(model, t)).transpose()?,
        )
    } else {
        (None, None)
    };
    Ok(TrainReport {
        epoch_losses,
        train: train_report,
        test: test_report,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
    })
}

/// Held-out accuracy of one ablation variant at one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub accuracy: f64,
}

/// Trains every variant of the full model for every seed on the same split.
pub fn run_ablation(cfg: &ModelConfig, train_set: &[Sample], test_set: &[Sample], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if test_set.is_empty() {
        return Err(Error::DegenerateData("ablation needs a non-empty test set".into()));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        for v in Variant::ALL {
            let mut c = v.apply(cfg);
            c.seed = seed;
            let mut m = build_plb_model(&c)?;
            let r = train(&mut m, train_set, Some(test_set))?;
            rows.push(AblationRow {
                variant: v,
                seed,
                accuracy: r.test.map(|t| t.accuracy).unwrap_or(0.0),
            });
        }
    }
    Ok(rows)
}

/// Mean accuracy per variant, in [`Variant::ALL`] order.
pub fn ablation_means(rows: &[AblationRow]) -> Vec<(Variant, f64)> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let accs: Vec<f64> = rows.iter().filter(|r| r.variant == v).map(|r| r.accuracy).collect();
            let mean = if accs.is_empty() {
                0.0
            } else {
                accs.iter().sum::<f64>() / accs.len() as f64
            };
            (v, mean)
        })
        .collect()
}

/// `variant,mean_accuracy,delta_vs_ours` rows.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let means = ablation_means(rows);
    let ours = means[0].1;
    let mut s = String::from("variant,mean_accuracy,delta_vs_ours\n");
    for (v, m) in means {
        s.push_str(&format!("{v},{m},{}\n", m - ours));
    }
    s
}
