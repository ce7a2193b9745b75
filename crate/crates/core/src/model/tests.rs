use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::gradcheck::{check_params, GradCheckConfig};
use crate::autograd::{Forward, Tensor};
use crate::error::Error;

fn micro(seed: u64) -> ModelConfig {
    ModelConfig {
        patch_size: 7,
        bands: 4,
        width_2d: 4,
        filters_3d: 2,
        head_width: 4,
        depth_kernels: [2, 2, 1, 2, 1],
        dropout: 0.0,
        seed,
        ..Default::default()
    }
}

fn random_samples(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = cfg.bands * cfg.patch_size * cfg.patch_size;
    (0..n)
        .map(|i| {
            let label = i % cfg.num_classes;
            Sample {
                patch: (0..len)
                    .map(|j| {
                        let b = j / (cfg.patch_size * cfg.patch_size);
                        let signal = if b == label % cfg.bands { 1.0 } else { 0.0 };
                        signal + rng.gen_range(-0.3..0.3)
                    })
                    .collect(),
                size: cfg.patch_size,
                bands: cfg.bands,
                label,
                genotype: "g".into(),
            }
        })
        .collect()
}

fn names(m: &Model) -> BTreeSet<String> {
    m.param_names().into_iter().collect()
}

#[test]
fn fused_extents_match_schedule() {
    let m = build_plb_model(&ModelConfig::default()).unwrap();
    let mut f = Forward::new(&m.store, false);
    let out = m.forward(&mut f, Tensor::zeros(&[1, 10, 11, 11])).unwrap();
    assert_eq!(out.fused_sizes, vec![9, 7, 3]);
    let logits = f.graph.value(out.logits).to_vec();
    assert_eq!(logits.len(), 4);
    assert!(logits.iter().all(|v| v.is_finite()));
    let mut p = logits;
    crate::autograd::softmax_in_place(&mut p);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn ablation_parameter_sets_nest() {
    let base = ModelConfig::default();
    let sets: Vec<BTreeSet<String>> = Variant::ALL
        .iter()
        .map(|v| names(&build_plb_model(&v.apply(&base)).unwrap()))
        .collect();
    let (ours, a, s, a_s) = (&sets[0], &sets[1], &sets[2], &sets[3]);
    for (small, big) in [(a_s, s), (s, ours), (a_s, a), (a, ours)] {
        assert!(small.is_subset(big) && small.len() < big.len());
    }
}

#[test]
fn zeroed_attention_output_matches_attention_free_model() {
    let cfg = micro(3);
    let mut with = build_plb_model(&cfg).unwrap();
    let without = build_plb_model(&ModelConfig {
        use_attention: false,
        ..cfg.clone()
    })
    .unwrap();
    for p in with.store.params_mut() {
        if let Some(q) = without.store.params().iter().find(|q| q.name == p.name) {
            p.tensor.data_mut().copy_from_slice(q.tensor.data());
        } else if p.name.contains(".attention.out.") {
            p.tensor.data_mut().fill(0.0);
        }
    }
    let samples = random_samples(&cfg, 5, 1);
    let refs: Vec<&Sample> = samples.iter().collect();
    let x = batch_tensor(&refs, cfg.bands, cfg.patch_size).unwrap();
    let a = with.eval_logits(x.clone()).unwrap();
    let b = without.eval_logits(x).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn baselines_build_and_compare() {
    let cfg = ModelConfig::default();
    for kind in [ModelKind::Cnn2d, ModelKind::Cnn3d] {
        let m = build_baseline(kind, &cfg).unwrap();
        let l = m.eval_logits(Tensor::zeros(&[2, 10, 11, 11])).unwrap();
        assert_eq!(l.shape(), &[2, 4]);
        assert!(l.data().iter().all(|v| v.is_finite()));
    }
    let equal = ModelConfig {
        width_2d: 16,
        filters_3d: 16,
        ..cfg
    };
    let c2 = build_baseline(ModelKind::Cnn2d, &equal).unwrap();
    let c3 = build_baseline(ModelKind::Cnn3d, &equal).unwrap();
    assert!(c3.num_params() > c2.num_params());
    assert!(build_baseline(ModelKind::Plb, &equal).is_err());
}

#[test]
fn wrong_input_shape_is_rejected() {
    let m = build_plb_model(&micro(0)).unwrap();
    assert!(matches!(m.eval_logits(Tensor::zeros(&[1, 3, 7, 7])), Err(Error::Shape(_))));
    let bad = Sample {
        patch: vec![0.0; 9],
        size: 3,
        bands: 1,
        label: 0,
        genotype: String::new(),
    };
    assert!(matches!(predict(&m, &[bad]), Err(Error::Shape(_))));
}

#[test]
fn zero_epochs_leave_model_unchanged() {
    let cfg = ModelConfig { epochs: 0, ..micro(1) };
    let mut m = build_plb_model(&cfg).unwrap();
    let before = m.store.clone();
    let r = train(&mut m, &random_samples(&cfg, 8, 0), None).unwrap();
    assert!(r.epoch_losses.is_empty() && r.train.is_none());
    assert_eq!(m.store, before);
}

#[test]
fn single_class_is_degenerate() {
    let cfg = micro(1);
    let mut m = build_plb_model(&cfg).unwrap();
    let mut s = random_samples(&cfg, 4, 0);
    s.iter_mut().for_each(|x| x.label = 2);
    assert!(matches!(train(&mut m, &s, None), Err(Error::DegenerateData(_))));
}

#[test]
fn training_is_deterministic_and_learns() {
    let cfg = ModelConfig {
        epochs: 15,
        batch_size: 8,
        lr: 5e-3,
        dropout: 0.2,
        ..micro(5)
    };
    let samples = random_samples(&cfg, 40, 2);
    let run = || {
        let mut m = build_plb_model(&cfg).unwrap();
        let r = train(&mut m, &samples, None).unwrap();
        (m, r)
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(m1.store, m2.store);
    assert_eq!(r1.epoch_losses, r2.epoch_losses);
    assert_eq!(r1.epoch_losses.len(), 15);
    assert!(r1.epoch_losses.last().unwrap() < r1.epoch_losses.first().unwrap());
    assert!(r1.train.as_ref().unwrap().accuracy > 0.5);
    assert!(r1.epoch_log_csv().starts_with("epoch,mean_loss\n1,"));
}

#[test]
fn predictions_are_pure() {
    let cfg = micro(7);
    let m = build_plb_model(&cfg).unwrap();
    let s = random_samples(&cfg, 3, 4);
    let dup = vec![s[1].clone(), s[0].clone(), s[1].clone()];
    let p = predict(&m, &dup).unwrap();
    assert_eq!(p[0], p[2]);
    for q in &p {
        assert!(q.probabilities.iter().all(|&v| v >= 0.0));
        assert!((q.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert_eq!(predict(&m, &dup).unwrap(), p);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = micro(11);
    let m = build_plb_model(&cfg).unwrap();
    let ck = m.to_checkpoint(&[("split_seed".into(), "4".into())]);
    let back = Model::from_checkpoint(&crate::autograd::Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
    assert_eq!(back.cfg, cfg);
    assert_eq!(back.param_names(), m.param_names());
    let x = Tensor::zeros(&[1, 4, 7, 7]);
    let (a, b) = (m.eval_logits(x.clone()).unwrap(), back.eval_logits(x).unwrap());
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() < 1e-4);
    }
}

#[test]
fn micro_model_gradients() {
    // a 1e-3 step leaves O(h^2) truncation error above tolerance on the
    // smallest gradients of the stacked network
    let gc = GradCheckConfig {
        step: 1e-5,
        fallback_step: 1e-7,
        ..Default::default()
    };
    for seed in 0..3 {
        let cfg = micro(seed);
        let m = build_plb_model(&cfg).unwrap();
        let samples = random_samples(&cfg, 4, 100 + seed);
        let refs: Vec<&Sample> = samples.iter().collect();
        let x = batch_tensor(&refs, cfg.bands, cfg.patch_size).unwrap();
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let r = check_params(&m.store, &gc, true, |f| {
            let out = m.forward(f, x.clone())?;
            f.graph.cross_entropy(out.logits, &labels)
        })
        .unwrap();
        assert!(r.passed(), "seed {seed}: {:?}", &r.failures[..r.failures.len().min(5)]);
        assert!(r.checked > r.skipped);
    }
}
