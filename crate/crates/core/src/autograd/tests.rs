use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_inputs, check_params, GradCheckConfig};
use super::*;
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct nested-loop cross-correlation over `[N, C, D, H, W]`.
#[allow(clippy::too_many_arguments)]
fn naive_conv(
    x: &[f64],
    dims: [usize; 5],
    w: &[f64],
    out_c: usize,
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let [n, c, d, h, wd] = dims;
    let od = (d + 2 * p[0] - k[0]) / s[0] + 1;
    let oh = (h + 2 * p[1] - k[1]) / s[1] + 1;
    let ow = (wd + 2 * p[2] - k[2]) / s[2] + 1;
    let mut out = vec![0.0; n * out_c * od * oh * ow];
    for b in 0..n {
        for o in 0..out_c {
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = bias.map_or(0.0, |bv| bv[o]);
                        for ci in 0..c {
                            for kz in 0..k[0] {
                                for ky in 0..k[1] {
                                    for kx in 0..k[2] {
                                        let iz = (z * s[0] + kz) as isize - p[0] as isize;
                                        let iy = (y * s[1] + ky) as isize - p[1] as isize;
                                        let ix = (xo * s[2] + kx) as isize - p[2] as isize;
                                        if iz < 0 || iy < 0 || ix < 0 {
                                            continue;
                                        }
                                        let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                        if iz >= d || iy >= h || ix >= wd {
                                            continue;
                                        }
                                        let xi = (((b * c + ci) * d + iz) * h + iy) * wd + ix;
                                        let wi = (((o * c + ci) * k[0] + kz) * k[1] + ky) * k[2] + kx;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        out[(((b * out_c + o) * od + z) * oh + y) * ow + xo] = acc;
                    }
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv2d_sum_of_ones() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv(x, w, None, ConvSpec::conv2d(1, 1, 3, 1, 0)).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 1, 1]);
    assert_eq!(g.value(y), &[9.0]);
}

#[test]
fn conv2d_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xt = rand_tensor(&mut rng, &[2, 1, 5, 4]);
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let mut g = Graph::new();
    let x = g.constant(xt.clone());
    let w = g.constant(Tensor::new(vec![1, 1, 3, 3], k).unwrap());
    let y = g.conv(x, w, None, ConvSpec::conv2d(1, 1, 3, 1, 1)).unwrap();
    assert_eq!(g.value(y), xt.data());
}

#[test]
fn conv3d_sum_of_ones() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 4, 3, 3], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 4, 3, 3], 1.0));
    let y = g.conv(x, w, None, ConvSpec::conv3d(1, 1, (4, 3), (1, 1), 0)).unwrap();
    assert_eq!(g.value(y), &[36.0]);
}

#[test]
fn conv3d_single_voxel_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xt = rand_tensor(&mut rng, &[1, 1, 3, 4, 5]);
    let mut g = Graph::new();
    let x = g.constant(xt.clone());
    let w = g.constant(Tensor::full(&[1, 1, 1, 1, 1], 1.0));
    let y = g.conv(x, w, None, ConvSpec::conv3d(1, 1, (1, 1), (1, 1), 0)).unwrap();
    assert_eq!(g.value(y), xt.data());
}

#[test]
fn conv2d_random_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xt = rand_tensor(&mut rng, &[2, 3, 8, 8]);
    let wt = rand_tensor(&mut rng, &[4, 3, 3, 3]);
    let bt = rand_tensor(&mut rng, &[4]);
    let mut g = Graph::new();
    let (x, w, b) = (g.constant(xt.clone()), g.constant(wt.clone()), g.constant(bt.clone()));
    let y = g.conv(x, w, Some(b), ConvSpec::conv2d(3, 4, 3, 1, 1)).unwrap();
    let oracle = naive_conv(xt.data(), [2, 3, 1, 8, 8], wt.data(), 4, [1, 3, 3], [1, 1, 1], [0, 1, 1], Some(bt.data()));
    assert!(max_abs_diff(g.value(y), &oracle) < 1e-6);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(g.conv(x, w, None, ConvSpec::conv2d(3, 1, 3, 1, 0)), Err(Error::Shape(_))));
}

#[test]
fn conv_sweep_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 1..=2 {
        for c in [1, 2, 4] {
            for size in [3, 4, 6] {
                for (k, s, p) in [(1, 1, 0), (3, 1, 0), (3, 1, 1), (2, 2, 0), (3, 2, 1)] {
                    if size + 2 * p < k {
                        continue;
                    }
                    let xt = rand_tensor(&mut rng, &[n, c, size, size]);
                    let wt = rand_tensor(&mut rng, &[3, c, k, k]);
                    let mut g = Graph::new();
                    let (x, w) = (g.constant(xt.clone()), g.constant(wt.clone()));
                    let y = g.conv(x, w, None, ConvSpec::conv2d(c, 3, k, s, p)).unwrap();
                    let o = naive_conv(xt.data(), [n, c, 1, size, size], wt.data(), 3, [1, k, k], [1, s, s], [0, p, p], None);
                    assert!(max_abs_diff(g.value(y), &o) < 1e-6);
                    for (kd, sd) in [(1, 1), (2, 1), (2, 2), (3, 1)] {
                        for depth in [2, 4, 6] {
                            if depth < kd {
                                continue;
                            }
                            let xt = rand_tensor(&mut rng, &[n, c, depth, size, size]);
                            let wt = rand_tensor(&mut rng, &[2, c, kd, k, k]);
                            let mut g = Graph::new();
                            let (x, w) = (g.constant(xt.clone()), g.constant(wt.clone()));
                            let y = g.conv(x, w, None, ConvSpec::conv3d(c, 2, (kd, k), (sd, s), p)).unwrap();
                            let o = naive_conv(
                                xt.data(),
                                [n, c, depth, size, size],
                                wt.data(),
                                2,
                                [kd, k, k],
                                [sd, s, s],
                                [0, p, p],
                                None,
                            );
                            assert!(max_abs_diff(g.value(y), &o) < 1e-6);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap());
    let y = g.softmax(x).unwrap();
    assert_eq!(g.value(y), &[0.25; 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = rand_tensor(&mut rng, &[3, 7]);
    let shifted = Tensor::new(vec![3, 7], t.data().iter().map(|v| v * 20.0 + 5.0).collect()).unwrap();
    let base = Tensor::new(vec![3, 7], t.data().iter().map(|v| v * 20.0).collect()).unwrap();
    let a = g.constant(base);
    let b = g.constant(shifted);
    let (sa, sb) = (g.softmax(a).unwrap(), g.softmax(b).unwrap());
    for row in g.value(sa).chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert!(max_abs_diff(g.value(sa), g.value(sb)) < 1e-6);
}

#[test]
fn dropout_eval_is_identity_and_train_scales() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 4], 2.0));
    assert_eq!(g.dropout(x, 0.5, None).unwrap(), x);
    let y = g.dropout(x, 0.5, Some(&[true, false, true, false])).unwrap();
    assert_eq!(g.value(y), &[4.0, 0.0, 4.0, 0.0]);
}

#[test]
fn cross_entropy_rejects_bad_label() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.cross_entropy(x, &[0, 3]), Err(Error::Argument(_))));
    let l = g.cross_entropy(x, &[0, 2]).unwrap();
    assert!((g.value(l)[0] - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn backward_of_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let xt = rand_tensor(&mut rng, &[5]);
    let mut store = ParamStore::new();
    let id = store.add("w", rand_tensor(&mut rng, &[5])).unwrap();
    for pass in 1..=2 {
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let x = g.constant(xt.clone());
        let p = g.mul(w, x).unwrap();
        let l = g.sum(p);
        g.backward(l).unwrap().accumulate_into(&mut store);
        let grad = store.param(id).tensor.grad.clone().unwrap();
        let want: Vec<f64> = xt.data().iter().map(|v| v * pass as f64).collect();
        assert_eq!(grad, want);
    }
}

#[test]
fn backward_needs_scalar_and_zero_fills_unreached() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::full(&[2], 1.0)).unwrap();
    let b = store.add("b", Tensor::full(&[2], 1.0)).unwrap();
    let mut g = Graph::new();
    let va = g.param(&store, a);
    assert!(matches!(g.backward(va), Err(Error::Usage(_))));
    let l = g.sum(va);
    g.backward(l).unwrap().accumulate_into(&mut store);
    assert_eq!(store.param(b).tensor.grad.as_deref(), Some(&[0.0, 0.0][..]));
}

fn weighted(g: &mut Graph, y: Var, rng_seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let r = rand_tensor(&mut rng, g.shape(y));
    let r = g.constant(r);
    let p = g.mul(y, r).unwrap();
    g.sum(p)
}

#[test]
fn op_gradients_over_seeds() {
    let cfg = GradCheckConfig {
        rel_tol: 1e-4,
        ..Default::default()
    };
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut t = |shape: &[usize]| rand_tensor(&mut rng, shape).with_grad();
        let cases: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> crate::Result<Var>>)> = vec![
            (
                "conv2d",
                vec![t(&[2, 2, 5, 5]), t(&[3, 2, 3, 3]), t(&[3])],
                Box::new(|g, v| {
                    let y = g.conv(v[0], v[1], Some(v[2]), ConvSpec::conv2d(2, 3, 3, 2, 1))?;
                    Ok(weighted(g, y, 1))
                }),
            ),
            (
                "conv3d",
                vec![t(&[2, 2, 4, 4, 4]), t(&[2, 2, 2, 3, 3])],
                Box::new(|g, v| {
                    let y = g.conv(v[0], v[1], None, ConvSpec::conv3d(2, 2, (2, 3), (2, 1), 1))?;
                    Ok(weighted(g, y, 2))
                }),
            ),
            (
                "linear",
                vec![t(&[3, 4]), t(&[2, 4]), t(&[2])],
                Box::new(|g, v| {
                    let y = g.linear(v[0], v[1], Some(v[2]))?;
                    Ok(weighted(g, y, 3))
                }),
            ),
            (
                "bmm",
                vec![t(&[2, 3, 4]), t(&[2, 5, 3]), t(&[2, 5, 4])],
                Box::new(|g, v| {
                    let ab = g.bmm(v[0], v[1], true, true)?;
                    let c = g.bmm(ab, v[2], false, false)?;
                    Ok(weighted(g, c, 4))
                }),
            ),
            (
                "softmax",
                vec![t(&[3, 5])],
                Box::new(|g, v| {
                    let y = g.softmax(v[0])?;
                    Ok(weighted(g, y, 5))
                }),
            ),
            (
                "batch_norm",
                vec![t(&[3, 2, 2, 2]), t(&[2]), t(&[2])],
                Box::new(|g, v| {
                    let (y, _) = g.batch_norm_train(v[0], v[1], v[2])?;
                    Ok(weighted(g, y, 6))
                }),
            ),
            (
                "sigmoid_pool_scale",
                vec![t(&[2, 3, 2, 2]), t(&[2, 3])],
                Box::new(|g, v| {
                    let s = g.sigmoid(v[1]);
                    let y = g.scale_channels(v[0], s)?;
                    let p = g.global_avg_pool(y)?;
                    Ok(weighted(g, p, 7))
                }),
            ),
            (
                "relu_concat",
                vec![t(&[2, 1, 3]), t(&[2, 2, 3])],
                Box::new(|g, v| {
                    let c = g.concat_channels(&[v[0], v[1]])?;
                    let r = g.relu(c);
                    Ok(weighted(g, r, 8))
                }),
            ),
            (
                "cross_entropy",
                vec![t(&[4, 3])],
                Box::new(|g, v| {
                    let y = g.scale(v[0], 3.0);
                    g.cross_entropy(y, &[0, 2, 1, 2])
                }),
            ),
            (
                "dropout",
                vec![t(&[2, 3])],
                Box::new(|g, v| {
                    let y = g.dropout(v[0], 0.4, Some(&[true, false, true, true, false, true]))?;
                    Ok(weighted(g, y, 9))
                }),
            ),
        ];
        for (name, inputs, build) in cases {
            let r = check_inputs(&inputs, &cfg, build).unwrap();
            assert!(r.passed(), "{name} seed {seed}: {:?}", r.failures);
            assert!(r.checked > 0);
        }
    }
}

#[test]
fn batch_norm_train_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xt = Tensor::new(
        vec![4, 3, 2, 2],
        (0..48).map(|_| rng.gen_range(-3.0..5.0)).collect(),
    )
    .unwrap();
    let mut g = Graph::new();
    let x = g.constant(xt);
    let gamma = g.constant(Tensor::full(&[3], 1.0));
    let beta = g.constant(Tensor::zeros(&[3]));
    let (y, stats) = g.batch_norm_train(x, gamma, beta).unwrap();
    assert_eq!(stats.count, 16);
    let v = g.value(y);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|n| v[(n * 3 + c) * 4..(n * 3 + c + 1) * 4].to_vec()).collect();
        let m = vals.iter().sum::<f64>() / 16.0;
        let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 16.0;
        assert!(m.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn batch_norm_standardised_input_passes_through() {
    let data = vec![-1.0, 1.0, -1.0, 1.0];
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![4, 1], data.clone()).unwrap());
    let gamma = g.constant(Tensor::full(&[1], 1.0));
    let beta = g.constant(Tensor::zeros(&[1]));
    let (y, _) = g.batch_norm_train(x, gamma, beta).unwrap();
    assert!(max_abs_diff(g.value(y), &data) < 1e-5);
    let empty = g.constant(Tensor::zeros(&[0, 1]));
    assert!(matches!(g.batch_norm_train(empty, gamma, beta), Err(Error::Argument(_))));
}

#[test]
fn batch_norm_running_stats_and_eval() {
    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
    let xt = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let stats = {
        let mut f = Forward::new(&store, true);
        let x = f.graph.constant(xt.clone());
        bn.forward(&mut f, x).unwrap();
        f.take_stats()
    };
    Forward::commit_stats(stats, &mut store);
    assert!((store.buffer(bn.running_mean).tensor.data()[0] - 0.25).abs() < 1e-12);
    // unbiased variance of 1..4 is 5/3
    let want = 0.9 + 0.1 * 5.0 / 3.0;
    assert!((store.buffer(bn.running_var).tensor.data()[0] - want).abs() < 1e-12);
    let mut f = Forward::new(&store, false);
    let x = f.graph.constant(xt);
    let y = bn.forward(&mut f, x).unwrap();
    let expect = (1.0 - 0.25) / (want + BN_EPS).sqrt();
    assert!((f.graph.value(y)[0] - expect).abs() < 1e-12);
    assert!(f.take_stats().is_empty());
}

/// Pixel-pair loops over the non-local attention formula.
fn naive_attention(store: &ParamStore, blk: &AttentionBlock, x: &[f64], n: usize, e: usize, p: usize) -> Vec<f64> {
    let half = e / 2;
    let proj = |conv: &Conv, cin: usize, cout: usize, src: &[f64]| -> Vec<f64> {
        let w = store.param(conv.weight).tensor.data();
        let b = store.param(conv.bias.unwrap()).tensor.data();
        let mut out = vec![0.0; n * cout * p];
        for s in 0..n {
            for o in 0..cout {
                for i in 0..p {
                    let mut acc = b[o];
                    for c in 0..cin {
                        acc += w[o * cin + c] * src[(s * cin + c) * p + i];
                    }
                    out[(s * cout + o) * p + i] = acc;
                }
            }
        }
        out
    };
    let th = proj(&blk.phi, e, half, x);
    let ps = proj(&blk.psi, e, half, x);
    let gg = proj(&blk.g, e, half, x);
    let mut y = vec![0.0; n * half * p];
    for s in 0..n {
        for i in 0..p {
            let f: Vec<f64> = (0..p)
                .map(|j| (0..half).map(|c| th[(s * half + c) * p + i] * ps[(s * half + c) * p + j]).sum())
                .collect();
            let m = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = f.iter().map(|v| (v - m).exp()).sum();
            for j in 0..p {
                let a = (f[j] - m).exp() / z;
                for c in 0..half {
                    y[(s * half + c) * p + i] += a * gg[(s * half + c) * p + j];
                }
            }
        }
    }
    let o = proj(&blk.out, half, e, &y);
    x.iter().zip(o).map(|(a, b)| a + b).collect()
}

#[test]
fn attention_matches_naive_and_rows_sum_to_one() {
    for (seed, (n, e, h, w)) in [(1, 2, 3, 3), (2, 4, 2, 3), (1, 2, 1, 1), (2, 6, 4, 4)].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + seed as u64);
        let mut store = ParamStore::new();
        let blk = AttentionBlock::new(&mut store, "att", e, &mut rng).unwrap();
        for p in store.params_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let xt = rand_tensor(&mut rng, &[n, e, h, w]);
        let mut f = Forward::new(&store, false);
        let x = f.graph.constant(xt.clone());
        let (y, attn) = blk.forward(&mut f, x).unwrap();
        let oracle = naive_attention(&store, &blk, xt.data(), n, e, h * w);
        assert!(max_abs_diff(f.graph.value(y), &oracle) < 1e-6);
        assert_eq!(f.graph.shape(attn), &[n, h * w, h * w]);
        for row in f.graph.value(attn).chunks(h * w) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn attention_zero_projection_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut store = ParamStore::new();
    let blk = AttentionBlock::new(&mut store, "att", 4, &mut rng).unwrap();
    store.param_mut(blk.out.weight).tensor.data_mut().fill(0.0);
    store.param_mut(blk.out.bias.unwrap()).tensor.data_mut().fill(0.0);
    let xt = rand_tensor(&mut rng, &[2, 4, 3, 3]);
    let mut f = Forward::new(&store, false);
    let x = f.graph.constant(xt.clone());
    let (y, _) = blk.forward(&mut f, x).unwrap();
    assert_eq!(f.graph.value(y), xt.data());
}

#[test]
fn attention_rejects_odd_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    assert!(matches!(AttentionBlock::new(&mut store, "a", 3, &mut rng), Err(Error::Shape(_))));
}

fn naive_se(store: &ParamStore, se: &SeGate, u: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let w1 = store.param(se.w1).tensor.data();
    let w2 = store.param(se.w2).tensor.data();
    let hidden = c / se.ratio;
    let mut out = vec![0.0; u.len()];
    for s in 0..n {
        let z: Vec<f64> = (0..c)
            .map(|ch| u[(s * c + ch) * p..(s * c + ch + 1) * p].iter().sum::<f64>() / p as f64)
            .collect();
        let hid: Vec<f64> = (0..hidden)
            .map(|k| (0..c).map(|ch| w1[k * c + ch] * z[ch]).sum::<f64>().max(0.0))
            .collect();
        for ch in 0..c {
            let a: f64 = (0..hidden).map(|k| w2[ch * hidden + k] * hid[k]).sum();
            let s_c = 1.0 / (1.0 + (-a).exp());
            for i in 0..p {
                out[(s * c + ch) * p + i] = s_c * u[(s * c + ch) * p + i];
            }
        }
    }
    out
}

#[test]
fn se_gate_matches_naive_and_scales_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut store = ParamStore::new();
    let se = SeGate::new(&mut store, "se", 8, 4, &mut rng).unwrap();
    let mut ut = rand_tensor(&mut rng, &[2, 8, 4, 4]);
    ut.data_mut()[3 * 16..4 * 16].fill(0.0);
    let mut f = Forward::new(&store, false);
    let u = f.graph.constant(ut.clone());
    let (y, s) = se.forward(&mut f, u).unwrap();
    let oracle = naive_se(&store, &se, ut.data(), 2, 8, 16);
    let out = f.graph.value(y);
    assert!(max_abs_diff(out, &oracle) < 1e-6);
    let sv = f.graph.value(s);
    for (k, &sc) in sv.iter().enumerate() {
        assert!(sc > 0.0 && sc < 1.0);
        for i in 0..16 {
            let (a, b) = (out[k * 16 + i], ut.data()[k * 16 + i]);
            assert!(a.abs() <= b.abs());
            if b != 0.0 {
                assert!((a / b - sc).abs() < 1e-12);
            }
        }
    }
    assert!(out[3 * 16..4 * 16].iter().all(|&v| v == 0.0));
    assert!(matches!(SeGate::new(&mut store, "bad", 6, 4, &mut rng), Err(Error::Shape(_))));
}

#[test]
fn default_ratio_divides() {
    assert_eq!(default_se_ratio(64), 16);
    assert_eq!(default_se_ratio(8), 4);
    assert_eq!(default_se_ratio(40), 8);
    assert_eq!(default_se_ratio(6), 2);
    for c in 1..100 {
        assert_eq!(c % default_se_ratio(c), 0);
    }
}

#[test]
fn block_parameter_gradients() {
    let cfg = GradCheckConfig::default();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let mut store = ParamStore::new();
        let att = AttentionBlock::new(&mut store, "att", 4, &mut rng).unwrap();
        let unit = SeResUnit::new(&mut store, "res", 4, &mut rng).unwrap();
        let xt = rand_tensor(&mut rng, &[2, 4, 3, 3]);
        let r = check_params(&store, &cfg, true, |f| {
            let x = f.graph.constant(xt.clone());
            let (y, _) = att.forward(f, x)?;
            let y = unit.forward(f, y)?;
            Ok(weighted(&mut f.graph, y, seed))
        })
        .unwrap();
        assert!(r.passed(), "seed {seed}: {:?}", r.failures);
    }
}
