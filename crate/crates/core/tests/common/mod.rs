//! Nested-loop reference implementations shared by the integration tests.

#![allow(dead_code)]

use hsicube::autograd::{AttentionBlock, Conv, ParamStore, SeGate, Tensor};
use hsicube::hypercube::HyperCube;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Cross-correlation over `[N, C, D, H, W]` with zero padding on H and W
/// and depth padding `p[0]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
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

fn pointwise(store: &ParamStore, conv: &Conv, cin: usize, cout: usize, src: &[f64], n: usize, p: usize) -> Vec<f64> {
    let w = store.param(conv.weight).tensor.data();
    let b = conv.bias.map(|id| store.param(id).tensor.data());
    let mut out = vec![0.0; n * cout * p];
    for s in 0..n {
        for o in 0..cout {
            for i in 0..p {
                let mut acc = b.map_or(0.0, |b| b[o]);
                for c in 0..cin {
                    acc += w[o * cin + c] * src[(s * cin + c) * p + i];
                }
                out[(s * cout + o) * p + i] = acc;
            }
        }
    }
    out
}

/// Non-local attention by explicit pixel pairs: returns the block output
/// and the `[N, P, P]` attention weights.
pub fn naive_attention(store: &ParamStore, blk: &AttentionBlock, x: &[f64], n: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let e = blk.channels;
    let half = e / 2;
    let th = pointwise(store, &blk.phi, e, half, x, n, p);
    let ps = pointwise(store, &blk.psi, e, half, x, n, p);
    let gg = pointwise(store, &blk.g, e, half, x, n, p);
    let mut y = vec![0.0; n * half * p];
    let mut attn = vec![0.0; n * p * p];
    for s in 0..n {
        for i in 0..p {
            let f: Vec<f64> = (0..p)
                .map(|j| (0..half).map(|c| th[(s * half + c) * p + i] * ps[(s * half + c) * p + j]).sum())
                .collect();
            let m = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = f.iter().map(|v| (v - m).exp()).sum();
            for j in 0..p {
                let a = (f[j] - m).exp() / z;
                attn[(s * p + i) * p + j] = a;
                for c in 0..half {
                    y[(s * half + c) * p + i] += a * gg[(s * half + c) * p + j];
                }
            }
        }
    }
    let o = pointwise(store, &blk.out, half, e, &y, n, p);
    (x.iter().zip(o).map(|(a, b)| a + b).collect(), attn)
}

/// Squeeze-and-excitation gate: returns the scaled map and the `[N, C]` gates.
pub fn naive_se(store: &ParamStore, se: &SeGate, u: &[f64], n: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let c = se.channels;
    let w1 = store.param(se.w1).tensor.data();
    let w2 = store.param(se.w2).tensor.data();
    let hidden = c / se.ratio;
    let mut out = vec![0.0; u.len()];
    let mut gates = vec![0.0; n * c];
    for s in 0..n {
        let z: Vec<f64> = (0..c)
            .map(|ch| u[(s * c + ch) * p..(s * c + ch + 1) * p].iter().sum::<f64>() / p as f64)
            .collect();
        let hid: Vec<f64> = (0..hidden)
            .map(|k| (0..c).map(|ch| w1[k * c + ch] * z[ch]).sum::<f64>().max(0.0))
            .collect();
        for ch in 0..c {
            let a: f64 = (0..hidden).map(|k| w2[ch * hidden + k] * hid[k]).sum();
            let g = 1.0 / (1.0 + (-a).exp());
            gates[s * c + ch] = g;
            for i in 0..p {
                out[(s * c + ch) * p + i] = g * u[(s * c + ch) * p + i];
            }
        }
    }
    (out, gates)
}

/// Per-pixel dispersion threshold written as plain scalar loops.
pub fn naive_remove_background(cube: &HyperCube, ratio: f64) -> Vec<f64> {
    let (h, w, bands) = (cube.height(), cube.width(), cube.bands());
    let mut out = cube.data().to_vec();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for b in 0..bands {
                sum += cube.get(x, y, b);
            }
            let mean = sum / bands as f64;
            let mut ss = 0.0;
            for b in 0..bands {
                let d = cube.get(x, y, b) - mean;
                ss += d * d;
            }
            let sd = (ss / bands as f64).sqrt();
            let keep = mean > 0.0 && sd < ratio * mean;
            if !keep {
                for b in 0..bands {
                    out[cube.index(x, y, b)] = f64::NAN;
                }
            }
        }
    }
    out
}
