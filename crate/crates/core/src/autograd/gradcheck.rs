//! Central finite-difference gradient checking.
//!
//! Each coordinate is perturbed by `+-step`. When the perturbation flips the
//! sign of any ReLU input the difference quotient straddles a kink and says
//! nothing about the derivative, so the coordinate is retried with
//! `fallback_step`; if that still straddles a kink it is counted as skipped.

use super::graph::{Graph, Var};
use super::layers::Forward;
use super::{ParamStore, Tensor};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub fallback_step: f64,
    pub rel_tol: f64,
    /// Absolute slack added to the tolerance, for gradients that are zero up
    /// to rounding.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            fallback_step: 1e-6,
            rel_tol: 1e-3,
            abs_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub refined: usize,
    pub skipped: usize,
    /// Largest `|a - n| / max(|a|, |n|)` over coordinates whose
    /// magnitude exceeds the absolute floor.
    pub max_rel_error: f64,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn compare(
    report: &mut GradCheckReport,
    cfg: &GradCheckConfig,
    label: &str,
    analytic: &[Vec<f64>],
    base: &[Vec<f64>],
    mut eval: impl FnMut(&[Vec<f64>]) -> Result<(f64, Vec<bool>)>,
) -> Result<()> {
    let (_, sig0) = eval(base)?;
    let mut x = base.to_vec();
    for t in 0..x.len() {
        for i in 0..x[t].len() {
            let orig = x[t][i];
            let mut estimate = None;
            for (attempt, h) in [cfg.step, cfg.fallback_step].into_iter().enumerate() {
                x[t][i] = orig + h;
                let (fp, sp) = eval(&x)?;
                x[t][i] = orig - h;
                let (fm, sm) = eval(&x)?;
                x[t][i] = orig;
                if sp == sig0 && sm == sig0 {
                    if attempt > 0 {
                        report.refined += 1;
                    }
                    estimate = Some((fp - fm) / (2.0 * h));
                    break;
                }
            }
            let Some(n) = estimate else {
                report.skipped += 1;
                continue;
            };
            report.checked += 1;
            let a = analytic[t][i];
            let scale = a.abs().max(n.abs());
            let err = (a - n).abs();
            if scale > cfg.abs_floor {
                report.max_rel_error = report.max_rel_error.max(err / scale);
            }
            if err > cfg.rel_tol * scale + cfg.abs_floor {
                report.failures.push(format!("{label}[{t}][{i}]: analytic {a:e}, numeric {n:e}"));
            }
        }
    }
    Ok(())
}

/// Checks the gradient of `build(graph, inputs)` with respect to each input
/// tensor that has `requires_grad` set.
pub fn check_inputs(
    inputs: &[Tensor],
    cfg: &GradCheckConfig,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let run = |vals: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (g, vars, out) = run(inputs)?;
    let grads = g.backward(out)?;
    let checked: Vec<usize> = (0..inputs.len()).filter(|&i| inputs[i].requires_grad).collect();
    let analytic: Vec<Vec<f64>> = checked
        .iter()
        .map(|&i| {
            grads
                .get(vars[i])
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; inputs[i].len()])
        })
        .collect();
    let base: Vec<Vec<f64>> = checked.iter().map(|&i| inputs[i].data().to_vec()).collect();
    let mut report = GradCheckReport::default();
    compare(&mut report, cfg, "input", &analytic, &base, |x| {
        let mut vals = inputs.to_vec();
        for (k, &i) in checked.iter().enumerate() {
            vals[i].data_mut().copy_from_slice(&x[k]);
        }
        let (g, _, out) = run(&vals)?;
        Ok((g.value(out)[0], g.relu_signature()))
    })?;
    Ok(report)
}

/// Checks the gradient of a scalar built from the parameters in `store`
/// with respect to every parameter. `build` must be deterministic.
pub fn check_params(
    store: &ParamStore,
    cfg: &GradCheckConfig,
    train: bool,
    build: impl Fn(&mut Forward) -> Result<Var>,
) -> Result<GradCheckReport> {
    let run = |s: &ParamStore| -> Result<(f64, Vec<bool>)> {
        let mut f = Forward::new(s, train);
        let out = build(&mut f)?;
        let v = f.graph.value(out)[0];
        Ok((v, f.graph.relu_signature()))
    };
    let mut f = Forward::new(store, train);
    let out = build(&mut f)?;
    let grads = f.graph.backward(out)?;
    let mut with_grads = store.clone();
    with_grads.params_mut().iter_mut().for_each(|p| p.tensor.grad = None);
    grads.accumulate_into(&mut with_grads);
    let analytic: Vec<Vec<f64>> = with_grads
        .params()
        .iter()
        .map(|p| p.tensor.grad.clone().unwrap_or_else(|| vec![0.0; p.tensor.len()]))
        .collect();
    let base: Vec<Vec<f64>> = store.params().iter().map(|p| p.tensor.data().to_vec()).collect();
    let mut report = GradCheckReport::default();
    let mut scratch = store.clone();
    compare(&mut report, cfg, "param", &analytic, &base, |x| {
        for (p, v) in scratch.params_mut().iter_mut().zip(x) {
            p.tensor.data_mut().copy_from_slice(v);
        }
        run(&scratch)
    })?;
    let names = store.param_names();
    for f in &mut report.failures {
        if let Some(rest) = f.strip_prefix("param[") {
            if let Some((idx, tail)) = rest.split_once(']') {
                if let Ok(k) = idx.parse::<usize>() {
                    *f = format!("{}{tail}", names[k]);
                }
            }
        }
    }
    Ok(report)
}
