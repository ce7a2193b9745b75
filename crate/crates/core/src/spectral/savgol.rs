//! Savitzky-Golay derivative filters.
//!
//! Each output point is the derivative of a least-squares polynomial fitted
//! over a window of samples. Interior points use a centred window; points
//! within half a window of either end use the nearest full window shifted
//! inward, evaluated off-centre.

use super::Spectrum;
use crate::error::{Error, Result};

/// Relative tolerance on sample spacing for a grid to count as uniform.
pub const GRID_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SgConfig {
    pub window: usize,
    pub poly_order: usize,
    pub deriv_order: usize,
}

impl Default for SgConfig {
    fn default() -> Self {
        Self {
            window: 11,
            poly_order: 3,
            deriv_order: 1,
        }
    }
}

impl SgConfig {
    pub fn new(window: usize, poly_order: usize, deriv_order: usize) -> Result<Self> {
        let cfg = Self {
            window,
            poly_order,
            deriv_order,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_deriv(self, deriv_order: usize) -> Self {
        Self {
            deriv_order,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Argument(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.poly_order < 1 || self.poly_order >= self.window {
            return Err(Error::Argument(format!(
                "poly_order {} must be in 1..{}",
                self.poly_order, self.window
            )));
        }
        if !(1..=2).contains(&self.deriv_order) || self.deriv_order > self.poly_order {
            return Err(Error::Argument(format!(
                "deriv_order {} must be 1 or 2 and <= poly_order {}",
                self.deriv_order, self.poly_order
            )));
        }
        Ok(())
    }
}

/// Filter weights giving the `deriv`-th derivative (per unit sample spacing)
/// of the polynomial fitted to `window` samples, evaluated at sample `at`.
pub fn derivative_weights(window: usize, poly_order: usize, deriv: usize, at: usize) -> Vec<f64> {
    let cols = poly_order + 1;
    // abscissae relative to the evaluation point, scaled into [-1, 1]
    let scale = (window - 1) as f64 / 2.0;
    let t: Vec<f64> = (0..window)
        .map(|k| (k as f64 - at as f64) / scale)
        .collect();
    // normal matrix G = V^T V and right-hand side V^T (one column per sample)
    let mut g = vec![0.0; cols * cols];
    for &tk in &t {
        let mut pi = 1.0;
        for i in 0..cols {
            let mut pj = 1.0;
            for j in 0..cols {
                g[i * cols + j] += pi * pj;
                pj *= tk;
            }
            pi *= tk;
        }
    }
    let mut rhs = vec![0.0; cols * window];
    for (k, &tk) in t.iter().enumerate() {
        let mut p = 1.0;
        for i in 0..cols {
            rhs[i * window + k] = p;
            p *= tk;
        }
    }
    solve_in_place(&mut g, &mut rhs, cols, window);
    // coefficient `deriv` of the scaled polynomial, times deriv!, unscaled
    let factorial: f64 = (1..=deriv).map(|v| v as f64).product();
    let unscale = scale.powi(deriv as i32);
    rhs[deriv * window..(deriv + 1) * window]
        .iter()
        .map(|w| w * factorial / unscale)
        .collect()
}

/// Gaussian elimination with partial pivoting; `a` is n x n, `b` is n x m.
fn solve_in_place(a: &mut [f64], b: &mut [f64], n: usize, m: usize) {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            for k in 0..m {
                b.swap(col * m + k, pivot * m + k);
            }
        }
        let d = a[col * n + col];
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            for k in 0..m {
                b[row * m + k] -= f * b[col * m + k];
            }
        }
    }
    for row in 0..n {
        let d = a[row * n + row];
        for k in 0..m {
            b[row * m + k] /= d;
        }
    }
}

/// Mean sample spacing, or a grid error when spacing varies by more than
/// [`GRID_TOLERANCE`] relative.
pub fn uniform_spacing(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::Dimension("need at least two samples".into()));
    }
    let h = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    if let Some(i) = x
        .windows(2)
        .position(|w| ((w[1] - w[0]) - h).abs() > GRID_TOLERANCE * h.abs())
    {
        return Err(Error::Grid(format!(
            "step {} at index {i} differs from mean step {h}",
            x[i + 1] - x[i]
        )));
    }
    Ok(h)
}

/// Savitzky-Golay derivative of `s` with respect to wavelength.
pub fn savitzky_golay_derivative(s: &Spectrum, cfg: &SgConfig) -> Result<Spectrum> {
    cfg.validate()?;
    let n = s.len();
    if cfg.window > n {
        return Err(Error::Dimension(format!(
            "window {} exceeds spectrum length {n}",
            cfg.window
        )));
    }
    let h = uniform_spacing(s.wavelengths())?;
    let half = cfg.window / 2;
    let y = s.values();
    let centre = derivative_weights(cfg.window, cfg.poly_order, cfg.deriv_order, half);
    let scale = h.powi(cfg.deriv_order as i32);
    let dot = |w: &[f64], start: usize| -> f64 {
        w.iter().zip(&y[start..start + cfg.window]).map(|(a, b)| a * b).sum::<f64>() / scale
    };
    let mut out = vec![0.0; n];
    for i in half..n - half {
        out[i] = dot(&centre, i - half);
    }
    for i in 0..half {
        let w = derivative_weights(cfg.window, cfg.poly_order, cfg.deriv_order, i);
        out[i] = dot(&w, 0);
        let w = derivative_weights(cfg.window, cfg.poly_order, cfg.deriv_order, cfg.window - 1 - i);
        out[n - 1 - i] = dot(&w, n - cfg.window);
    }
    Spectrum::new(s.wavelengths().to_vec(), out)
}
