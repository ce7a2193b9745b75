//! Dense kernels: matrix multiply and the im2col lowering used by convolutions.

use crate::error::{Error, Result};

/// `c = op(a) * op(b) + beta * c` with `c` of shape `m x n`.
///
/// `a` holds `m x k` (or `k x m` when `a_t`), `b` holds `k x n` (or `n x k`
/// when `b_t`), all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Kernel, stride and padding of a convolution over up to three spatial axes.
/// A 2D convolution is the depth-1 case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[depth, height, width]`
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvSpec {
    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: [1, kernel, kernel],
            stride: [1, stride, stride],
            padding: [0, padding, padding],
        }
    }

    /// `kernel` and `stride` as `(depth, spatial)`; padding applies spatially only.
    pub fn conv3d(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: [kernel.0, kernel.1, kernel.1],
            stride: [stride.0, stride.1, stride.1],
            padding: [0, padding, padding],
        }
    }

    /// Elements in one filter.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    pub fn weight_shape_2d(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel[1], self.kernel[2]]
    }

    pub fn weight_shape_3d(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    /// Output extent along each axis: `floor((in + 2 pad - kernel) / stride) + 1`.
    pub fn output_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            if self.kernel[a] == 0 || self.stride[a] == 0 {
                return Err(Error::Shape(format!("zero kernel or stride in {self:?}")));
            }
            let span = input[a] + 2 * self.padding[a];
            if span < self.kernel[a] {
                return Err(Error::Shape(format!(
                    "axis {a}: input {} (+2x{} pad) smaller than kernel {}",
                    input[a], self.padding[a], self.kernel[a]
                )));
            }
            out[a] = (span - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

/// Resolved geometry for a concrete input extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub spec: ConvSpec,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(spec: ConvSpec, input: [usize; 3]) -> Result<Self> {
        Ok(Self {
            output: spec.output_extent(input)?,
            spec,
            input,
        })
    }

    pub fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    pub fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    /// Calls `f(row, col_start, in_start, len)` for each run of in-bounds
    /// taps along the output width. Consecutive columns of a run read input
    /// elements `stride[2]` apart.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let s = &self.spec;
        let [kd, kh, kw] = s.kernel;
        let [id, ih, iw] = self.input;
        let [od, oh, ow] = self.output;
        let in_plane = self.in_plane();
        let sx = s.stride[2];
        let px = s.padding[2];
        for c in 0..s.in_channels {
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let row = ((c * kd + kz) * kh + ky) * kw + kx;
                        // ox range with 0 <= ox*sx + kx - px < iw
                        let lo = if px > kx { (px - kx).div_ceil(sx) } else { 0 };
                        let hi = if iw + px > kx { ((iw + px - kx - 1) / sx + 1).min(ow) } else { 0 };
                        if lo >= hi {
                            continue;
                        }
                        for oz in 0..od {
                            let iz = (oz * s.stride[0] + kz) as isize - s.padding[0] as isize;
                            if iz < 0 || iz >= id as isize {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * s.stride[1] + ky) as isize - s.padding[1] as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let in_base = c * in_plane + (iz as usize * ih + iy as usize) * iw;
                                let col = (oz * oh + oy) * ow + lo;
                                f(row, col, in_base + lo * sx + kx - px, hi - lo);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Lowers one sample `[C, D, H, W]` into columns `col_off..col_off + P`
    /// of a `[C*kd*kh*kw, ld]` matrix, where `P = od*oh*ow`. Out-of-bounds
    /// taps are written as zero.
    pub fn im2col(&self, x: &[f64], cols: &mut [f64], ld: usize, col_off: usize) {
        let p = self.out_plane();
        let rows = self.spec.patch_len();
        for r in 0..rows {
            cols[r * ld + col_off..r * ld + col_off + p].fill(0.0);
        }
        let sx = self.spec.stride[2];
        self.for_each_run(|row, col, src, len| {
            let dst = &mut cols[row * ld + col_off + col..row * ld + col_off + col + len];
            if sx == 1 {
                dst.copy_from_slice(&x[src..src + len]);
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = x[src + j * sx];
                }
            }
        });
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters columns back onto one
    /// sample's input gradient.
    pub fn col2im(&self, cols: &[f64], ld: usize, col_off: usize, dx: &mut [f64]) {
        let sx = self.spec.stride[2];
        self.for_each_run(|row, col, src, len| {
            let from = &cols[row * ld + col_off + col..row * ld + col_off + col + len];
            if sx == 1 {
                for (d, v) in dx[src..src + len].iter_mut().zip(from) {
                    *d += v;
                }
            } else {
                for (j, v) in from.iter().enumerate() {
                    dx[src + j * sx] += v;
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2,3],[4,5,6]] (2x3), b = [[1,0],[0,1],[1,1]] (3x2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [1.0; 4];
        gemm(2, 3, 2, &at, true, &bt, true, 1.0, &mut c2);
        assert_eq!(c2, [5.0, 6.0, 11.0, 12.0]);
    }

    #[test]
    fn output_extents() {
        let s = ConvSpec::conv2d(1, 1, 3, 1, 0);
        assert_eq!(s.output_extent([1, 11, 11]).unwrap(), [1, 9, 9]);
        let s = ConvSpec::conv2d(1, 1, 2, 2, 0);
        assert_eq!(s.output_extent([1, 7, 7]).unwrap(), [1, 3, 3]);
        let s = ConvSpec::conv3d(1, 1, (4, 3), (1, 1), 1);
        assert_eq!(s.output_extent([7, 9, 9]).unwrap(), [4, 9, 9]);
        assert!(ConvSpec::conv2d(1, 1, 3, 1, 0).output_extent([1, 2, 5]).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let specs = [
            ConvSpec::conv2d(2, 1, 3, 1, 1),
            ConvSpec::conv2d(2, 1, 2, 2, 0),
            ConvSpec::conv2d(1, 1, 3, 2, 1),
            ConvSpec::conv3d(2, 1, (2, 3), (2, 1), 1),
        ];
        for spec in specs {
            let g = ConvGeom::new(spec, [4, 5, 5]).unwrap();
            let n_in = spec.in_channels * g.in_plane();
            let (k, p) = (spec.patch_len(), g.out_plane());
            let x: Vec<f64> = (0..n_in).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            let c: Vec<f64> = (0..k * 2 * p).map(|i| ((i * 104729) % 11) as f64 - 5.0).collect();
            let mut cols = vec![0.0; k * 2 * p];
            g.im2col(&x, &mut cols, 2 * p, p);
            let mut dx = vec![0.0; n_in];
            g.col2im(&c, 2 * p, p, &mut dx);
            let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
            assert_eq!(lhs, rhs);
        }
    }
}
