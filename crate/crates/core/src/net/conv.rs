//! Grouped 2-D convolution (cross-correlation) with zero "same" padding.
//!
//! Tensors are channel-major `[C, H, W]` slices. Weights are
//! `[out_c, in_c / groups, k, k]`.

use crate::{Result, StrfError};

/// Inputs with at most this fraction of nonzeros take the scatter path.
const SPARSE_FRACTION: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub groups: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvShape {
    pub fn new(in_c: usize, out_c: usize, groups: usize, k: usize, stride: usize, in_h: usize, in_w: usize) -> Result<Self> {
        if groups == 0 || in_c % groups != 0 || out_c % groups != 0 {
            return Err(StrfError::config(format!("{in_c} -> {out_c} channels do not split into {groups} groups")));
        }
        if k % 2 == 0 || stride == 0 || in_h == 0 || in_w == 0 {
            return Err(StrfError::config(format!("bad convolution geometry: k={k}, stride={stride}, input {in_h}x{in_w}")));
        }
        let pad = k / 2;
        Ok(ConvShape {
            in_c,
            out_c,
            groups,
            k,
            stride,
            pad,
            in_h,
            in_w,
            out_h: (in_h + 2 * pad - k) / stride + 1,
            out_w: (in_w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn cin_g(&self) -> usize {
        self.in_c / self.groups
    }

    pub fn cout_g(&self) -> usize {
        self.out_c / self.groups
    }

    /// Rows of the unfolded input per group.
    fn patch(&self) -> usize {
        self.cin_g() * self.k * self.k
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.patch()
    }

    pub fn input_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }

    /// Unfold the channels of group `g` into `col` (`patch x out_h*out_w`).
    fn im2col(&self, input: &[f64], g: usize, col: &mut Vec<f64>) {
        let n = self.out_h * self.out_w;
        col.clear();
        col.resize(self.patch() * n, 0.0);
        let kk = self.k * self.k;
        for c in 0..self.cin_g() {
            let plane = &input[(g * self.cin_g() + c) * self.in_h * self.in_w..][..self.in_h * self.in_w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &mut col[(c * kk + ky * self.k + kx) * n..][..n];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..][..self.in_w];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.in_w as isize {
                                row[oy * self.out_w + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Fold `col` back and add it to the channels of group `g` in `grad_in`.
    fn col2im(&self, col: &[f64], g: usize, grad_in: &mut [f64]) {
        let n = self.out_h * self.out_w;
        let kk = self.k * self.k;
        for c in 0..self.cin_g() {
            let plane = &mut grad_in[(g * self.cin_g() + c) * self.in_h * self.in_w..][..self.in_h * self.in_w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &col[(c * kk + ky * self.k + kx) * n..][..n];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.in_w as isize {
                                plane[iy as usize * self.in_w + ix as usize] += row[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Output positions `(oy, ox, ky, kx)` touched by input pixel `(iy, ix)`.
    fn taps(&self, iy: usize, ix: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let axis = |i: usize, n_out: usize| {
            let p = i + self.pad;
            let lo = (p + 1).saturating_sub(self.k).div_ceil(self.stride);
            let hi = (p / self.stride).min(n_out - 1);
            (lo, hi, p)
        };
        let (ylo, yhi, py) = axis(iy, self.out_h);
        let (xlo, xhi, px) = axis(ix, self.out_w);
        for oy in ylo..=yhi {
            for ox in xlo..=xhi {
                f(oy, ox, py - oy * self.stride, px - ox * self.stride);
            }
        }
    }

    fn nonzeros(&self, input: &[f64]) -> Option<Vec<(usize, usize, usize, f64)>> {
        let limit = input.len() / SPARSE_FRACTION;
        let mut nz = Vec::new();
        let plane = self.in_h * self.in_w;
        for (i, v) in input.iter().enumerate() {
            if *v != 0.0 {
                if nz.len() == limit {
                    return None;
                }
                nz.push((i / plane, (i % plane) / self.in_w, i % self.in_w, *v));
            }
        }
        Some(nz)
    }

    /// `out = conv(input, weight) + bias`. `scratch` is reused between calls.
    pub fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.input_len());
        debug_assert_eq!(weight.len(), self.weight_len());
        let n = self.out_h * self.out_w;
        for (o, b) in bias.iter().enumerate() {
            out[o * n..(o + 1) * n].fill(*b);
        }
        if let Some(nz) = self.nonzeros(input) {
            let (cin_g, cout_g, kk) = (self.cin_g(), self.cout_g(), self.k * self.k);
            for (c, iy, ix, v) in nz {
                let g = c / cin_g;
                let cl = c % cin_g;
                self.taps(iy, ix, |oy, ox, ky, kx| {
                    for o in g * cout_g..(g + 1) * cout_g {
                        out[o * n + oy * self.out_w + ox] += v * weight[(o * cin_g + cl) * kk + ky * self.k + kx];
                    }
                });
            }
            return;
        }
        let (p, cout_g) = (self.patch(), self.cout_g());
        for g in 0..self.groups {
            self.im2col(input, g, scratch);
            let w = &weight[g * cout_g * p..][..cout_g * p];
            let c = &mut out[g * cout_g * n..][..cout_g * n];
            // SAFETY: slice lengths match the row-major strides passed.
            unsafe {
                matrixmultiply::dgemm(
                    cout_g, p, n, 1.0,
                    w.as_ptr(), p as isize, 1,
                    scratch.as_ptr(), n as isize, 1,
                    1.0, c.as_mut_ptr(), n as isize, 1,
                );
            }
        }
    }

    /// Accumulate weight and bias gradients, and the input gradient when asked.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        input: &[f64],
        weight: &[f64],
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        grad_in: Option<&mut [f64]>,
        scratch: &mut Vec<f64>,
    ) {
        let n = self.out_h * self.out_w;
        for (o, gb) in grad_b.iter_mut().enumerate() {
            *gb += grad_out[o * n..(o + 1) * n].iter().sum::<f64>();
        }
        let (p, cout_g) = (self.patch(), self.cout_g());
        let sparse = if grad_in.is_none() { self.nonzeros(input) } else { None };
        if let Some(nz) = sparse {
            let (cin_g, kk) = (self.cin_g(), self.k * self.k);
            for (c, iy, ix, v) in nz {
                let g = c / cin_g;
                let cl = c % cin_g;
                self.taps(iy, ix, |oy, ox, ky, kx| {
                    for o in g * cout_g..(g + 1) * cout_g {
                        grad_w[(o * cin_g + cl) * kk + ky * self.k + kx] += v * grad_out[o * n + oy * self.out_w + ox];
                    }
                });
            }
            return;
        }
        let mut grad_in = grad_in;
        let mut gcol = Vec::new();
        for g in 0..self.groups {
            self.im2col(input, g, scratch);
            let go = &grad_out[g * cout_g * n..][..cout_g * n];
            let gw = &mut grad_w[g * cout_g * p..][..cout_g * p];
            // SAFETY: as in `forward`; the unfolded matrix is read transposed.
            unsafe {
                matrixmultiply::dgemm(
                    cout_g, n, p, 1.0,
                    go.as_ptr(), n as isize, 1,
                    scratch.as_ptr(), 1, n as isize,
                    1.0, gw.as_mut_ptr(), p as isize, 1,
                );
            }
            if let Some(gi) = grad_in.as_deref_mut() {
                let w = &weight[g * cout_g * p..][..cout_g * p];
                gcol.clear();
                gcol.resize(p * n, 0.0);
                // SAFETY: the weight block is read transposed.
                unsafe {
                    matrixmultiply::dgemm(
                        p, cout_g, n, 1.0,
                        w.as_ptr(), 1, p as isize,
                        go.as_ptr(), n as isize, 1,
                        0.0, gcol.as_mut_ptr(), n as isize, 1,
                    );
                }
                self.col2im(&gcol, g, gi);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::{stream, StreamRole};

    fn naive(s: &ConvShape, input: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; s.output_len()];
        for o in 0..s.out_c {
            let g = o / s.cout_g();
            for oy in 0..s.out_h {
                for ox in 0..s.out_w {
                    let mut acc = b[o];
                    for c in 0..s.cin_g() {
                        for ky in 0..s.k {
                            for kx in 0..s.k {
                                let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                                let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < s.in_h && (ix as usize) < s.in_w {
                                    acc += w[((o * s.cin_g() + c) * s.k + ky) * s.k + kx]
                                        * input[((g * s.cin_g() + c) * s.in_h + iy as usize) * s.in_w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * s.out_h + oy) * s.out_w + ox] = acc;
                }
            }
        }
        out
    }

    fn random(n: usize, seed: u64, density: f64) -> Vec<f64> {
        let mut r = stream(seed, 0, StreamRole::Signal);
        (0..n).map(|_| if r.gen::<f64>() < density { r.gen_range(-1.0..1.0) } else { 0.0 }).collect()
    }

    #[test]
    fn dense_and_sparse_paths_match_naive_loops() {
        for (s, density) in [
            (ConvShape::new(4, 6, 2, 3, 2, 9, 7).unwrap(), 1.0),
            (ConvShape::new(2, 4, 1, 5, 4, 16, 16).unwrap(), 0.02),
            (ConvShape::new(3, 3, 3, 1, 1, 5, 5).unwrap(), 1.0),
        ] {
            let x = random(s.input_len(), 1, density);
            let w = random(s.weight_len(), 2, 1.0);
            let b = random(s.out_c, 3, 1.0);
            let mut out = vec![0.0; s.output_len()];
            s.forward(&x, &w, &b, &mut out, &mut Vec::new());
            for (a, e) in out.iter().zip(naive(&s, &x, &w, &b)) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_the_adjoint_of_forward() {
        for density in [1.0, 0.03] {
            let s = ConvShape::new(4, 6, 2, 3, 2, 10, 8).unwrap();
            let x = random(s.input_len(), 4, density);
            let w = random(s.weight_len(), 5, 1.0);
            let b = vec![0.0; s.out_c];
            let go = random(s.output_len(), 6, 1.0);
            let (mut gw, mut gb, mut gi) = (vec![0.0; w.len()], vec![0.0; s.out_c], vec![0.0; x.len()]);
            s.backward(&x, &w, &go, &mut gw, &mut gb, Some(&mut gi), &mut Vec::new());
            // <go, conv(x, w)> is bilinear: its gradients in x and w are gi and gw.
            let dot = |x: &[f64], w: &[f64]| naive(&s, x, w, &b).iter().zip(&go).map(|(a, g)| a * g).sum::<f64>();
            let base = dot(&x, &w);
            let mut ex = vec![0.0; x.len()];
            ex[17] = 1.0;
            let shifted: Vec<f64> = x.iter().zip(&ex).map(|(a, e)| a + e).collect();
            assert!((dot(&shifted, &w) - base - gi[17]).abs() < 1e-10);
            let mut w2 = w.clone();
            w2[11] += 1.0;
            assert!((dot(&x, &w2) - base - gw[11]).abs() < 1e-10);
            let (mut gw_sparse, mut gb_sparse) = (vec![0.0; w.len()], vec![0.0; s.out_c]);
            s.backward(&x, &w, &go, &mut gw_sparse, &mut gb_sparse, None, &mut Vec::new());
            for (a, e) in gw_sparse.iter().zip(&gw) {
                assert!((a - e).abs() < 1e-10);
            }
            assert_eq!(gb, gb_sparse);
        }
    }

    #[test]
    fn output_geometry() {
        let s = ConvShape::new(2, 8, 1, 9, 4, 64, 64).unwrap();
        assert_eq!((s.out_h, s.out_w), (16, 16));
        let s = ConvShape::new(8, 8, 4, 9, 2, 16, 16).unwrap();
        assert_eq!((s.out_h, s.out_w), (8, 8));
        assert!(ConvShape::new(6, 4, 4, 3, 1, 8, 8).is_err());
    }
}
