//! Joint spatio-temporal receptive fields applied to dense frame tensors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StrfError};
use crate::spatial::{sample_kernel, DiscreteKernel, KernelSpec};
use crate::temporal::TemporalKernel;

/// Dense `[t, c, y, x]` tensor of samples taken every `dt` time units.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    pub data: Vec<f64>,
    /// `(T, C, H, W)`
    pub dims: (usize, usize, usize, usize),
    pub dt: f64,
    /// Time of frame 0.
    pub t0: f64,
}

impl FrameTensor {
    pub fn zeros(t: usize, c: usize, h: usize, w: usize, dt: f64) -> Self {
        FrameTensor {
            data: vec![0.0; t * c * h * w],
            dims: (t, c, h, w),
            dt,
            t0: 0.0,
        }
    }

    pub fn from_vec(data: Vec<f64>, dims: (usize, usize, usize, usize), dt: f64) -> Result<Self> {
        let (t, c, h, w) = dims;
        if data.len() != t * c * h * w {
            return Err(StrfError::config(format!(
                "tensor data has {} values, dims {:?} need {}",
                data.len(),
                dims,
                t * c * h * w
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(StrfError::domain("tensor contains non-finite values"));
        }
        if !(dt > 0.0) {
            return Err(StrfError::domain(format!("dt must be positive, got {dt}")));
        }
        Ok(FrameTensor { data, dims, dt, t0: 0.0 })
    }

    pub fn frame_len(&self) -> usize {
        self.dims.2 * self.dims.3
    }

    pub fn frame(&self, t: usize, c: usize) -> &[f64] {
        let n = self.frame_len();
        let start = (t * self.dims.1 + c) * n;
        &self.data[start..start + n]
    }

    pub fn frame_mut(&mut self, t: usize, c: usize) -> &mut [f64] {
        let n = self.frame_len();
        let start = (t * self.dims.1 + c) * n;
        &mut self.data[start..start + n]
    }

    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> f64 {
        self.frame(t, c)[y * self.dims.3 + x]
    }

    pub fn set(&mut self, t: usize, c: usize, y: usize, x: usize, v: f64) {
        let w = self.dims.3;
        self.frame_mut(t, c)[y * w + x] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Padding {
    Zero,
    #[default]
    Replicate,
}

/// Same-size 2-D correlation of an `h x w` frame with `kernel`.
pub fn convolve2d(frame: &[f64], h: usize, w: usize, kernel: &DiscreteKernel, padding: Padding) -> Vec<f64> {
    let (kh, kw) = (kernel.height, kernel.width);
    let (cy, cx) = kernel.center();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..kh {
                let sy = y as isize + i as isize - cy as isize;
                let sy = match padding {
                    Padding::Zero if sy < 0 || sy >= h as isize => continue,
                    _ => sy.clamp(0, h as isize - 1) as usize,
                };
                let row = &frame[sy * w..(sy + 1) * w];
                let krow = &kernel.weights[i * kw..(i + 1) * kw];
                for (j, k) in krow.iter().enumerate() {
                    let sx = x as isize + j as isize - cx as isize;
                    let sx = match padding {
                        Padding::Zero if sx < 0 || sx >= w as isize => continue,
                        _ => sx.clamp(0, w as isize - 1) as usize,
                    };
                    acc += k * row[sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Bilinear sample of an `h x w` frame at `(x, y)`; pixels outside read as 0.
pub fn bilinear(frame: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let get = |yy: isize, xx: isize| {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            0.0
        } else {
            frame[yy as usize * w + xx as usize]
        }
    };
    (1.0 - fy) * ((1.0 - fx) * get(y0, x0) + fx * get(y0, x0 + 1))
        + fy * ((1.0 - fx) * get(y0 + 1, x0) + fx * get(y0 + 1, x0 + 1))
}

/// Resample every frame into the frame of reference moving with `v`
/// (pixels per time unit): `out_t(x) = f_t(x + v (t0 + t dt))`.
pub fn galilean_warp(frames: &FrameTensor, v: [f64; 2]) -> FrameTensor {
    if v == [0.0, 0.0] {
        return frames.clone();
    }
    let (_, c, h, w) = frames.dims;
    let n = frames.frame_len();
    let mut out = frames.clone();
    out.data.par_chunks_mut(n).enumerate().for_each(|(idx, dst)| {
        let t = idx / c;
        let src = &frames.data[idx * n..(idx + 1) * n];
        let time = frames.t0 + t as f64 * frames.dt;
        let (ox, oy) = (v[0] * time, v[1] * time);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = bilinear(src, h, w, x as f64 + ox, y as f64 + oy);
            }
        }
    });
    out
}

/// Separable spatio-temporal receptive field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrfSpec {
    /// Spatial kernel; its `velocity` field sets the velocity adaptation.
    pub spatial: KernelSpec,
    pub temporal: TemporalKernel,
    /// Odd kernel grid; `None` covers +-3 standard deviations.
    pub grid: Option<(usize, usize)>,
    pub supersample: usize,
    pub padding: Padding,
}

impl StrfSpec {
    pub fn new(spatial: KernelSpec, temporal: TemporalKernel) -> Self {
        StrfSpec {
            spatial,
            temporal,
            grid: None,
            supersample: 4,
            padding: Padding::Replicate,
        }
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.spatial.velocity
    }

    pub fn kernel_grid(&self) -> Result<(usize, usize)> {
        if let Some(g) = self.grid {
            return Ok(g);
        }
        let cov = self.spatial.covariance()?;
        let hy = (3.0 * cov.yy.sqrt()).ceil() as usize;
        let hx = (3.0 * cov.xx.sqrt()).ceil() as usize;
        Ok((2 * hy + 1, 2 * hx + 1))
    }

    pub fn sampled_kernel(&self) -> Result<DiscreteKernel> {
        sample_kernel(&self.spatial, self.kernel_grid()?, self.supersample)
    }
}

/// Apply every temporal filter along time independently per pixel, in place.
pub fn filter_time(frames: &mut FrameTensor, temporal: &TemporalKernel) -> Result<()> {
    temporal.validate()?;
    let (t_len, c, h, w) = frames.dims;
    let pixels = c * h * w;
    let dt = frames.dt;
    let columns: Vec<Vec<f64>> = (0..pixels)
        .into_par_iter()
        .map(|p| {
            let series: Vec<f64> = (0..t_len).map(|t| frames.data[t * pixels + p]).collect();
            temporal.filter(&series, dt)
        })
        .collect::<Result<_>>()?;
    for (p, col) in columns.iter().enumerate() {
        for (t, v) in col.iter().enumerate() {
            frames.data[t * pixels + p] = *v;
        }
    }
    Ok(())
}

/// Response of a velocity-adapted separable receptive field, expressed in
/// the frame of reference moving with the field's velocity.
pub fn respond(frames: &FrameTensor, spec: &StrfSpec) -> Result<FrameTensor> {
    spec.spatial.validate()?;
    let kernel = spec.sampled_kernel()?;
    let mut out = galilean_warp(frames, spec.velocity());
    let (_, _, h, w) = out.dims;
    let n = out.frame_len();
    out.data.par_chunks_mut(n).for_each(|frame| {
        let smoothed = convolve2d(frame, h, w, &kernel, spec.padding);
        frame.copy_from_slice(&smoothed);
    });
    filter_time(&mut out, &spec.temporal)?;
    Ok(out)
}

/// Relative L2 distance `|a - b| / |b|` over the entries selected by `mask`.
pub fn rel_l2_masked(a: &[f64], b: &[f64], mask: impl Fn(usize) -> bool) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if mask(i) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    rel_l2_masked(a, b, |_| true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::{h_exp, LifParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_frame(&mut rng, 12 * 7);
        assert_eq!(convolve2d(&f, 12, 7, &DiscreteKernel::identity(), Padding::Zero), f);
        assert_eq!(convolve2d(&f, 12, 7, &DiscreteKernel::identity(), Padding::Replicate), f);
    }

    #[test]
    fn constant_frame_keeps_value() {
        let k = sample_kernel(&KernelSpec::gaussian(2.0, 1.0, 0.4), (9, 9), 4).unwrap();
        let out = convolve2d(&vec![0.37; 100], 10, 10, &k, Padding::Replicate);
        for v in out {
            assert_abs_diff_eq!(v, 0.37, epsilon = 1e-6);
        }
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_frame(&mut rng, 256);
        let kw = random_frame(&mut rng, 25);
        let k = DiscreteKernel::from_weights(kw.clone(), 5, 5).unwrap();
        for padding in [Padding::Zero, Padding::Replicate] {
            let got = convolve2d(&f, 16, 16, &k, padding);
            for y in 0..16i32 {
                for x in 0..16i32 {
                    let mut acc = 0.0;
                    for i in 0..5i32 {
                        for j in 0..5i32 {
                            let (mut sy, mut sx) = (y + i - 2, x + j - 2);
                            if padding == Padding::Zero && !(0..16).contains(&sy) || padding == Padding::Zero && !(0..16).contains(&sx) {
                                continue;
                            }
                            sy = sy.clamp(0, 15);
                            sx = sx.clamp(0, 15);
                            acc += kw[(i * 5 + j) as usize] * f[(sy * 16 + sx) as usize];
                        }
                    }
                    assert_abs_diff_eq!(got[(y * 16 + x) as usize], acc, epsilon = 1e-6);
                }
            }
        }
    }

    fn moving_impulse(steps: usize, size: usize) -> FrameTensor {
        let mut f = FrameTensor::zeros(steps, 1, size, size, 1.0);
        for t in 0..steps {
            f.set(t, 0, 8, 2 + t, 1.0);
        }
        f
    }

    #[test]
    fn zero_velocity_warp_is_identity() {
        let f = moving_impulse(5, 16);
        assert_eq!(galilean_warp(&f, [0.0, 0.0]), f);
    }

    #[test]
    fn warp_cancels_motion() {
        let f = moving_impulse(6, 16);
        let g = galilean_warp(&f, [1.0, 0.0]);
        for t in 0..6 {
            assert_eq!(g.frame(t, 0), g.frame(0, 0));
            assert_eq!(g.get(t, 0, 8, 2), 1.0);
        }
    }

    #[test]
    /// Wavelengths of at least 40 px, where two bilinear passes attenuate by well under 1%.
    fn warp_round_trip_band_limited() {
        let (h, w, steps) = (48, 48, 6);
        let mut f = FrameTensor::zeros(steps, 1, h, w, 1.0);
        for t in 0..steps {
            for y in 0..h {
                for x in 0..w {
                    let v = (x as f64 * 0.13 + y as f64 * 0.07 + t as f64 * 0.2).sin() + (y as f64 * 0.11).cos();
                    f.set(t, 0, y, x, v);
                }
            }
        }
        let v = [0.43, -0.27];
        let back = galilean_warp(&galilean_warp(&f, v), [-v[0], -v[1]]);
        // Interior only: the round trip loses content shifted across the border.
        let margin = 4;
        let err = rel_l2_masked(&back.data, &f.data, |i| {
            let x = i % w;
            let y = (i / w) % h;
            x >= margin && y >= margin && x < w - margin && y < h - margin
        });
        assert!(err < 0.01, "round trip error {err}");
    }

    #[test]
    fn constant_video_passes_through() {
        let mu = 2.0;
        let dt = 0.1;
        let steps = (55.0 * mu / dt) as usize;
        let f = FrameTensor::from_vec(vec![0.8; steps * 10 * 10], (steps, 1, 10, 10), dt).unwrap();
        let spec = StrfSpec::new(KernelSpec::gaussian(1.5, 1.0, 0.3), TemporalKernel::Li { mu });
        let out = respond(&f, &spec).unwrap();
        for v in out.frame(steps - 1, 0) {
            assert_abs_diff_eq!(*v, 0.8, epsilon = 1e-6);
        }
    }

    #[test]
    fn impulse_response_is_outer_product() {
        let mu = 1.0;
        let dt = mu / 100.0;
        let steps = 400;
        let size = 15;
        let mut f = FrameTensor::zeros(steps, 1, size, size, dt);
        f.set(0, 0, 7, 7, 1.0);
        let mut spec = StrfSpec::new(KernelSpec::gaussian(1.5, 1.5, 0.0), TemporalKernel::Li { mu });
        spec.padding = Padding::Zero;
        spec.grid = Some((size, size));
        let out = respond(&f, &spec).unwrap();
        let k = spec.sampled_kernel().unwrap();
        let mut oracle = Vec::with_capacity(out.data.len());
        for t in 0..steps {
            let ht = h_exp((t as f64 + 0.5) * dt, mu).unwrap() * dt;
            for y in 0..size {
                for x in 0..size {
                    // Correlation with a centred impulse flips the kernel.
                    oracle.push(k.at(size - 1 - y, size - 1 - x) * ht);
                }
            }
        }
        assert!(rel_l2(&out.data, &oracle) < 1e-3);
    }

    #[test]
    fn respond_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = (20, 1, 12, 12);
        let n = 20 * 144;
        let f = FrameTensor::from_vec(random_frame(&mut rng, n), dims, 0.1).unwrap();
        let g = FrameTensor::from_vec(random_frame(&mut rng, n), dims, 0.1).unwrap();
        let (a, b) = (1.7, -0.4);
        let combo = FrameTensor::from_vec(f.data.iter().zip(&g.data).map(|(x, y)| a * x + b * y).collect(), dims, 0.1).unwrap();
        let mut spatial = KernelSpec::gaussian(1.5, 1.0, 0.2).with_derivative(1, 0);
        spatial.velocity = [0.3, 0.1];
        let spec = StrfSpec::new(spatial, TemporalKernel::Li { mu: 0.5 });
        let rf = respond(&f, &spec).unwrap();
        let rg = respond(&g, &spec).unwrap();
        let rc = respond(&combo, &spec).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(rc.data[i], a * rf.data[i] + b * rg.data[i], epsilon = 1e-6);
        }
    }

    /// Direct 3-D correlation with the rank-one kernel g(x) k[n], where k[n]
    /// is the impulse response of the discrete integrator.
    #[test]
    fn separable_equals_full_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (steps, size, dt, mu) = (16, 8, 0.2, 0.7);
        let f = FrameTensor::from_vec(random_frame(&mut rng, steps * size * size), (steps, 1, size, size), dt).unwrap();
        let mut spec = StrfSpec::new(KernelSpec::gaussian(1.0, 0.8, 0.5), TemporalKernel::Li { mu });
        spec.grid = Some((5, 5));
        let out = respond(&f, &spec).unwrap();
        let g = spec.sampled_kernel().unwrap();
        let d = (-dt / mu).exp();
        let k: Vec<f64> = (0..steps).map(|n| (1.0 - d) * d.powi(n as i32)).collect();
        let mut oracle = vec![0.0; out.data.len()];
        for t in 0..steps {
            for y in 0..size {
                for x in 0..size {
                    let mut acc = 0.0;
                    for s in 0..=t {
                        for i in 0..5 {
                            for j in 0..5 {
                                let sy = (y as isize + i as isize - 2).clamp(0, size as isize - 1) as usize;
                                let sx = (x as isize + j as isize - 2).clamp(0, size as isize - 1) as usize;
                                acc += k[t - s] * g.at(i, j) * f.get(s, 0, sy, sx);
                            }
                        }
                    }
                    oracle[(t * size + y) * size + x] = acc;
                }
            }
        }
        assert!(rel_l2(&out.data, &oracle) < 1e-6);
    }

    fn texture(x: f64, y: f64) -> f64 {
        (0.31 * x + 0.12 * y).sin() + 0.7 * (0.09 * x - 0.27 * y + 1.0).cos() + 0.5 * (0.2 * y).sin()
    }

    #[test]
    fn velocity_adaptation_cancels_translation() {
        let (steps, size, u) = (30, 40, [0.5, 0.25]);
        let mut moving = FrameTensor::zeros(steps, 1, size, size, 1.0);
        let mut still = FrameTensor::zeros(steps, 1, size, size, 1.0);
        for t in 0..steps {
            for y in 0..size {
                for x in 0..size {
                    let (xf, yf) = (x as f64, y as f64);
                    moving.set(t, 0, y, x, texture(xf - u[0] * t as f64, yf - u[1] * t as f64));
                    still.set(t, 0, y, x, texture(xf, yf));
                }
            }
        }
        let mut spatial = KernelSpec::gaussian(1.5, 1.5, 0.0);
        let still_resp = respond(&still, &StrfSpec::new(spatial, TemporalKernel::Li { mu: 2.0 })).unwrap();
        spatial.velocity = u;
        let moving_resp = respond(&moving, &StrfSpec::new(spatial, TemporalKernel::Li { mu: 2.0 })).unwrap();
        // Exclude the kernel margin and the region that leaves the sensor.
        let margin = 5;
        let max_shift = (u[0].max(u[1]) * steps as f64).ceil() as usize;
        let err = rel_l2_masked(&moving_resp.data, &still_resp.data, |i| {
            let x = i % size;
            let y = (i / size) % size;
            x >= margin && y >= margin && x + margin + max_shift < size && y + margin + max_shift < size
        });
        assert!(err < 0.02, "velocity adaptation error {err}");
    }

    #[test]
    fn respond_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dims = (12, 1, 10, 10);
        let f = FrameTensor::from_vec(random_frame(&mut rng, 1200), dims, 0.1).unwrap();
        let mut g = f.clone();
        for v in g.frame_mut(8, 0) {
            *v += 3.0;
        }
        let spec = StrfSpec::new(
            KernelSpec::gaussian(1.0, 1.0, 0.0),
            TemporalKernel::Lif { mu: 0.3, params: LifParams::default() },
        );
        let a = respond(&f, &spec).unwrap();
        let b = respond(&g, &spec).unwrap();
        assert_eq!(a.data[..800], b.data[..800]);
        assert_ne!(a.data[800..900], b.data[800..900]);
    }

    proptest! {
        #[test]
        fn convolution_is_linear(seed in 0u64..1000, a in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng, 81);
            let k = DiscreteKernel::from_weights(random_frame(&mut rng, 9), 3, 3).unwrap();
            let scaled: Vec<f64> = f.iter().map(|v| a * v).collect();
            let x = convolve2d(&scaled, 9, 9, &k, Padding::Replicate);
            let y = convolve2d(&f, 9, 9, &k, Padding::Replicate);
            for (p, q) in x.iter().zip(&y) {
                prop_assert!((p - a * q).abs() < 1e-12);
            }
        }
    }
}
