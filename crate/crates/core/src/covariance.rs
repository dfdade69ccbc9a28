//! Numerical checks that receptive-field responses commute with affine,
//! Galilean and temporal-scaling transformations once the field parameters
//! are matched.
//!
//! Transformations act as `x' = A (x - c) + c + u t` and `t' = S t`, where `c`
//! is the image centre. Matched parameters are `Sigma' = A Sigma A^T`,
//! `mu' = S mu` and `v' = (A v + u) / S`.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{bilinear, convolve2d, respond, FrameTensor, Padding, StrfSpec};
use crate::error::{Result, StrfError};
use crate::rng::{stream, StreamRole};
use crate::spatial::{sample_kernel, Covariance2, KernelSpec};
use crate::temporal::{run_lif, LifParams, TemporalKernel};

/// Linear map of the plane, a velocity offset and a temporal scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap2 {
    pub a: [[f64; 2]; 2],
    pub u: [f64; 2],
    pub s_t: f64,
}

impl AffineMap2 {
    pub fn identity() -> Self {
        AffineMap2 {
            a: [[1.0, 0.0], [0.0, 1.0]],
            u: [0.0, 0.0],
            s_t: 1.0,
        }
    }

    pub fn linear(a: [[f64; 2]; 2]) -> Self {
        AffineMap2 { a, ..Self::identity() }
    }

    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::linear([[c, -s], [s, c]])
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Self::linear([[sx, 0.0], [0.0, sy]])
    }

    /// `self` applied after `other` (linear parts only; `u`, `s_t` from `self`).
    pub fn compose(&self, other: &AffineMap2) -> AffineMap2 {
        let (p, q) = (self.a, other.a);
        AffineMap2 {
            a: [
                [p[0][0] * q[0][0] + p[0][1] * q[1][0], p[0][0] * q[0][1] + p[0][1] * q[1][1]],
                [p[1][0] * q[0][0] + p[1][1] * q[1][0], p[1][0] * q[0][1] + p[1][1] * q[1][1]],
            ],
            ..*self
        }
    }

    pub fn det(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.det();
        if !(d.abs() > 1e-12) || !d.is_finite() {
            return Err(StrfError::domain(format!("affine map is singular (det = {d})")));
        }
        if !(self.s_t > 0.0) || !self.s_t.is_finite() {
            return Err(StrfError::domain(format!("temporal scale factor must be positive, got {}", self.s_t)));
        }
        if !self.u.iter().all(|v| v.is_finite()) {
            return Err(StrfError::domain("velocity offset must be finite"));
        }
        Ok(())
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.a[0][0] * x + self.a[0][1] * y, self.a[1][0] * x + self.a[1][1] * y)
    }

    pub fn apply_inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let d = self.det();
        (
            (self.a[1][1] * x - self.a[0][1] * y) / d,
            (-self.a[1][0] * x + self.a[0][0] * y) / d,
        )
    }

    /// Matched spatial covariance `A Sigma A^T`.
    pub fn covariance(&self, sigma: &Covariance2) -> Covariance2 {
        sigma.transformed(&self.a)
    }

    /// Matched velocity `(A v + u) / S`.
    pub fn velocity(&self, v: [f64; 2]) -> [f64; 2] {
        let (x, y) = self.apply(v[0], v[1]);
        [(x + self.u[0]) / self.s_t, (y + self.u[1]) / self.s_t]
    }

    /// Matched temporal kernel: every time constant scales by `S`.
    pub fn temporal(&self, kernel: &TemporalKernel) -> TemporalKernel {
        let s = self.s_t;
        match kernel {
            TemporalKernel::Li { mu } => TemporalKernel::Li { mu: s * mu },
            TemporalKernel::Cascade { mus } => TemporalKernel::Cascade {
                mus: mus.iter().map(|m| s * m).collect(),
            },
            TemporalKernel::Lif { mu, params } => TemporalKernel::Lif {
                mu: s * mu,
                params: LifParams {
                    mu_r: params.mu_r.map(|r| s * r),
                    ..*params
                },
            },
        }
    }
}

/// One row of a covariance report. `passed` holds exactly when `error <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub test: String,
    /// What `error` measures: `rel_l2`, `spike_shift_dt`, `control_ratio` or `ladder_ratio`.
    pub metric: String,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub inconclusive: bool,
    pub dt: f64,
    pub pitch: f64,
    pub supersample: usize,
    pub margin_px: usize,
    pub margin_steps: usize,
    pub note: String,
}

impl CovarianceReport {
    fn new(test: impl Into<String>, metric: &str, error: f64, tolerance: f64) -> Self {
        CovarianceReport {
            test: test.into(),
            metric: metric.into(),
            error,
            tolerance,
            passed: error <= tolerance,
            inconclusive: false,
            dt: 0.0,
            pitch: 1.0,
            supersample: 1,
            margin_px: 0,
            margin_steps: 0,
            note: String::new(),
        }
    }

    /// Ratio of the matched to the deliberately mismatched error; must stay below 1/5.
    pub fn control(test: impl Into<String>, matched: f64, mismatched: f64) -> Self {
        let ratio = if mismatched > 0.0 { matched / mismatched } else { f64::INFINITY };
        let mut r = Self::new(test, "control_ratio", ratio, 0.2);
        r.note = format!("matched {matched:.3e}, mismatched {mismatched:.3e}");
        r
    }

    /// Largest ratio between consecutive errors of a refinement ladder; must not exceed 1.
    pub fn ladder(test: impl Into<String>, errors: &[f64]) -> Self {
        let worst = errors.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        let mut r = Self::new(test, "ladder_ratio", worst, 1.0);
        r.note = errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(" > ");
        r
    }
}

/// One plane wave `amp sin(kx x + ky y - omega t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amp: f64,
    pub kx: f64,
    pub ky: f64,
    pub omega: f64,
    pub phase: f64,
}

/// Band-limited test field: a sum of plane waves plus a constant offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineField {
    pub waves: Vec<Wave>,
    pub offset: f64,
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        (rng.gen_range(lo.ln()..hi.ln())).exp()
    }
}

impl SineField {
    /// `n` waves with wavelengths log-uniform in `wavelengths` and temporal
    /// periods log-uniform in `periods` (`None` for a static image).
    pub fn random(seed: u64, n: usize, wavelengths: Option<(f64, f64)>, periods: Option<(f64, f64)>) -> Self {
        let mut rng = stream(seed, 0, StreamRole::Signal);
        let waves = (0..n)
            .map(|_| {
                let amp = rng.gen_range(0.5..1.0);
                let phase = rng.gen_range(0.0..2.0 * PI);
                let dir = rng.gen_range(0.0..2.0 * PI);
                let (kx, ky) = match wavelengths {
                    Some((lo, hi)) => {
                        let k = 2.0 * PI / log_uniform(&mut rng, lo, hi);
                        (k * dir.cos(), k * dir.sin())
                    }
                    None => (0.0, 0.0),
                };
                let omega = match periods {
                    Some((lo, hi)) => {
                        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                        sign * 2.0 * PI / log_uniform(&mut rng, lo, hi)
                    }
                    None => 0.0,
                };
                Wave { amp, kx, ky, omega, phase }
            })
            .collect();
        SineField { waves, offset: 0.0 }
    }

    pub fn image(seed: u64, wavelengths: (f64, f64)) -> Self {
        Self::random(seed, 8, Some(wavelengths), None)
    }

    pub fn signal(seed: u64, periods: (f64, f64)) -> Self {
        Self::random(seed, 8, None, Some(periods))
    }

    pub fn video(seed: u64, wavelengths: (f64, f64), periods: (f64, f64)) -> Self {
        Self::random(seed, 8, Some(wavelengths), Some(periods))
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    /// Rescale amplitudes so the peak possible excursion is `peak`.
    pub fn with_peak(mut self, peak: f64) -> Self {
        let total: f64 = self.waves.iter().map(|w| w.amp).sum();
        for w in &mut self.waves {
            w.amp *= peak / total;
        }
        self
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        self.offset
            + self
                .waves
                .iter()
                .map(|w| w.amp * (w.kx * x + w.ky * y - w.omega * t + w.phase).sin())
                .sum::<f64>()
    }

    /// Sample on an `h x w` grid of spacing `pitch` centred on the origin.
    pub fn sample_image(&self, h: usize, w: usize, pitch: f64, t: f64) -> Vec<f64> {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                out.push(self.eval((x as f64 - cx) * pitch, (y as f64 - cy) * pitch, t));
            }
        }
        out
    }
}

/// Grid spacing in space and time plus kernel supersampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub dt: f64,
    pub pitch: f64,
    pub supersample: usize,
}

/// Zeroth-order kernel spec with the given covariance (pixels^2).
pub fn gaussian_spec(sigma: &Covariance2) -> KernelSpec {
    let (major, minor, phi) = sigma.eigen();
    KernelSpec::gaussian(major.sqrt(), minor.sqrt(), phi)
}

fn kernel_radius(sigma: &Covariance2) -> usize {
    (3.0 * sigma.xx.max(sigma.yy).sqrt()).ceil() as usize
}

fn smooth(frame: &[f64], h: usize, w: usize, sigma: &Covariance2, supersample: usize) -> Result<Vec<f64>> {
    let r = kernel_radius(sigma);
    let k = sample_kernel(&gaussian_spec(sigma), (2 * r + 1, 2 * r + 1), supersample)?;
    Ok(convolve2d(frame, h, w, &k, Padding::Replicate))
}

/// Resample `frame` through `map` about the image centre: `out(x') = frame(A^{-1}(x' - c) + c)`.
pub fn warp_affine(frame: &[f64], h: usize, w: usize, map: &AffineMap2) -> Vec<f64> {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map.apply_inverse(x as f64 - cx, y as f64 - cy);
            out[y * w + x] = bilinear(frame, h, w, sx + cx, sy + cy);
        }
    }
    out
}

/// Compare `smooth(warp(f); A Sigma A^T)` with `warp(smooth(f; Sigma))` on the
/// interior where neither side sees padding or zero fill.
pub fn check_affine(frame: &[f64], h: usize, w: usize, map: &AffineMap2, sigma: &Covariance2, supersample: usize) -> Result<CovarianceReport> {
    check_affine_with(frame, h, w, map, sigma, &map.covariance(sigma), supersample)
}

/// As [`check_affine`] but smoothing the warped image with an arbitrary `sigma_warped`.
pub fn check_affine_with(
    frame: &[f64],
    h: usize,
    w: usize,
    map: &AffineMap2,
    sigma: &Covariance2,
    sigma_warped: &Covariance2,
    supersample: usize,
) -> Result<CovarianceReport> {
    map.validate()?;
    if frame.len() != h * w {
        return Err(StrfError::config("frame size does not match dimensions"));
    }
    let warped_then_smoothed = smooth(&warp_affine(frame, h, w, map), h, w, sigma_warped, supersample)?;
    let smoothed_then_warped = warp_affine(&smooth(frame, h, w, sigma, supersample)?, h, w, map);
    let r1 = kernel_radius(sigma) as f64;
    let r2 = kernel_radius(sigma_warped) as f64;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let inside = |x: f64, y: f64, m: f64| x >= m && y >= m && x <= w as f64 - 1.0 - m && y <= h as f64 - 1.0 - m;
    let preimage = |x: f64, y: f64| {
        let (sx, sy) = map.apply_inverse(x - cx, y - cy);
        (sx + cx, sy + cy)
    };
    let mut num = 0.0;
    let mut den = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            if !inside(xf, yf, r2) {
                continue;
            }
            let (px, py) = preimage(xf, yf);
            if !inside(px, py, r1 + 1.0) {
                continue;
            }
            // Kernel support of the warped side must map inside the source.
            let corners = [(-r2, -r2), (-r2, r2), (r2, -r2), (r2, r2)];
            if !corners.iter().all(|(dx, dy)| {
                let (qx, qy) = preimage(xf + dx, yf + dy);
                inside(qx, qy, 1.0)
            }) {
                continue;
            }
            let (a, b) = (warped_then_smoothed[y * w + x], smoothed_then_warped[y * w + x]);
            num += (a - b) * (a - b);
            den += b * b;
            count += 1;
        }
    }
    if count == 0 {
        return Err(StrfError::config("affine check has an empty interior; enlarge the image"));
    }
    let err = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    let mut report = CovarianceReport::new("affine", "rel_l2", err, 0.02);
    report.supersample = supersample;
    report.margin_px = r2 as usize;
    report.note = format!("{count} interior pixels");
    Ok(report)
}

/// Relative L2 error between a leaky-integrator (or cascade) response on
/// `signal` and the matched response on the time-rescaled signal.
///
/// Both domains step with the same `dt`; inputs are sampled at step
/// midpoints and the rescaled response is linearly interpolated in time.
pub fn check_temporal_scaling(signal: &SineField, mu: f64, s_t: f64, dt: f64, duration: f64) -> Result<CovarianceReport> {
    check_temporal_kernels(signal, &TemporalKernel::Li { mu }, &TemporalKernel::Li { mu: s_t * mu }, s_t, dt, duration)
        .map(|r| CovarianceReport {
            test: format!("temporal_scaling S={s_t:.4}"),
            ..r
        })
}

/// As [`check_temporal_scaling`] for an arbitrary pair of kernels.
pub fn check_temporal_kernels(
    signal: &SineField,
    kernel: &TemporalKernel,
    kernel_scaled: &TemporalKernel,
    s_t: f64,
    dt: f64,
    duration: f64,
) -> Result<CovarianceReport> {
    if !(s_t > 0.0 && dt > 0.0 && duration > 0.0) {
        return Err(StrfError::domain("temporal check needs positive S, dt and duration"));
    }
    let (a, b, burn) = scaled_traces(signal, kernel, kernel_scaled, s_t, dt, duration)?;
    let err = crate::engine::rel_l2(&a[burn..], &b[burn..]);
    let mut report = CovarianceReport::new("temporal_scaling", "rel_l2", err, 0.005);
    report.dt = dt;
    report.margin_steps = burn;
    Ok(report)
}

/// Responses in domain 1 and the domain-2 response read back at the
/// corresponding times, plus the burn-in length in steps.
fn scaled_traces(
    signal: &SineField,
    kernel: &TemporalKernel,
    kernel_scaled: &TemporalKernel,
    s_t: f64,
    dt: f64,
    duration: f64,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n1 = (duration / dt).round() as usize;
    let n2 = (s_t * n1 as f64).ceil() as usize + 2;
    let f1: Vec<f64> = (0..n1).map(|n| signal.eval(0.0, 0.0, (n as f64 + 0.5) * dt)).collect();
    let f2: Vec<f64> = (0..n2).map(|m| signal.eval(0.0, 0.0, (m as f64 + 0.5) * dt / s_t)).collect();
    let y1 = kernel.filter(&f1, dt)?;
    let y2 = kernel_scaled.filter(&f2, dt)?;
    // Step n ends at time (n + 1) dt, which maps to step S (n + 1) - 1 in domain 2.
    let y2_at: Vec<f64> = (0..n1).map(|n| interp(&y2, s_t * (n as f64 + 1.0) - 1.0)).collect();
    let burn = ((5.0 * kernel.max_mu() / dt).ceil() as usize).min(n1.saturating_sub(1));
    Ok((y1, y2_at, burn))
}

fn interp(series: &[f64], pos: f64) -> f64 {
    let i = pos.floor();
    let f = pos - i;
    let i = i as usize;
    if f == 0.0 || i + 1 >= series.len() {
        series[i.min(series.len() - 1)]
    } else {
        (1.0 - f) * series[i] + f * series[i + 1]
    }
}

/// LIF check: spikes from the unit at `(mu, mu_r)` on `signal` versus the unit
/// at `(S mu, S mu_r)` on the rescaled signal. The error is the largest shift
/// between matched spike times in units of `dt`; the membrane rel-L2 is noted.
pub fn check_temporal_scaling_lif(
    signal: &SineField,
    mu: f64,
    mu_r: f64,
    theta: f64,
    s_t: f64,
    dt: f64,
    duration: f64,
) -> Result<CovarianceReport> {
    let params = LifParams {
        theta,
        mu_r: Some(mu_r),
        ..LifParams::default()
    };
    let scaled = LifParams {
        mu_r: Some(s_t * mu_r),
        ..params
    };
    let n1 = (duration / dt).round() as usize;
    let n2 = (s_t * n1 as f64).ceil() as usize + 2;
    let f1: Vec<f64> = (0..n1).map(|n| signal.eval(0.0, 0.0, (n as f64 + 0.5) * dt)).collect();
    let f2: Vec<f64> = (0..n2).map(|m| signal.eval(0.0, 0.0, (m as f64 + 0.5) * dt / s_t)).collect();
    let (_, spikes1) = run_lif(mu, params, &f1, dt)?;
    let (_, spikes2) = run_lif(s_t * mu, scaled, &f2, dt)?;
    // Spikes within two steps of the end may fall on either side of it.
    let horizon = (n1 as f64 - 2.0) * dt;
    let t1: Vec<f64> = spikes1.crossings.iter().map(|n| n * dt).filter(|t| *t <= horizon).collect();
    let t2: Vec<f64> = spikes2
        .crossings
        .iter()
        .map(|m| m * dt / s_t)
        .filter(|t| *t <= horizon)
        .collect();
    let (a, b, burn) = scaled_traces(
        signal,
        &TemporalKernel::Lif { mu, params },
        &TemporalKernel::Lif { mu: s_t * mu, params: scaled },
        s_t,
        dt,
        duration,
    )?;
    let membrane = crate::engine::rel_l2(&a[burn..], &b[burn..]);
    let shift = if t1.len() != t2.len() {
        f64::INFINITY
    } else {
        t1.iter().zip(&t2).map(|(a, b)| (a - b).abs() / dt).fold(0.0, f64::max)
    };
    let mut report = CovarianceReport::new(format!("lif_scaling S={s_t:.4}"), "spike_shift_dt", shift, 2.0);
    report.dt = dt;
    report.margin_steps = burn;
    report.note = format!("{} vs {} spikes, membrane rel_l2 {membrane:.3e}", t1.len(), t2.len());
    if t1.is_empty() && t2.is_empty() {
        // Without spikes the unit is a leaky integrator: report the membrane error.
        report.inconclusive = true;
        report.metric = "rel_l2".into();
        report.error = membrane;
        report.tolerance = 0.005;
        report.passed = membrane <= report.tolerance;
        report.note = "no spikes elicited".into();
    }
    Ok(report)
}

/// Geometry of the joint check in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointGeometry {
    /// Side of the square domain-1 window.
    pub extent: f64,
    /// Side of the domain-2 window; must cover the mapped domain-1 window.
    pub extent_mapped: f64,
    /// Domain-1 duration, burn-in included.
    pub duration: f64,
}

/// Joint affine + Galilean + temporal-scaling check.
///
/// `spec` is in physical units (covariance in units^2, velocity in units per
/// time unit) and must be zeroth order. Both videos are evaluated directly
/// from the generator, so only the receptive-field pipeline is discretised.
pub fn check_joint(video: &SineField, map: &AffineMap2, spec: &StrfSpec, geometry: &JointGeometry, disc: &Discretization) -> Result<CovarianceReport> {
    map.validate()?;
    spec.spatial.validate()?;
    spec.temporal.validate()?;
    if spec.spatial.order() != 0 {
        return Err(StrfError::domain("joint covariance check is defined for zeroth-order spatial kernels"));
    }
    let Discretization { dt, pitch, supersample } = *disc;
    let s = map.s_t;
    let sigma = spec.spatial.covariance()?;
    let sigma2 = map.covariance(&sigma);
    let v1 = spec.velocity();
    let v2 = map.velocity(v1);
    let to_px = |c: &Covariance2| Covariance2 {
        xx: c.xx / (pitch * pitch),
        xy: c.xy / (pitch * pitch),
        yy: c.yy / (pitch * pitch),
    };
    let make_spec = |cov: &Covariance2, v: [f64; 2], temporal: TemporalKernel| {
        let mut k = gaussian_spec(&to_px(cov));
        k.velocity = [v[0] / pitch, v[1] / pitch];
        let r = kernel_radius(&to_px(cov));
        StrfSpec {
            spatial: k,
            temporal,
            grid: Some((2 * r + 1, 2 * r + 1)),
            supersample,
            padding: Padding::Replicate,
        }
    };
    let spec1 = make_spec(&sigma, v1, spec.temporal.clone());
    let spec2 = make_spec(&sigma2, v2, map.temporal(&spec.temporal));

    let n1 = (geometry.extent / pitch).round() as usize;
    let n2 = (geometry.extent_mapped / pitch).round() as usize;
    let t1 = (geometry.duration / dt).round() as usize;
    let t2 = (s * t1 as f64).ceil() as usize + 1;

    let render = |n: usize, steps: usize, f: &(dyn Fn(f64, f64, f64) -> f64 + Sync)| -> Result<FrameTensor> {
        let c = (n as f64 - 1.0) / 2.0;
        let data: Vec<f64> = (0..steps)
            .into_par_iter()
            .flat_map_iter(|m| {
                let t = (m as f64 + 0.5) * dt;
                (0..n * n).map(move |i| f(((i % n) as f64 - c) * pitch, ((i / n) as f64 - c) * pitch, t))
            })
            .collect();
        let mut ft = FrameTensor::from_vec(data, (steps, 1, n, n), dt)?;
        ft.t0 = 0.5 * dt;
        Ok(ft)
    };
    let frames1 = render(n1, t1, &|x, y, t| video.eval(x, y, t))?;
    let frames2 = render(n2, t2, &|x, y, t| {
        // x' = A x + u t, t' = S t  =>  x = A^{-1}(x' - u t'/S)
        let t = t / s;
        let (px, py) = map.apply_inverse(x - map.u[0] * t, y - map.u[1] * t);
        video.eval(px, py, t)
    })?;
    let m1 = respond(&frames1, &spec1)?;
    let m2 = respond(&frames2, &spec2)?;

    // In co-moving coordinates the velocity terms cancel: M(y, t) = M'(A y, S t).
    let r1 = kernel_radius(&to_px(&sigma)) as f64;
    let r2 = kernel_radius(&to_px(&sigma2)) as f64;
    let drift1 = (v1[0].hypot(v1[1]) * t1 as f64 * dt / pitch).ceil();
    let drift2 = (v2[0].hypot(v2[1]) * t2 as f64 * dt / pitch).ceil();
    let margin1 = r1 + 1.0 + drift1;
    let margin2 = r2 + 2.0 + drift2;
    let burn = ((5.0 * spec.temporal.max_mu() / dt).ceil() as usize).min(t1.saturating_sub(1));
    let (c1, c2) = ((n1 as f64 - 1.0) / 2.0, (n2 as f64 - 1.0) / 2.0);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut count = 0usize;
    for n in burn..t1 {
        let pos = s * (n as f64 + 1.0) - 1.0;
        let (m_lo, frac) = (pos.floor() as usize, pos - pos.floor());
        if m_lo + 1 >= t2 && frac > 0.0 {
            break;
        }
        let f1 = m1.frame(n, 0);
        let a_lo = m2.frame(m_lo, 0);
        let a_hi = m2.frame((m_lo + 1).min(t2 - 1), 0);
        for y in 0..n1 {
            for x in 0..n1 {
                let (xf, yf) = (x as f64, y as f64);
                if xf < margin1 || yf < margin1 || xf > n1 as f64 - 1.0 - margin1 || yf > n1 as f64 - 1.0 - margin1 {
                    continue;
                }
                let (qx, qy) = map.apply(xf - c1, yf - c1);
                let (qx, qy) = (qx + c2, qy + c2);
                if qx < margin2 || qy < margin2 || qx > n2 as f64 - 1.0 - margin2 || qy > n2 as f64 - 1.0 - margin2 {
                    continue;
                }
                let b = (1.0 - frac) * bilinear(a_lo, n2, n2, qx, qy) + frac * bilinear(a_hi, n2, n2, qx, qy);
                let a = f1[y * n1 + x];
                num += (a - b) * (a - b);
                den += b * b;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(StrfError::config("joint check has an empty interior; enlarge the mapped window"));
    }
    let err = (num / den).sqrt();
    let mut report = CovarianceReport::new("joint", "rel_l2", err, 0.04);
    report.dt = dt;
    report.pitch = pitch;
    report.supersample = supersample;
    report.margin_px = margin1 as usize;
    report.margin_steps = burn;
    report.note = format!("{count} samples, domain {n1}px/{n2}px, {t1}/{t2} steps");
    Ok(report)
}

/// Which checks to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Suite {
    Temporal,
    Lif,
    Affine,
    Joint,
    All,
}

impl std::str::FromStr for Suite {
    type Err = StrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal" => Ok(Suite::Temporal),
            "lif" => Ok(Suite::Lif),
            "affine" | "spatial" => Ok(Suite::Affine),
            "joint" => Ok(Suite::Joint),
            "all" => Ok(Suite::All),
            other => Err(StrfError::config(format!("unknown suite '{other}'"))),
        }
    }
}

/// Default temporal protocol: mu = 1, dt = mu / 100, eight sinusoids with
/// periods between 2 and 20 time units, 40 time units of signal.
pub fn temporal_suite(refine: usize) -> Result<Vec<CovarianceReport>> {
    let mu = 1.0;
    let dt = mu / 100.0;
    let duration = 40.0;
    let signal = SineField::signal(7, (2.0, 20.0));
    let mut out = Vec::new();
    for s in [2f64.sqrt(), 2.0] {
        let matched = check_temporal_scaling(&signal, mu, s, dt, duration)?;
        let wrong = check_temporal_kernels(&signal, &TemporalKernel::Li { mu }, &TemporalKernel::Li { mu: s.sqrt() * mu }, s, dt, duration)?;
        out.push(CovarianceReport::control(format!("temporal_control S={s:.4}"), matched.error, wrong.error));
        let ladder: Vec<f64> = (0..refine.max(1))
            .map(|i| check_temporal_scaling(&signal, mu, s, dt / 2f64.powi(i as i32), duration).map(|r| r.error))
            .collect::<Result<_>>()?;
        if ladder.len() > 1 {
            out.push(CovarianceReport::ladder(format!("temporal_ladder S={s:.4}"), &ladder));
        }
        out.push(matched);
    }
    Ok(out)
}

/// Default LIF protocol: mu = 1, mu_r = 1, theta = 1, dt = mu / 200,
/// drive 1.5 plus a band-limited fluctuation of peak 0.6.
pub fn lif_suite() -> Result<Vec<CovarianceReport>> {
    let mu = 1.0;
    let dt = mu / 200.0;
    let signal = SineField::signal(7, (2.0, 20.0)).with_peak(0.6).with_offset(1.5);
    let mut out = Vec::new();
    for s in [2.0, 2f64.sqrt()] {
        out.push(check_temporal_scaling_lif(&signal, mu, mu, 1.0, s, dt, 40.0)?);
    }
    Ok(out)
}

/// Default spatial protocol on a 128 x 128 image with wavelengths 16..48 px.
pub fn affine_suite() -> Result<Vec<CovarianceReport>> {
    let n = 128;
    let image = SineField::image(7, (16.0, 48.0)).sample_image(n, n, 1.0, 0.0);
    let identity = Covariance2::identity();
    let mut out = Vec::new();

    let rot = AffineMap2::rotation(30f64.to_radians());
    let mut r = check_affine(&image, n, n, &rot, &identity, 4)?;
    r.test = "affine rotation 30deg".into();
    out.push(r);

    let stretch = AffineMap2::scaling(2.0, 1.0);
    let mut matched = check_affine(&image, n, n, &stretch, &identity, 4)?;
    matched.test = "affine diag(2,1)".into();
    let unmatched = check_affine_with(&image, n, n, &stretch, &identity, &identity, 4)?;
    out.push(CovarianceReport::control("affine_control diag(2,1)", matched.error, unmatched.error));
    out.push(matched);

    // Anisotropic field under rotation: the covariance must rotate with the image.
    let aniso = crate::spatial::make_covariance(2.0, 1.0, 0.0)?;
    let mut matched = check_affine(&image, n, n, &rot, &aniso, 4)?;
    matched.test = "affine rotation 30deg anisotropic".into();
    let unmatched = check_affine_with(&image, n, n, &rot, &aniso, &aniso, 4)?;
    out.push(CovarianceReport::control("affine_control rotation anisotropic", matched.error, unmatched.error));
    out.push(matched);
    Ok(out)
}

/// Composite map `rot(20deg) diag(1.5, 1)`, `u = (0.5, 0)`, `S = 2`.
pub fn composite_map() -> AffineMap2 {
    let mut m = AffineMap2::rotation(20f64.to_radians()).compose(&AffineMap2::scaling(1.5, 1.0));
    m.u = [0.5, 0.0];
    m.s_t = 2.0;
    m
}

/// Default joint receptive field: Sigma = diag(2.25, 1), mu = 1, v = (0.2, 0.1).
pub fn joint_spec() -> StrfSpec {
    let mut k = KernelSpec::gaussian(1.5, 1.0, 0.0);
    k.velocity = [0.2, 0.1];
    StrfSpec::new(k, TemporalKernel::Li { mu: 1.0 })
}

pub const JOINT_GEOMETRY: JointGeometry = JointGeometry {
    extent: 40.0,
    extent_mapped: 80.0,
    duration: 8.0,
};

pub fn joint_video() -> SineField {
    SineField::video(7, (10.0, 30.0), (4.0, 16.0))
}

/// Pitch and dt shrink together by `1/sqrt(2)` per rung.
pub fn joint_ladder(rungs: usize) -> Vec<Discretization> {
    (0..rungs)
        .map(|i| {
            let f = 2f64.sqrt().powi(-(i as i32));
            Discretization {
                dt: 0.1 * f,
                pitch: f,
                supersample: 1,
            }
        })
        .collect()
}

pub fn joint_suite(refine: usize) -> Result<Vec<CovarianceReport>> {
    let video = joint_video();
    let spec = joint_spec();
    let mut out = Vec::new();
    let mut galilean = AffineMap2::identity();
    galilean.u = [1.0, 0.0];
    let base = joint_ladder(1)[0];
    let mut r = check_joint(&video, &galilean, &spec, &JOINT_GEOMETRY, &base)?;
    r.test = "joint galilean u=(1,0)".into();
    r.tolerance = 0.02;
    r.passed = r.error <= r.tolerance;
    out.push(r);

    let map = composite_map();
    let ladder = joint_ladder(refine.max(1));
    let reports: Vec<CovarianceReport> = ladder
        .iter()
        .map(|d| check_joint(&video, &map, &spec, &JOINT_GEOMETRY, d))
        .collect::<Result<_>>()?;
    if reports.len() > 1 {
        let errors: Vec<f64> = reports.iter().map(|r| r.error).collect();
        out.push(CovarianceReport::ladder("joint_ladder composite", &errors));
    }
    let mut first = reports.into_iter().next().expect("ladder has at least one rung");
    first.test = "joint composite".into();
    out.push(first);
    Ok(out)
}

pub fn run_suite(suite: Suite, refine: usize) -> Result<Vec<CovarianceReport>> {
    let parts: Vec<Suite> = match suite {
        Suite::All => vec![Suite::Temporal, Suite::Lif, Suite::Affine, Suite::Joint],
        s => vec![s],
    };
    let results: Vec<Vec<CovarianceReport>> = parts
        .par_iter()
        .map(|s| match s {
            Suite::Temporal => temporal_suite(refine),
            Suite::Lif => lif_suite(),
            Suite::Affine => affine_suite(),
            Suite::Joint => joint_suite(refine),
            Suite::All => unreachable!(),
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}
