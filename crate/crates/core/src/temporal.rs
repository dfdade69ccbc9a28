//! Time-causal temporal smoothing: truncated exponentials, leaky integrators,
//! leaky integrate-and-fire units and cascades of them.
//!
//! Every public API takes the time constant `mu`; the temporal variance is
//! `tau = mu^2` and is never stored separately.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StrfError};

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(StrfError::domain(format!("time constant must be positive and finite, got {mu}")))
    }
}

/// Truncated exponential kernel `(1/mu) e^{-t/mu}` for `t > 0`, zero otherwise.
pub fn h_exp(t: f64, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(if t > 0.0 { (-t / mu).exp() / mu } else { 0.0 })
}

/// Geometric distribution of temporal variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSchedule {
    pub taus: Vec<f64>,
    pub c: f64,
    pub k: usize,
    pub tau_max: f64,
}

impl TauSchedule {
    pub fn mus(&self) -> Vec<f64> {
        self.taus.iter().map(|t| t.sqrt()).collect()
    }
}

/// `taus[k] = c^{2(k+1-K)} tau_max` for `k = 0..K`.
///
/// `c^2` is snapped to the nearest integer when it lies within a few ulps of
/// one, so `c = sqrt(2)` gives exact powers of two.
pub fn tau_schedule(k: usize, c: f64, tau_max: f64) -> Result<TauSchedule> {
    if k == 0 || !(c > 1.0) || !c.is_finite() || !(tau_max > 0.0) || !tau_max.is_finite() {
        return Err(StrfError::domain(format!(
            "tau schedule needs K >= 1, c > 1, tau_max > 0; got K={k}, c={c}, tau_max={tau_max}"
        )));
    }
    let mut ratio = c * c;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 4.0 * f64::EPSILON * nearest {
        ratio = nearest;
    }
    let taus = (0..k)
        .map(|i| tau_max * ratio.powi(i as i32 + 1 - k as i32))
        .collect();
    Ok(TauSchedule { taus, c, k, tau_max })
}

/// Discretisation of the leaky-integrator ODE `mu du/dt = -u + I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Integrator {
    /// Exact update for input held constant over the step.
    #[default]
    Exact,
    ForwardEuler,
}

impl Integrator {
    /// Weight on the previous state for one step of length `dt`.
    pub fn decay(self, dt: f64, mu: f64) -> f64 {
        match self {
            Integrator::Exact => (-dt / mu).exp(),
            Integrator::ForwardEuler => 1.0 - dt / mu,
        }
    }
}

#[inline]
fn li_update(u: f64, input: f64, decay: f64) -> f64 {
    u * decay + (1.0 - decay) * input
}

/// Leaky integrator with unit DC gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiChannel {
    pub mu: f64,
    pub u: f64,
    #[serde(default)]
    pub integrator: Integrator,
}

impl LiChannel {
    pub fn new(mu: f64) -> Result<Self> {
        check_mu(mu)?;
        Ok(LiChannel {
            mu,
            u: 0.0,
            integrator: Integrator::Exact,
        })
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn reset(&mut self) {
        self.u = 0.0;
    }
}

/// Advance a leaky integrator by one step of piecewise-constant input.
pub fn li_step(channel: &mut LiChannel, input: f64, dt: f64) -> f64 {
    channel.u = li_update(channel.u, input, channel.integrator.decay(dt, channel.mu));
    channel.u
}

/// Post-spike behaviour of a leaky integrate-and-fire unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ResetMode {
    /// Superpose a reset trace `-theta e^{-(t - t_f)/mu_r}` on the membrane.
    Soft,
    /// Set the membrane to a fixed value.
    Hard { theta_reset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub theta: f64,
    /// Reset time constant; `None` uses the membrane `mu`.
    pub mu_r: Option<f64>,
    pub reset: ResetMode,
    /// Anchor the soft-reset kernel at the crossing time interpolated within
    /// the step instead of at the end of the step.
    #[serde(default = "default_true")]
    pub interpolate: bool,
}

fn default_true() -> bool {
    true
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            theta: 1.0,
            mu_r: None,
            reset: ResetMode::Soft,
            interpolate: true,
        }
    }
}

/// Leaky integrate-and-fire unit written as a spike response model: the
/// membrane is the leaky-integrated input plus a decaying reset trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifChannel {
    pub mu: f64,
    pub params: LifParams,
    /// Integrated input.
    pub v: f64,
    /// Accumulated reset kernels.
    pub r: f64,
    pub last_spike: Option<usize>,
    /// Crossing time of the last spike in steps (`t + fraction`).
    pub last_crossing: Option<f64>,
    #[serde(default)]
    pub integrator: Integrator,
}

impl LifChannel {
    pub fn new(mu: f64, params: LifParams) -> Result<Self> {
        check_mu(mu)?;
        if !(params.theta > 0.0) {
            return Err(StrfError::domain(format!("threshold must be positive, got {}", params.theta)));
        }
        if let Some(mu_r) = params.mu_r {
            if !(mu_r >= 0.0) {
                return Err(StrfError::domain(format!("reset time constant must be >= 0, got {mu_r}")));
            }
        }
        Ok(LifChannel {
            mu,
            params,
            v: 0.0,
            r: 0.0,
            last_spike: None,
            last_crossing: None,
            integrator: Integrator::Exact,
        })
    }

    pub fn mu_r(&self) -> f64 {
        self.params.mu_r.unwrap_or(self.mu)
    }

    /// Membrane potential.
    pub fn membrane(&self) -> f64 {
        self.v + self.r
    }

    pub fn reset(&mut self) {
        self.v = 0.0;
        self.r = 0.0;
        self.last_spike = None;
        self.last_crossing = None;
    }
}

/// Advance a LIF unit by one step; returns the post-reset membrane and whether it spiked.
pub fn lif_step(channel: &mut LifChannel, input: f64, t: usize, dt: f64) -> (f64, bool) {
    let before = channel.v + channel.r;
    channel.v = li_update(channel.v, input, channel.integrator.decay(dt, channel.mu));
    let mu_r = channel.mu_r();
    channel.r = if channel.r == 0.0 {
        0.0
    } else if mu_r > 0.0 {
        channel.r * (-dt / mu_r).exp()
    } else {
        0.0
    };
    let z = channel.v + channel.r;
    let theta = channel.params.theta;
    if z >= theta {
        let fraction = if before < theta && z > before {
            (theta - before) / (z - before)
        } else {
            0.0
        };
        channel.last_spike = Some(t);
        channel.last_crossing = Some(t as f64 + fraction);
        match channel.params.reset {
            ResetMode::Soft if channel.params.interpolate && mu_r > 0.0 => {
                channel.r -= theta * (-(1.0 - fraction) * dt / mu_r).exp();
            }
            ResetMode::Soft => channel.r -= theta,
            ResetMode::Hard { theta_reset } => {
                channel.v = theta_reset;
                channel.r = 0.0;
            }
        }
        (channel.v + channel.r, true)
    } else {
        (z, false)
    }
}

/// Feed `signal` through leaky integrators with time constants `mus` in series.
pub fn cascade_response(mus: &[f64], signal: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(StrfError::domain(format!("dt must be positive, got {dt}")));
    }
    let mut out = signal.to_vec();
    for &mu in mus {
        let mut ch = LiChannel::new(mu)?;
        for v in &mut out {
            *v = li_step(&mut ch, *v, dt);
        }
    }
    Ok(out)
}

/// Time constants of a `k`-stage cascade approximating the scale-covariant
/// limit kernel at variance `tau` with distribution parameter `c`:
/// `mu_i = c^{-i} sqrt(c^2 - 1) sqrt(tau)` for `i = 1..=k`.
pub fn limit_kernel_mus(tau: f64, c: f64, k: usize) -> Result<Vec<f64>> {
    if !(tau > 0.0 && c > 1.0) {
        return Err(StrfError::domain(format!("need tau > 0 and c > 1, got tau={tau}, c={c}")));
    }
    let base = (c * c - 1.0).sqrt() * tau.sqrt();
    Ok((1..=k).map(|i| base * c.powi(-(i as i32))).collect())
}

/// Descriptor of one temporal channel used by the joint engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TemporalKernel {
    /// Truncated exponential, realised as a leaky integrator.
    Li { mu: f64 },
    Lif { mu: f64, params: LifParams },
    Cascade { mus: Vec<f64> },
}

impl TemporalKernel {
    pub fn validate(&self) -> Result<()> {
        match self {
            TemporalKernel::Li { mu } => check_mu(*mu),
            TemporalKernel::Lif { mu, params } => LifChannel::new(*mu, *params).map(|_| ()),
            TemporalKernel::Cascade { mus } => mus.iter().try_for_each(|m| check_mu(*m)),
        }
    }

    /// Longest time constant, used to size burn-in margins.
    pub fn max_mu(&self) -> f64 {
        match self {
            TemporalKernel::Li { mu } | TemporalKernel::Lif { mu, .. } => *mu,
            TemporalKernel::Cascade { mus } => mus.iter().sum(),
        }
    }

    /// Filter a whole series from zero state; LIF returns its membrane trace.
    pub fn filter(&self, signal: &[f64], dt: f64) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            TemporalKernel::Li { mu } => cascade_response(&[*mu], signal, dt),
            TemporalKernel::Cascade { mus } => cascade_response(mus, signal, dt),
            TemporalKernel::Lif { mu, params } => {
                let mut ch = LifChannel::new(*mu, *params)?;
                Ok(signal.iter().enumerate().map(|(t, x)| lif_step(&mut ch, *x, t, dt).0).collect())
            }
        }
    }
}

/// Strictly increasing step indices at which a unit fired.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub unit: usize,
    pub times: Vec<usize>,
    /// Interpolated crossing times in steps, one per entry of `times`.
    pub crossings: Vec<f64>,
}

/// Drive a LIF unit with `signal` and collect its membrane trace and spikes.
pub fn run_lif(mu: f64, params: LifParams, signal: &[f64], dt: f64) -> Result<(Vec<f64>, SpikeTrain)> {
    let mut ch = LifChannel::new(mu, params)?;
    let mut train = SpikeTrain::default();
    let trace = signal
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let (u, s) = lif_step(&mut ch, *x, t, dt);
            if s {
                train.times.push(t);
                train.crossings.push(ch.last_crossing.unwrap_or(t as f64 + 1.0));
            }
            u
        })
        .collect();
    Ok((trace, train))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn h_exp_examples() {
        assert_eq!(h_exp(-1.0, 3.0).unwrap(), 0.0);
        assert_eq!(h_exp(0.0, 3.0).unwrap(), 0.0);
        assert_abs_diff_eq!(h_exp(1e-12, 2.0).unwrap(), 0.5, epsilon = 1e-9);
        assert!(h_exp(1.0, 0.0).is_err());
        assert!(h_exp(1.0, -2.0).is_err());
    }

    /// Adaptive Simpson quadrature, independent of the closed form integral.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, eps: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let left = (m - a) / 6.0 * (f(a) + 4.0 * f(lm) + f(m));
            let right = (b - m) / 6.0 * (f(m) + 4.0 * f(rm) + f(b));
            if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, left, eps / 2.0, depth - 1) + rec(f, m, b, right, eps / 2.0, depth - 1)
            }
        }
        rec(f, a, b, whole, eps, depth)
    }

    #[test]
    fn h_exp_integrates_to_one() {
        for &mu in &[0.1, 1.0, 3.7] {
            let f = |t: f64| h_exp(t, mu).unwrap();
            let area = adaptive_simpson(&f, 1e-15, 50.0 * mu, 1e-10, 40);
            assert_abs_diff_eq!(area, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn tau_schedule_examples() {
        let s = tau_schedule(4, 2f64.sqrt(), 4.0).unwrap();
        assert_eq!(s.taus, vec![0.5, 1.0, 2.0, 4.0]);
        assert_eq!(tau_schedule(1, 2f64.sqrt(), 7.0).unwrap().taus, vec![7.0]);
        assert_eq!(tau_schedule(3, 2.0, 16.0).unwrap().taus, vec![1.0, 4.0, 16.0]);
        assert!(tau_schedule(0, 2.0, 1.0).is_err());
        assert!(tau_schedule(2, 1.0, 1.0).is_err());
        assert!(tau_schedule(2, 2.0, 0.0).is_err());
        let mus = s.mus();
        assert_abs_diff_eq!(mus[3], 2.0);
    }

    #[test]
    fn li_decay_and_fixed_point() {
        let mut ch = LiChannel::new(2.0).unwrap();
        ch.u = 1.0;
        assert_abs_diff_eq!(li_step(&mut ch, 0.0, 2.0), (-1.0f64).exp(), epsilon = 1e-15);
        let mut ch = LiChannel::new(1.5).unwrap();
        for _ in 0..10_000 {
            li_step(&mut ch, 3.25, 0.01);
        }
        assert_abs_diff_eq!(ch.u, 3.25, epsilon = 1e-9);
    }

    /// The exact integrator reproduces the continuous convolution of the
    /// piecewise-constant input with the sampled kernel.
    #[test]
    fn impulse_response_matches_dense_convolution() {
        let mu = 1.3;
        let dt = mu / 100.0;
        let n = 1000;
        let mut input = vec![0.0; n];
        input[0] = 1.0;
        let mut ch = LiChannel::new(mu).unwrap();
        let got: Vec<f64> = input.iter().map(|x| li_step(&mut ch, *x, dt)).collect();
        // Oracle: y((k+1) dt) = sum_j x_j * integral_{j dt}^{(j+1) dt} h((k+1) dt - s) ds,
        // integral by a 200-point midpoint rule.
        let sub = 200;
        let oracle: Vec<f64> = (0..n)
            .map(|k| {
                let t_out = (k + 1) as f64 * dt;
                (0..=k)
                    .filter(|j| input[*j] != 0.0)
                    .map(|j| {
                        let h = dt / sub as f64;
                        let area: f64 = (0..sub)
                            .map(|i| h_exp(t_out - (j as f64 * dt + (i as f64 + 0.5) * h), mu).unwrap() * h)
                            .sum();
                        input[j] * area
                    })
                    .sum()
            })
            .collect();
        assert!(rel_l2(&got, &oracle) < 1e-3, "{}", rel_l2(&got, &oracle));
        // Sampled kernel scaled by dt at the step midpoints.
        let sampled: Vec<f64> = (0..n).map(|k| h_exp((k as f64 + 0.5) * dt, mu).unwrap() * dt).collect();
        assert!(rel_l2(&got, &sampled) < 1e-3);
    }

    #[test]
    fn forward_euler_is_available_and_less_accurate() {
        let mu = 1.0;
        let dt = 0.1;
        let mut exact = LiChannel::new(mu).unwrap();
        let mut euler = LiChannel::new(mu).unwrap().with_integrator(Integrator::ForwardEuler);
        exact.u = 1.0;
        euler.u = 1.0;
        for _ in 0..10 {
            li_step(&mut exact, 0.0, dt);
            li_step(&mut euler, 0.0, dt);
        }
        assert_abs_diff_eq!(exact.u, (-1.0f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(euler.u, 0.9f64.powi(10), epsilon = 1e-14);
    }

    #[test]
    fn subthreshold_lif_matches_li() {
        let mut li = LiChannel::new(2.0).unwrap();
        let mut lif = LifChannel::new(2.0, LifParams::default()).unwrap();
        for t in 0..500 {
            let x = 0.9 * (t as f64 * 0.05).sin().abs();
            let a = li_step(&mut li, x, 0.1);
            let (b, s) = lif_step(&mut lif, x, t, 0.1);
            assert!(!s);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn instantaneous_soft_reset_subtracts_threshold() {
        let params = LifParams {
            mu_r: Some(0.0),
            ..LifParams::default()
        };
        let mut lif = LifChannel::new(1.0, params).unwrap();
        lif.v = 0.99;
        let (u, s) = lif_step(&mut lif, 2.0, 0, 0.01);
        let expected_pre = li_update(0.99, 2.0, (-0.01f64).exp());
        assert!(s);
        assert_abs_diff_eq!(u, expected_pre - 1.0, epsilon = 1e-15);
        assert_eq!(lif.last_spike, Some(0));
    }

    #[test]
    fn hard_reset_sets_membrane() {
        let params = LifParams {
            reset: ResetMode::Hard { theta_reset: 0.0 },
            ..LifParams::default()
        };
        let mut lif = LifChannel::new(1.0, params).unwrap();
        lif.v = 0.999;
        let (u, s) = lif_step(&mut lif, 5.0, 3, 0.01);
        assert!(s);
        assert_eq!(u, 0.0);
    }

    /// With constant suprathreshold drive and a reset that decays like the
    /// membrane, the interval between spikes is `mu ln(I / (I - theta))`.
    #[test]
    fn lif_period_matches_closed_form() {
        let (mu, theta, drive): (f64, f64, f64) = (2.0, 1.0, 1.8);
        let dt = mu / 200.0;
        let period = mu * (drive / (drive - theta)).ln();
        let (_, train) = run_lif(mu, LifParams { theta, ..LifParams::default() }, &vec![drive; 20_000], dt).unwrap();
        assert!(train.times.len() > 10);
        let first = (train.times[0] + 1) as f64 * dt;
        assert!((first - period).abs() <= dt, "first spike {first} vs {period}");
        for w in train.times.windows(2) {
            let isi = (w[1] - w[0]) as f64 * dt;
            assert!((isi - period).abs() <= dt, "isi {isi} vs {period}");
        }
    }

    #[test]
    fn cascade_of_one_is_li() {
        let signal: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).cos()).collect();
        let a = cascade_response(&[1.7], &signal, 0.05).unwrap();
        let mut ch = LiChannel::new(1.7).unwrap();
        let b: Vec<f64> = signal.iter().map(|x| li_step(&mut ch, *x, 0.05)).collect();
        assert_eq!(a, b);
        assert!(cascade_response(&[1.0, -1.0], &signal, 0.05).is_err());
    }

    #[test]
    fn two_stage_cascade_peaks_at_mu() {
        let mu = 1.0;
        let dt = mu / 100.0;
        let mut signal = vec![0.0; 2000];
        signal[0] = 1.0;
        let out = cascade_response(&[mu, mu], &signal, dt).unwrap();
        let (argmax, _) = out.iter().enumerate().fold((0, f64::MIN), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
        let t_peak = (argmax as f64 + 1.0) * dt;
        assert!((t_peak - mu).abs() <= 2.0 * dt, "peak at {t_peak}");
    }

    /// Smoothing the response at `tau / c^2` with one extra exponential of
    /// time constant `sqrt(c^2 - 1) sqrt(tau) / c` yields the response at `tau`.
    #[test]
    fn neighbouring_scale_recurrence() {
        let c = 2f64.sqrt();
        let tau: f64 = 16.0;
        let dt = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Periods between 10 and 40 sqrt(tau).
        let comps: Vec<(f64, f64, f64)> = (0..8)
            .map(|_| (rng.gen_range(0.3..1.0), rng.gen_range(10.0..40.0) * tau.sqrt(), rng.gen_range(0.0..6.28)))
            .collect();
        let signal: Vec<f64> = (0..40_000)
            .map(|i| {
                let t = i as f64 * dt;
                comps.iter().map(|(a, p, ph)| a * (2.0 * std::f64::consts::PI * t / p + ph).sin()).sum()
            })
            .collect();
        let error_at = |k: usize| {
            let coarse = cascade_response(&limit_kernel_mus(tau, c, k).unwrap(), &signal, dt).unwrap();
            let fine = cascade_response(&limit_kernel_mus(tau / (c * c), c, k).unwrap(), &signal, dt).unwrap();
            let extra = (c * c - 1.0).sqrt() / c * tau.sqrt();
            let composed = cascade_response(&[extra], &fine, dt).unwrap();
            let burn = 10_000;
            rel_l2(&composed[burn..], &coarse[burn..])
        };
        let e8 = error_at(8);
        let e12 = error_at(12);
        assert!(e8 < 0.02, "recurrence error {e8}");
        assert!(e12 < e8);
    }

    fn sign_changes(x: &[f64]) -> usize {
        let signs: Vec<bool> = x.iter().filter(|v| **v != 0.0).map(|v| *v > 0.0).collect();
        signs.windows(2).filter(|w| w[0] != w[1]).count()
    }

    #[test]
    fn li_is_variation_diminishing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..150 {
            let comps: Vec<(f64, f64, f64)> =
                (0..6).map(|_| (rng.gen_range(0.1..1.0), rng.gen_range(5.0..60.0), rng.gen_range(0.0..6.28))).collect();
            let raw: Vec<f64> = (0..600)
                .map(|i| comps.iter().map(|(a, p, ph)| a * (2.0 * std::f64::consts::PI * i as f64 / p + ph).sin()).sum())
                .collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let centred: Vec<f64> = raw.iter().map(|v| v - mean).collect();
            let mu = rng.gen_range(0.5..8.0);
            let out = cascade_response(&[mu], &centred, 1.0).unwrap();
            assert!(sign_changes(&out) <= sign_changes(&centred));
        }
    }

    #[test]
    fn li_is_causal() {
        let signal: Vec<f64> = (0..300).map(|i| (i as f64 * 0.07).sin()).collect();
        let mut perturbed = signal.clone();
        for v in &mut perturbed[150..] {
            *v += 10.0;
        }
        let a = TemporalKernel::Cascade { mus: vec![1.0, 2.0] }.filter(&signal, 0.1).unwrap();
        let b = TemporalKernel::Cascade { mus: vec![1.0, 2.0] }.filter(&perturbed, 0.1).unwrap();
        assert_eq!(a[..150], b[..150]);
        assert_ne!(a[150], b[150]);
    }

    #[test]
    fn dc_gain_is_one() {
        let mu = 2.5;
        let dt = 0.05;
        let steps = (50.0 * mu / dt) as usize;
        let out = cascade_response(&[mu], &vec![0.7; steps], dt).unwrap();
        assert_abs_diff_eq!(*out.last().unwrap(), 0.7, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn infinite_threshold_lif_is_li(mu in 0.1f64..10.0, dt in 0.001f64..1.0, xs in prop::collection::vec(-5.0f64..5.0, 1..200)) {
            let mut li = LiChannel::new(mu).unwrap();
            let mut lif = LifChannel::new(mu, LifParams { theta: f64::INFINITY, ..LifParams::default() }).unwrap();
            for (t, x) in xs.iter().enumerate() {
                let a = li_step(&mut li, *x, dt);
                let (b, s) = lif_step(&mut lif, *x, t, dt);
                prop_assert!(!s);
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        /// Soft reset leaves the membrane at or below threshold whenever one
        /// step cannot add more than a threshold's worth of drive.
        #[test]
        fn soft_reset_lands_below_threshold(mu in 0.5f64..5.0, xs in prop::collection::vec(0.0f64..20.0, 1..300)) {
            let dt = 0.02;
            let theta = 1.0;
            let mut lif = LifChannel::new(mu, LifParams { theta, ..LifParams::default() }).unwrap();
            let gain = 1.0 - (-dt / mu).exp();
            for (t, x) in xs.iter().enumerate() {
                let (u, s) = lif_step(&mut lif, *x, t, dt);
                prop_assert!(u.is_finite());
                if s && x * gain < theta {
                    prop_assert!(u <= theta);
                }
            }
        }

        #[test]
        fn li_is_deterministic(mu in 0.1f64..10.0, xs in prop::collection::vec(-5.0f64..5.0, 1..100)) {
            let a = cascade_response(&[mu, mu * 2.0], &xs, 0.1).unwrap();
            let b = cascade_response(&[mu, mu * 2.0], &xs, 0.1).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
