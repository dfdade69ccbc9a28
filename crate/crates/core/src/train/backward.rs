//! Reverse-mode gradients through time for the scale-channel network.

use serde::{Deserialize, Serialize};

use crate::net::forward::{Coords, Trace};
use crate::net::{Activation, NetworkConfig, Parameters};
use crate::{Result, StrfError};

/// Stand-in derivative of the spike nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Surrogate {
    /// `1 / (slope * |u - theta| + 1)^2`.
    FastSigmoid { slope: f64 },
    /// The true derivative of a step: zero away from the threshold.
    Exact,
}

impl Surrogate {
    pub fn derivative(self, distance: f64) -> f64 {
        match self {
            Surrogate::FastSigmoid { slope } => 1.0 / (slope * distance.abs() + 1.0).powi(2),
            Surrogate::Exact => 0.0,
        }
    }
}

/// Mean Euclidean distance over steps from `burn_in` on and over the three classes.
pub fn loss(pred: &[Coords], label: &[Coords], burn_in: usize) -> Result<f64> {
    let (sum, count, _) = loss_terms(pred, label, burn_in)?;
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Summed distance, number of terms and the gradient of the sum per step.
pub fn loss_terms(pred: &[Coords], label: &[Coords], burn_in: usize) -> Result<(f64, usize, Vec<Coords>)> {
    if pred.len() != label.len() {
        return Err(StrfError::config(format!("{} predictions for {} labels", pred.len(), label.len())));
    }
    let mut grad = vec![[[0.0; 2]; 3]; pred.len()];
    let mut sum = 0.0;
    let mut count = 0;
    for t in burn_in.min(pred.len())..pred.len() {
        for k in 0..3 {
            let dx = pred[t][k][0] - label[t][k][0];
            let dy = pred[t][k][1] - label[t][k][1];
            let d = dx.hypot(dy);
            sum += d;
            count += 1;
            if d > 0.0 {
                grad[t][k] = [dx / d, dy / d];
            }
        }
    }
    Ok((sum, count, grad))
}

/// Add the gradient of `sum_t <grad_coords[t], coords[t]>` with respect to
/// the parameters into `grads`.
pub fn backward(
    params: &Parameters,
    config: &NetworkConfig,
    trace: &Trace,
    grad_coords: &[Coords],
    surrogate: Surrogate,
    grads: &mut [f64],
) -> Result<()> {
    let shapes = config.conv_shapes()?;
    let temporal = config.activation.is_temporal();
    let lif = config.activation == Activation::Lif;
    let theta = config.lif_theta;
    let head_decay = config.head_mu.filter(|_| temporal).map(|m| (-1.0 / m).exp());
    let stride = config.total_stride() as f64;
    let s4 = &shapes[3];
    let n4 = s4.out_h * s4.out_w;

    let mut gw: Vec<Vec<f64>> = shapes.iter().map(|s| vec![0.0; s.weight_len()]).collect();
    let mut gb: Vec<Vec<f64>> = shapes.iter().map(|s| vec![0.0; s.out_c]).collect();
    let mut carry: Vec<Vec<f64>> = shapes[..3].iter().map(|s| vec![0.0; s.output_len()]).collect();
    let mut g_decay: Vec<Vec<f64>> = shapes[..2].iter().map(|s| vec![0.0; s.out_c]).collect();
    let mut carry_head = [[0.0; 2]; 3];
    let mut scratch = Vec::new();

    for t in (0..trace.steps).rev() {
        let mut g = grad_coords[t];
        for k in 0..3 {
            for d in 0..2 {
                g[k][d] += carry_head[k][d];
            }
        }
        let g_raw = match head_decay {
            Some(a) if t > 0 => {
                carry_head = g.map(|c| c.map(|v| a * v));
                g.map(|c| c.map(|v| (1.0 - a) * v))
            }
            _ => {
                carry_head = [[0.0; 2]; 3];
                g
            }
        };
        let mut gmaps = vec![0.0; s4.output_len()];
        for k in 0..3 {
            let [xm, ym] = trace.map_coords[t][k];
            let (gx, gy) = (stride * g_raw[k][0], stride * g_raw[k][1]);
            let p = &trace.probs[t][k * n4..(k + 1) * n4];
            for (i, pi) in p.iter().enumerate() {
                let (col, row) = ((i % s4.out_w) as f64, (i / s4.out_w) as f64);
                gmaps[k * n4 + i] = config.head_beta * pi * ((col - xm) * gx + (row - ym) * gy);
            }
        }
        let mut gy = vec![0.0; shapes[2].output_len()];
        s4.backward(&trace.out[2][t], params.weight(3), &gmaps, &mut gw[3], &mut gb[3], Some(&mut gy), &mut scratch);

        for b in (0..3).rev() {
            let s = &shapes[b];
            let plane = s.out_h * s.out_w;
            let x = &trace.pre[b][t];
            let mut gx = vec![0.0; x.len()];
            if temporal {
                let m = &trace.membrane[b][t];
                let prev = if t > 0 { Some((&trace.membrane[b][t - 1], &trace.out[b][t - 1])) } else { None };
                for i in 0..x.len() {
                    let f = i / plane;
                    let a = trace.decay[b][f];
                    let c = &mut carry[b][i];
                    let v_prev = prev.map_or(0.0, |(pm, po)| if lif && po[i] != 0.0 { pm[i] - theta } else { pm[i] });
                    let g_state = if lif {
                        let sg = surrogate.derivative(m[i] - theta);
                        if sg == 0.0 {
                            *c
                        } else {
                            *c * (1.0 - theta * sg) + gy[i] * sg
                        }
                    } else {
                        let pass = if m[i] > 0.0 { gy[i] } else { 0.0 };
                        pass + *c
                    };
                    gx[i] = (1.0 - a) * g_state;
                    if b < 2 {
                        g_decay[b][f] += g_state * (v_prev - x[i]);
                    }
                    *c = a * g_state;
                }
            } else {
                for i in 0..x.len() {
                    if x[i] > 0.0 {
                        gx[i] = gy[i];
                    }
                }
            }
            let input = if b == 0 { &trace.inputs[t] } else { &trace.out[b - 1][t] };
            if b == 0 {
                s.backward(input, params.weight(0), &gx, &mut gw[0], &mut gb[0], None, &mut scratch);
            } else {
                let mut gin = vec![0.0; s.input_len()];
                s.backward(input, params.weight(b), &gx, &mut gw[b], &mut gb[b], Some(&mut gin), &mut scratch);
                gy = gin;
            }
        }
    }

    let idx = &params.index;
    for b in 0..4 {
        for (g, v) in grads[idx.weight[b].clone()].iter_mut().zip(&gw[b]) {
            *g += v;
        }
        for (g, v) in grads[idx.bias[b].clone()].iter_mut().zip(&gb[b]) {
            *g += v;
        }
    }
    if let Some(ranges) = &idx.log_mu {
        for b in 0..2 {
            let r = ranges[b].clone();
            for (f, i) in r.enumerate() {
                // a = exp(-1/mu) and mu = exp(l), so da/dl = a / mu.
                let a = trace.decay[b][f];
                grads[i] += g_decay[b][f] * a * (-params.values[i]).exp();
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::FrameTensor;
    use crate::net::{forward, forward_trace, init_parameters, InitScheme};
    use crate::rng::{stream, StreamRole};
    use rand::Rng;

    fn toy_config(activation: Activation) -> NetworkConfig {
        NetworkConfig {
            activation,
            init: InitScheme::Uniform,
            n_channels: 2,
            mf_frames: 3,
            height: 8,
            width: 8,
            widths: [2, 2, 2],
            kernels: [3, 3, 3, 3],
            strides: [2, 1, 1, 1],
            head_mu: Some(1.5),
            lif_theta: 0.3,
            seed: 9,
            ..NetworkConfig::default()
        }
    }

    fn toy_data(steps: usize, gain: f64) -> (FrameTensor, Vec<Coords>) {
        let mut r = stream(5, 0, StreamRole::Signal);
        let mut x = FrameTensor::zeros(steps, 2, 8, 8, 1.0);
        for v in x.data.iter_mut() {
            if r.gen::<f64>() < 0.3 {
                *v = gain * r.gen::<f64>();
            }
        }
        let labels = (0..steps).map(|_| [[r.gen_range(0.0..7.0), r.gen_range(0.0..7.0)]; 3]).collect();
        (x, labels)
    }

    fn total_loss(p: &Parameters, cfg: &NetworkConfig, x: &FrameTensor, labels: &[Coords]) -> f64 {
        loss(&forward(p, cfg, x).unwrap(), labels, 2).unwrap()
    }

    fn analytic(p: &Parameters, cfg: &NetworkConfig, x: &FrameTensor, labels: &[Coords], sg: Surrogate) -> Vec<f64> {
        let tr = forward_trace(p, cfg, x).unwrap();
        let (_, count, mut g) = loss_terms(&tr.coords, labels, 2).unwrap();
        for gt in g.iter_mut() {
            *gt = gt.map(|c| c.map(|v| v / count as f64));
        }
        let mut grads = vec![0.0; p.len()];
        backward(p, cfg, &tr, &g, sg, &mut grads).unwrap();
        grads
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
    }

    fn spikes(p: &Parameters, cfg: &NetworkConfig, x: &FrameTensor) -> Vec<f64> {
        let tr = forward_trace(p, cfg, x).unwrap();
        tr.out.iter().flatten().flatten().cloned().collect()
    }

    #[test]
    fn loss_examples() {
        let a = vec![[[0.0, 0.0]; 3]];
        let b = vec![[[3.0, 4.0]; 3]];
        assert_eq!(loss(&a, &b, 0).unwrap(), 5.0);
        assert_eq!(loss(&b, &b, 0).unwrap(), 0.0);
        assert!(loss(&a, &[], 0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for activation in [Activation::Li, Activation::ReluSf, Activation::ReluMf] {
            let cfg = toy_config(activation);
            let p = init_parameters(&cfg).unwrap();
            let (x, labels) = toy_data(6, 1.0);
            let g = analytic(&p, &cfg, &x, &labels, Surrogate::FastSigmoid { slope: 10.0 });
            let eps = 1e-4;
            let mut worst: f64 = 0.0;
            for i in 0..p.len() {
                let mut q = p.clone();
                q.values[i] += eps;
                let up = total_loss(&q, &cfg, &x, &labels);
                q.values[i] -= 2.0 * eps;
                let down = total_loss(&q, &cfg, &x, &labels);
                let fd = (up - down) / (2.0 * eps);
                worst = worst.max(rel_err(g[i], fd));
            }
            assert!(worst < 1e-3, "{activation:?}: worst relative error {worst}");
        }
    }

    #[test]
    fn lif_gradients_match_on_spike_stable_parameters() {
        let cfg = toy_config(Activation::Lif);
        let p = init_parameters(&cfg).unwrap();
        let (x, labels) = toy_data(6, 4.0);
        let base = spikes(&p, &cfg, &x);
        assert!(base.iter().filter(|s| **s > 0.0).count() > 5, "toy instance must spike");
        let g = analytic(&p, &cfg, &x, &labels, Surrogate::Exact);
        let eps = 1e-4;
        let (mut worst, mut checked): (f64, usize) = (0.0, 0);
        for i in 0..p.len() {
            let mut up = p.clone();
            up.values[i] += eps;
            let mut down = p.clone();
            down.values[i] -= eps;
            if spikes(&up, &cfg, &x) != base || spikes(&down, &cfg, &x) != base {
                continue;
            }
            let fd = (total_loss(&up, &cfg, &x, &labels) - total_loss(&down, &cfg, &x, &labels)) / (2.0 * eps);
            worst = worst.max(rel_err(g[i], fd));
            checked += 1;
        }
        assert!(checked > p.len() / 2, "only {checked} of {} parameters spike-stable", p.len());
        assert!(worst < 1e-2, "worst relative error {worst}");
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        for activation in Activation::ALL {
            let cfg = toy_config(activation);
            let p = init_parameters(&cfg).unwrap();
            let (x, _) = toy_data(6, 2.0);
            let labels = forward(&p, &cfg, &x).unwrap();
            let g = analytic(&p, &cfg, &x, &labels, Surrogate::FastSigmoid { slope: 10.0 });
            assert!(g.iter().all(|v| *v == 0.0), "{activation:?}");
        }
    }

    #[test]
    fn surrogate_shape() {
        let s = Surrogate::FastSigmoid { slope: 10.0 };
        assert_eq!(s.derivative(0.0), 1.0);
        assert!((s.derivative(0.1) - 0.25).abs() < 1e-12);
        assert_eq!(s.derivative(-0.1), s.derivative(0.1));
        assert_eq!(Surrogate::Exact.derivative(0.0), 0.0);
    }
}
