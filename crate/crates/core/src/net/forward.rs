//! Forward pass over a whole sequence, recording what backpropagation needs.

use super::conv::ConvShape;
use super::{Activation, NetworkConfig, Parameters};
use crate::engine::FrameTensor;
use crate::{Result, StrfError};

/// Per-step coordinates of the three classes, `[x, y]` in input pixels.
pub type Coords = [[f64; 2]; 3];

/// Everything recorded during one forward pass; indices are `[block][step]`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub steps: usize,
    /// Block-1 input per step (stacked frames for the multi-frame variant).
    pub inputs: Vec<Vec<f64>>,
    /// Convolution output of blocks 1-3.
    pub pre: [Vec<Vec<f64>>; 3],
    /// Integrator state (LI) or pre-reset membrane (LIF); empty when stateless.
    pub membrane: [Vec<Vec<f64>>; 3],
    /// Activation output of blocks 1-3.
    pub out: [Vec<Vec<f64>>; 3],
    /// Block-4 class maps.
    pub maps: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    /// Soft-argmax coordinates in map cells.
    pub map_coords: Vec<Coords>,
    /// Head coordinates before temporal smoothing, input pixels.
    pub raw: Vec<Coords>,
    pub coords: Vec<Coords>,
    /// Per-feature decay `exp(-1 / mu)` of blocks 1-3 (temporal variants).
    pub decay: [Vec<f64>; 3],
}

/// Soft-argmax of each of the three `h x w` maps in `maps`; returns the
/// `(x, y)` expectations in map cells and the softmax weights.
pub fn coordinate_transform(maps: &[f64], h: usize, w: usize, beta: f64) -> Result<(Coords, Vec<f64>)> {
    if !(beta > 0.0) || maps.len() != 3 * h * w {
        return Err(StrfError::domain(format!("soft-argmax needs beta > 0 and 3 maps of {h}x{w}")));
    }
    let n = h * w;
    let mut probs = vec![0.0; 3 * n];
    let mut coords = [[0.0; 2]; 3];
    for k in 0..3 {
        let m = &maps[k * n..(k + 1) * n];
        let p = &mut probs[k * n..(k + 1) * n];
        let peak = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (pi, mi) in p.iter_mut().zip(m) {
            *pi = (beta * (mi - peak)).exp();
            z += *pi;
        }
        let (mut x, mut y) = (0.0, 0.0);
        for (i, pi) in p.iter_mut().enumerate() {
            *pi /= z;
            x += *pi * (i % w) as f64;
            y += *pi * (i / w) as f64;
        }
        coords[k] = [x, y];
    }
    Ok((coords, probs))
}

/// Block-1 input at step `t`: the current frame, or the last `mf_frames`
/// frames newest first (zeros before the start).
fn block_input(config: &NetworkConfig, frames: &FrameTensor, t: usize) -> Vec<f64> {
    let plane = frames.frame_len();
    match config.activation {
        Activation::ReluMf => {
            let mut x = vec![0.0; 2 * config.mf_frames * plane];
            for lag in 0..config.mf_frames.min(t + 1) {
                for c in 0..2 {
                    x[(2 * lag + c) * plane..][..plane].copy_from_slice(frames.frame(t - lag, c));
                }
            }
            x
        }
        _ => {
            let mut x = Vec::with_capacity(2 * plane);
            x.extend_from_slice(frames.frame(t, 0));
            x.extend_from_slice(frames.frame(t, 1));
            x
        }
    }
}

pub(crate) fn decays(config: &NetworkConfig, params: &Parameters) -> [Vec<f64>; 3] {
    if !config.activation.is_temporal() {
        return [Vec::new(), Vec::new(), Vec::new()];
    }
    let to_decay = |mus: Vec<f64>| mus.iter().map(|m| (-1.0 / m).exp()).collect::<Vec<f64>>();
    let n3 = config.n_channels * config.widths[2];
    [
        to_decay(params.mus(0).unwrap()),
        to_decay(params.mus(1).unwrap()),
        vec![(-1.0 / config.block3_mu()).exp(); n3],
    ]
}

/// Map-cell coordinate to input-pixel coordinate.
pub(crate) fn to_input(config: &NetworkConfig, m: f64) -> f64 {
    let s = config.total_stride() as f64;
    s * m + (s - 1.0) / 2.0
}

pub fn forward_trace(params: &Parameters, config: &NetworkConfig, frames: &FrameTensor) -> Result<Trace> {
    let shapes = config.conv_shapes()?;
    let (steps, c, h, w) = frames.dims;
    if c != 2 || h != config.height || w != config.width {
        return Err(StrfError::config(format!(
            "input [{c}, {h}, {w}] does not match the network's [2, {}, {}]",
            config.height, config.width
        )));
    }
    let decay = decays(config, params);
    let temporal = config.activation.is_temporal();
    let lif = config.activation == Activation::Lif;
    let theta = config.lif_theta;
    let mut tr = Trace {
        steps,
        inputs: Vec::with_capacity(steps),
        pre: Default::default(),
        membrane: Default::default(),
        out: Default::default(),
        maps: Vec::with_capacity(steps),
        probs: Vec::with_capacity(steps),
        map_coords: Vec::with_capacity(steps),
        raw: Vec::with_capacity(steps),
        coords: Vec::with_capacity(steps),
        decay,
    };
    let mut scratch = Vec::new();
    let head_decay = config.head_mu.filter(|_| temporal).map(|m| (-1.0 / m).exp());
    for t in 0..steps {
        tr.inputs.push(block_input(config, frames, t));
        for b in 0..3 {
            let s: &ConvShape = &shapes[b];
            let input = if b == 0 { &tr.inputs[t] } else { &tr.out[b - 1][t] };
            let mut x = vec![0.0; s.output_len()];
            s.forward(input, params.weight(b), params.bias(b), &mut x, &mut scratch);
            let plane = s.out_h * s.out_w;
            let mut y = vec![0.0; x.len()];
            if temporal {
                let mut m = vec![0.0; x.len()];
                let prev = if t > 0 { Some((&tr.membrane[b][t - 1], &tr.out[b][t - 1])) } else { None };
                for i in 0..x.len() {
                    let a = tr.decay[b][i / plane];
                    // State carried from the previous step, after any reset.
                    let v_prev = prev.map_or(0.0, |(m, o)| if o[i] != 0.0 && lif { m[i] - theta } else { m[i] });
                    m[i] = a * v_prev + (1.0 - a) * x[i];
                    y[i] = match (lif, m[i] >= theta) {
                        (true, true) => 1.0,
                        (true, false) => 0.0,
                        (false, _) => m[i].max(0.0),
                    };
                }
                tr.membrane[b].push(m);
            } else {
                for (yi, xi) in y.iter_mut().zip(&x) {
                    *yi = xi.max(0.0);
                }
            }
            tr.pre[b].push(x);
            tr.out[b].push(y);
        }
        let s4 = &shapes[3];
        let mut maps = vec![0.0; s4.output_len()];
        s4.forward(&tr.out[2][t], params.weight(3), params.bias(3), &mut maps, &mut scratch);
        let (mc, probs) = coordinate_transform(&maps, s4.out_h, s4.out_w, config.head_beta)?;
        let raw = mc.map(|[x, y]| [to_input(config, x), to_input(config, y)]);
        let smoothed = match (head_decay, tr.coords.last()) {
            (Some(a), Some(prev)) => {
                let mut c = raw;
                for k in 0..3 {
                    for d in 0..2 {
                        c[k][d] = a * prev[k][d] + (1.0 - a) * raw[k][d];
                    }
                }
                c
            }
            _ => raw,
        };
        tr.maps.push(maps);
        tr.probs.push(probs);
        tr.map_coords.push(mc);
        tr.raw.push(raw);
        tr.coords.push(smoothed);
    }
    Ok(tr)
}

/// Predicted coordinates per step.
pub fn forward(params: &Parameters, config: &NetworkConfig, frames: &FrameTensor) -> Result<Vec<Coords>> {
    Ok(forward_trace(params, config, frames)?.coords)
}
