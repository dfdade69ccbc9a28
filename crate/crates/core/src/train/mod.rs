//! Backpropagation-through-time training of the scale-channel network.

pub mod adam;
pub mod backward;

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::events::dataset::{generate_all, DatasetSpec, Family, Manifest};
use crate::events::EventStream;
use crate::net::forward::Coords;
use crate::net::{forward, forward_trace, init_parameters, write_checkpoint, Activation, InitScheme, NetworkConfig, Parameters};
use crate::rng::{stream, StreamRole};
use crate::{Result, StrfError};

pub use adam::{clip_global_norm, Adam, AdamParams};
pub use backward::{backward, loss, loss_terms, Surrogate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub surrogate_slope: f64,
    /// Leading steps left out of the loss while the channels fill up.
    pub burn_in: usize,
    pub clip_norm: f64,
    pub validation_fraction: f64,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamParams::default();
        TrainConfig {
            // Faster than the optimiser default: the desk runs get few steps.
            lr: 2e-3,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            epochs: 15,
            batch_size: 8,
            surrogate_slope: 10.0,
            burn_in: 10,
            clip_norm: 10.0,
            validation_fraction: 0.2,
            seeds: vec![1, 2, 3],
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted (it freezes the parameters); negative
    /// or non-finite rates are not.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(StrfError::config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(StrfError::config("Adam needs betas in [0, 1) and eps > 0"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(StrfError::config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(StrfError::config("batch size must be positive"));
        }
        if !(self.surrogate_slope > 0.0) || !(self.clip_norm > 0.0) {
            return Err(StrfError::config("surrogate slope and clip norm must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn surrogate(&self) -> Surrogate {
        Surrogate::FastSigmoid { slope: self.surrogate_slope }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub events: EventStream,
    pub labels: Vec<Coords>,
    pub factor: f64,
}

/// Labelled sequences in memory. Events are rasterised on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub spec: DatasetSpec,
    pub samples: Vec<TrainSample>,
}

impl TrainData {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        let samples = generate_all(spec)?
            .into_iter()
            .map(|s| TrainSample { labels: s.labels(), factor: s.factor, events: s.events })
            .collect();
        Ok(TrainData { spec: spec.clone(), samples })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        let samples = (0..manifest.sequences.len())
            .into_par_iter()
            .map(|i| {
                let s = manifest.read_sequence(dir, i)?;
                Ok(TrainSample { labels: s.labels(), factor: s.factor, events: s.events })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainData { spec: manifest.spec, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fail unless every sequence fits the network input.
    pub fn check(&self, net: &NetworkConfig) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(StrfError::config("training needs at least two sequences"));
        }
        for (i, s) in self.samples.iter().enumerate() {
            let e = &s.events;
            if e.height != net.height || e.width != net.width {
                return Err(StrfError::config(format!(
                    "sequence {i} is {}x{} but the network expects {}x{}",
                    e.height, e.width, net.height, net.width
                )));
            }
            if s.labels.len() != e.n_frames {
                return Err(StrfError::config(format!(
                    "sequence {i} has {} labels for {} frames",
                    s.labels.len(),
                    e.n_frames
                )));
            }
        }
        Ok(())
    }

    /// Training and validation index ranges; validation takes the tail.
    pub fn split(&self, validation_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let n = self.samples.len();
        let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        let cut = n - n_val;
        ((0..cut).collect(), (cut..n).collect())
    }

    /// Range the per-sequence factor is binned over.
    pub fn factor_range(&self) -> (f64, f64) {
        match self.spec.family {
            Family::SpatialScale => self.spec.scale_range,
            Family::TemporalVelocity => self.spec.velocity_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// `None` for the untrained entry at epoch 0.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    /// Per temporal channel, over the block 1 and 2 time constants.
    pub mu_mean: Vec<f64>,
    pub mu_var: Vec<f64>,
    /// Variance of mu / mu_initial within each channel, averaged over channels.
    pub mu_relative_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinLoss {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// `None` for an empty bin.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub seed: u64,
    pub init: InitScheme,
    pub activation: Activation,
    pub family: Family,
    pub n_parameters: usize,
    pub epochs: Vec<EpochStats>,
    pub final_val_loss: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    /// Validation loss per factor bin, evaluated with the best parameters.
    pub per_bin: Vec<BinLoss>,
    /// Mean of the per-epoch relative variance over the trained epochs.
    pub mu_relative_variance: f64,
    pub wall_time_s: f64,
}

impl RunStats {
    /// Equality of everything except the wall time.
    pub fn same_results(&self, other: &RunStats) -> bool {
        let mut a = self.clone();
        a.wall_time_s = other.wall_time_s;
        &a == other
    }

    pub fn name(&self) -> String {
        run_name(self.family, self.activation, self.init, self.seed)
    }
}

pub fn run_name(family: Family, activation: Activation, init: InitScheme, seed: u64) -> String {
    let f = match family {
        Family::SpatialScale => "spatial",
        Family::TemporalVelocity => "velocity",
    };
    format!("{f}-{}-{}-s{seed}", activation.name(), init.name())
}

fn mu_groups(params: &Parameters, config: &NetworkConfig) -> Vec<Vec<f64>> {
    let mut groups = vec![Vec::new(); config.n_channels];
    for b in 0..2 {
        if let Some(mus) = params.mus(b) {
            let width = config.widths[b];
            for (o, m) in mus.into_iter().enumerate() {
                groups[(o / width).min(config.n_channels - 1)].push(m);
            }
        }
    }
    groups
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v)
}

fn mu_stats(params: &Parameters, initial: &[Vec<f64>], config: &NetworkConfig) -> (Vec<f64>, Vec<f64>, f64) {
    if !config.activation.is_temporal() {
        return (Vec::new(), Vec::new(), 0.0);
    }
    let groups = mu_groups(params, config);
    let mut means = Vec::new();
    let mut vars = Vec::new();
    let mut rel = 0.0;
    for (g, g0) in groups.iter().zip(initial) {
        let (m, v) = mean_var(g);
        means.push(m);
        vars.push(v);
        let ratio: Vec<f64> = g.iter().zip(g0).map(|(a, b)| a / b).collect();
        rel += mean_var(&ratio).1;
    }
    (means, vars, rel / groups.len() as f64)
}

/// Mean loss of each listed sample, in order.
pub fn sample_losses(params: &Parameters, config: &NetworkConfig, data: &TrainData, indices: &[usize], burn_in: usize) -> Result<Vec<f64>> {
    indices
        .par_iter()
        .map(|&i| {
            let s = &data.samples[i];
            let pred = forward(params, config, &s.events.rasterize())?;
            loss(&pred, &s.labels, burn_in)
        })
        .collect()
}

/// Group losses into `n_bins` log-spaced bins of |factor| over `range`;
/// factors outside the range land in the end bins.
pub fn per_bin_losses(factors: &[f64], losses: &[f64], range: (f64, f64), n_bins: usize) -> Vec<BinLoss> {
    let (lo, hi) = range;
    let edges: Vec<f64> = (0..=n_bins).map(|k| lo * (hi / lo).powf(k as f64 / n_bins as f64)).collect();
    let mut sums = vec![(0usize, 0.0f64); n_bins];
    for (f, l) in factors.iter().zip(losses) {
        let x = f.abs();
        let k = if hi > lo { ((x / lo).ln() / (hi / lo).ln() * n_bins as f64).floor() } else { 0.0 };
        let k = (k.max(0.0) as usize).min(n_bins - 1);
        sums[k].0 += 1;
        sums[k].1 += l;
    }
    sums.iter()
        .enumerate()
        .map(|(k, &(n, s))| BinLoss { lo: edges[k], hi: edges[k + 1], n, loss: (n > 0).then(|| s / n as f64) })
        .collect()
}

/// Per-bin validation loss of `params` on `data`.
pub fn evaluate_per_scale(params: &Parameters, config: &NetworkConfig, data: &TrainData, indices: &[usize], burn_in: usize) -> Result<Vec<BinLoss>> {
    let losses = sample_losses(params, config, data, indices, burn_in)?;
    let factors: Vec<f64> = indices.iter().map(|&i| data.samples[i].factor).collect();
    Ok(per_bin_losses(&factors, &losses, data.factor_range(), 4))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Loss sum, term count and parameter gradient of one batch. Samples run in
/// parallel and are reduced in index order.
pub fn batch_gradient(
    params: &Parameters,
    config: &NetworkConfig,
    data: &TrainData,
    batch: &[usize],
    burn_in: usize,
    surrogate: Surrogate,
) -> Result<(f64, usize, Vec<f64>)> {
    let parts = batch
        .par_iter()
        .map(|&i| {
            let s = &data.samples[i];
            let trace = forward_trace(params, config, &s.events.rasterize())?;
            let (sum, count, grad_coords) = loss_terms(&trace.coords, &s.labels, burn_in)?;
            let mut g = vec![0.0; params.len()];
            backward(params, config, &trace, &grad_coords, surrogate, &mut g)?;
            Ok((sum, count, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![0.0; params.len()];
    let (mut sum, mut count) = (0.0, 0);
    for (s, c, g) in parts {
        sum += s;
        count += c;
        total.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
    }
    Ok((sum, count, total))
}

/// Train one network. With `out` set, the best-validation parameters are
/// written to `out/<run name>.ckpt`. Returns the statistics and the
/// best-validation parameters.
pub fn train_run(
    net: &NetworkConfig,
    cfg: &TrainConfig,
    data: &TrainData,
    seed: u64,
    out: Option<&Path>,
) -> Result<(RunStats, Parameters)> {
    let start = Instant::now();
    cfg.validate()?;
    let config = NetworkConfig { seed, ..net.clone() };
    config.validate()?;
    data.check(&config)?;
    let (train_idx, val_idx) = data.split(cfg.validation_fraction);
    let mut params = init_parameters(&config)?;
    let initial_mus = mu_groups(&params, &config);
    let mut opt = Adam::new(cfg.adam(), params.len());
    let surrogate = cfg.surrogate();
    let name = run_name(data.spec.family, config.activation, config.init, seed);

    let epoch_stats = |epoch: usize, train_loss: Option<f64>, params: &Parameters| -> Result<EpochStats> {
        let val_loss = mean(&sample_losses(params, &config, data, &val_idx, cfg.burn_in)?);
        let (mu_mean, mu_var, mu_relative_variance) = mu_stats(params, &initial_mus, &config);
        Ok(EpochStats { epoch, train_loss, val_loss, mu_mean, mu_var, mu_relative_variance })
    };

    let mut epochs = vec![epoch_stats(0, None, &params)?];
    let mut best = (epochs[0].val_loss, 0usize, params.clone());
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut stream(seed, epoch as u64, StreamRole::Shuffle));
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let (sum, count, mut grads) = batch_gradient(&params, &config, data, batch, cfg.burn_in, surrogate)?;
            if !sum.is_finite() {
                return Err(StrfError::NonFinite { step, layer: "loss".into() });
            }
            if count > 0 {
                let scale = 1.0 / count as f64;
                grads.iter_mut().for_each(|g| *g *= scale);
            }
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                return Err(StrfError::NonFinite { step, layer: params.index.name_of(i).to_string() });
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            opt.step(&mut params.values, &grads);
            for b in 0..2 {
                if let Some(mus) = params.mus(b) {
                    assert!(mus.iter().all(|&m| m > 0.0 && m.is_finite()), "time constant left (0, inf) at step {step}");
                }
            }
            loss_sum += sum;
            loss_count += count;
            step += 1;
        }
        let train_loss = (loss_count > 0).then(|| loss_sum / loss_count as f64);
        let stats = epoch_stats(epoch, train_loss, &params)?;
        log::info!(
            "{name} epoch {epoch}: train {:.3} val {:.3} mu-relvar {:.3e}",
            train_loss.unwrap_or(f64::NAN),
            stats.val_loss,
            stats.mu_relative_variance
        );
        if stats.val_loss < best.0 {
            best = (stats.val_loss, epoch, params.clone());
        }
        epochs.push(stats);
    }

    let (best_val_loss, best_epoch, best_params) = best;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| StrfError::io(dir, e))?;
        write_checkpoint(&dir.join(format!("{name}.ckpt")), &config, &best_params)?;
    }
    let per_bin = evaluate_per_scale(&best_params, &config, data, &val_idx, cfg.burn_in)?;
    let trained: Vec<f64> = epochs[1..].iter().map(|e| e.mu_relative_variance).collect();
    let stats = RunStats {
        seed,
        init: config.init,
        activation: config.activation,
        family: data.spec.family,
        n_parameters: params.len(),
        final_val_loss: epochs.last().map_or(f64::NAN, |e| e.val_loss),
        best_val_loss,
        best_epoch,
        per_bin,
        mu_relative_variance: if trained.is_empty() { 0.0 } else { mean(&trained) },
        epochs,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((stats, best_params))
}

/// Write `<name>.csv` (one row per epoch) and `<name>.json` into `dir`.
pub fn write_run(dir: &Path, stats: &RunStats) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| StrfError::io(dir, e))?;
    let name = stats.name();
    let csv_path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| StrfError::format(&csv_path, e.to_string()))?;
    let n_ch = stats.epochs.first().map_or(0, |e| e.mu_mean.len());
    let mut header = vec!["epoch".to_string(), "train_loss".into(), "val_loss".into(), "mu_relative_variance".into()];
    for c in 0..n_ch {
        header.push(format!("mu_mean_{c}"));
        header.push(format!("mu_var_{c}"));
    }
    let csv_err = |e: csv::Error| StrfError::format(&csv_path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for e in &stats.epochs {
        let mut row = vec![e.epoch.to_string(), e.train_loss.map_or(String::new(), |v| v.to_string()), e.val_loss.to_string(), e.mu_relative_variance.to_string()];
        for c in 0..n_ch {
            row.push(e.mu_mean[c].to_string());
            row.push(e.mu_var[c].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| StrfError::io(&csv_path, e))?;
    let json_path = dir.join(format!("{name}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(stats)?).map_err(|e| StrfError::io(&json_path, e))?;
    Ok(())
}

pub fn read_run(path: &Path) -> Result<RunStats> {
    let text = fs::read_to_string(path).map_err(|e| StrfError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
