//! Scale-channel tracking network: configuration, parameters and checkpoints.
//!
//! Blocks 1 to 3 run once per temporal scale channel (implemented as grouped
//! convolutions over the stacked channels), block 4 merges the channels into
//! three class maps and a soft-argmax head turns each map into a coordinate.

pub mod conv;
pub mod forward;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, StreamRole};
use crate::spatial::{build_bank, BankLayout, BankParams};
use crate::{Result, StrfError};
use conv::ConvShape;

pub use forward::{coordinate_transform, forward, forward_trace, Trace};

pub const CHECKPOINT_FORMAT: &str = "strf-net-params/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// Leaky integrator followed by a rectifier.
    Li,
    /// Leaky integrate-and-fire with soft reset; emits 0/1 spikes.
    Lif,
    /// Stateless rectifier on the current frame.
    ReluSf,
    /// Stateless rectifier on the last `mf_frames` frames stacked as channels.
    ReluMf,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Activation::Li, Activation::Lif, Activation::ReluSf, Activation::ReluMf];

    pub fn is_temporal(self) -> bool {
        matches!(self, Activation::Li | Activation::Lif)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Li => "li",
            Activation::Lif => "lif",
            Activation::ReluSf => "relu-sf",
            Activation::ReluMf => "relu-mf",
        }
    }
}

impl FromStr for Activation {
    type Err = StrfError;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| StrfError::config(format!("unknown activation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// Blocks 1-2 from the receptive-field bank, log-spaced time constants.
    Rf,
    Uniform,
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::Rf => "rf",
            InitScheme::Uniform => "uniform",
        }
    }
}

impl FromStr for InitScheme {
    type Err = StrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(InitScheme::Rf),
            "uniform" => Ok(InitScheme::Uniform),
            other => Err(StrfError::config(format!("unknown init scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub activation: Activation,
    pub init: InitScheme,
    pub n_channels: usize,
    pub mf_frames: usize,
    pub height: usize,
    pub width: usize,
    /// Per-channel output features of blocks 1, 2 and 3.
    pub widths: [usize; 3],
    pub kernels: [usize; 4],
    pub strides: [usize; 4],
    /// Time constant per temporal channel; empty means log-spaced over `mu_range`.
    #[serde(default)]
    pub mu_init: Vec<f64>,
    pub mu_range: (f64, f64),
    pub lif_theta: f64,
    pub head_beta: f64,
    /// Time constant of the coordinate smoother for the temporal variants.
    pub head_mu: Option<f64>,
    #[serde(default)]
    pub bank: BankParams,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            activation: Activation::Li,
            init: InitScheme::Rf,
            n_channels: 4,
            mf_frames: 8,
            height: 64,
            width: 64,
            widths: [4, 8, 8],
            kernels: [9, 9, 5, 5],
            strides: [4, 2, 1, 1],
            mu_init: Vec::new(),
            mu_range: (1.0, 4.0),
            lif_theta: 0.5,
            head_beta: 10.0,
            head_mu: Some(1.0),
            bank: BankParams::default(),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn input_channels(&self) -> usize {
        match self.activation {
            Activation::ReluMf => 2 * self.mf_frames,
            _ => 2,
        }
    }

    /// Product of the block strides: input pixels per head-map cell.
    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    /// Initial time constant of each temporal channel.
    pub fn channel_mus(&self) -> Vec<f64> {
        if !self.mu_init.is_empty() {
            return self.mu_init.clone();
        }
        let (lo, hi) = self.mu_range;
        let n = self.n_channels;
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|c| lo * (hi / lo).powf(c as f64 / (n - 1) as f64)).collect()
    }

    /// Fixed time constant of block 3: the fastest of the range.
    pub fn block3_mu(&self) -> f64 {
        self.mu_range.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(StrfError::config(m));
        if self.n_channels == 0 || self.mf_frames == 0 {
            return bad("n_channels and mf_frames must be at least 1".into());
        }
        if self.widths.contains(&0) {
            return bad(format!("block widths {:?} must be positive", self.widths));
        }
        let s = self.total_stride();
        if s == 0 || self.height % s != 0 || self.width % s != 0 {
            return bad(format!("input {}x{} not divisible by total stride {s}", self.height, self.width));
        }
        let (lo, hi) = self.mu_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("mu range ({lo}, {hi}) invalid"));
        }
        if !self.mu_init.is_empty() && (self.mu_init.len() != self.n_channels || self.mu_init.iter().any(|m| !(*m > 0.0))) {
            return bad(format!("mu_init must hold {} positive values", self.n_channels));
        }
        if !(self.lif_theta > 0.0) {
            return bad(format!("lif_theta {} must be positive", self.lif_theta));
        }
        if !(self.head_beta > 0.0 && self.head_beta.is_finite()) {
            return bad(format!("head_beta {} must be positive", self.head_beta));
        }
        if let Some(m) = self.head_mu {
            if !(m > 0.0) {
                return bad(format!("head_mu {m} must be positive"));
            }
        }
        self.conv_shapes().map(|_| ())
    }

    pub fn conv_shapes(&self) -> Result<[ConvShape; 4]> {
        let n = self.n_channels;
        let [w1, w2, w3] = self.widths;
        let b1 = ConvShape::new(self.input_channels(), n * w1, 1, self.kernels[0], self.strides[0], self.height, self.width)?;
        let b2 = ConvShape::new(n * w1, n * w2, n, self.kernels[1], self.strides[1], b1.out_h, b1.out_w)?;
        let b3 = ConvShape::new(n * w2, n * w3, n, self.kernels[2], self.strides[2], b2.out_h, b2.out_w)?;
        let b4 = ConvShape::new(n * w3, 3, 1, self.kernels[3], self.strides[3], b3.out_h, b3.out_w)?;
        Ok([b1, b2, b3, b4])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamIndex {
    pub weight: [Range<usize>; 4],
    pub bias: [Range<usize>; 4],
    /// Log time constants of blocks 1 and 2 (temporal variants only).
    pub log_mu: Option<[Range<usize>; 2]>,
    pub entries: Vec<ParamEntry>,
    pub len: usize,
}

impl ParamIndex {
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        let shapes = config.conv_shapes()?;
        let mut entries = Vec::new();
        let mut len = 0;
        let mut take = |name: String, shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            entries.push(ParamEntry { name, shape });
            len += n;
            len - n..len
        };
        let mut weight = Vec::new();
        let mut bias = Vec::new();
        for (b, s) in shapes.iter().enumerate() {
            weight.push(take(format!("block{}.weight", b + 1), vec![s.out_c, s.cin_g(), s.k, s.k]));
            bias.push(take(format!("block{}.bias", b + 1), vec![s.out_c]));
        }
        let log_mu = if config.activation.is_temporal() {
            Some([
                take("block1.log_mu".into(), vec![shapes[0].out_c]),
                take("block2.log_mu".into(), vec![shapes[1].out_c]),
            ])
        } else {
            None
        };
        Ok(ParamIndex {
            weight: weight.try_into().unwrap(),
            bias: bias.try_into().unwrap(),
            log_mu,
            entries,
            len,
        })
    }

    /// Name of the tensor holding flat index `i`.
    pub fn name_of(&self, i: usize) -> &str {
        let mut offset = 0;
        for e in &self.entries {
            let n: usize = e.shape.iter().product();
            if i < offset + n {
                return &e.name;
            }
            offset += n;
        }
        "?"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub index: ParamIndex,
    pub values: Vec<f64>,
}

impl Parameters {
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        let index = ParamIndex::new(config)?;
        let values = vec![0.0; index.len];
        Ok(Parameters { index, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self, block: usize) -> &[f64] {
        &self.values[self.index.weight[block].clone()]
    }

    pub fn bias(&self, block: usize) -> &[f64] {
        &self.values[self.index.bias[block].clone()]
    }

    /// Time constants of block 1 or 2, or `None` for stateless variants.
    pub fn mus(&self, block: usize) -> Option<Vec<f64>> {
        self.index.log_mu.as_ref().map(|r| self.values[r[block].clone()].iter().map(|l| l.exp()).collect())
    }
}

/// Bank kernel for unit `j` of an RF-initialised block. Derivative family,
/// orientation, skew and scale advance on cycles of different lengths so that
/// even a handful of units covers several kinds of kernel; unit 0 gets the
/// first bank kernel.
fn rf_pick(j: usize, layout: &BankLayout) -> usize {
    let family = j % layout.n_deriv_families;
    let orientation = j % layout.n_orientations;
    let skew = (j / 2) % layout.n_skews;
    let scale = (j / layout.n_orientations) % layout.n_scales;
    layout.index(orientation, scale, skew, family)
}

fn fill_uniform(values: &mut [f64], bound: f64, rng: &mut impl Rng) {
    for v in values {
        *v = rng.gen_range(-bound..=bound);
    }
}

pub fn init_parameters(config: &NetworkConfig) -> Result<Parameters> {
    config.validate()?;
    let shapes = config.conv_shapes()?;
    let mut p = Parameters::zeros(config)?;
    let idx = p.index.clone();
    let lo_hi = (config.mu_range.0.ln(), config.mu_range.1.ln());
    let uniform_blocks = match config.init {
        InitScheme::Rf => 2..4,
        InitScheme::Uniform => 0..4,
    };
    for b in uniform_blocks {
        let bound = (1.0 / (shapes[b].cin_g() * shapes[b].k * shapes[b].k) as f64).sqrt();
        let mut rng = stream(config.seed, b as u64, StreamRole::Init);
        fill_uniform(&mut p.values[idx.weight[b].clone()], bound, &mut rng);
        fill_uniform(&mut p.values[idx.bias[b].clone()], bound, &mut rng);
    }
    match config.init {
        InitScheme::Rf => {
            let bank = build_bank(&config.bank)?;
            for b in 0..2 {
                let s = &shapes[b];
                let width = config.widths[b];
                if bank.grid() != (s.k, s.k) {
                    return Err(StrfError::config(format!(
                        "bank kernels are {:?} but block {} uses {}x{}",
                        bank.grid(),
                        b + 1,
                        s.k,
                        s.k
                    )));
                }
                if width > bank.len() {
                    return Err(StrfError::config(format!(
                        "block {} width {width} exceeds the {} bank kernels",
                        b + 1,
                        bank.len()
                    )));
                }
                let kk = s.k * s.k;
                let w = &mut p.values[idx.weight[b].clone()];
                for o in 0..s.out_c {
                    let kernel = &bank.kernels[rf_pick(o % width, &bank.layout)].weights;
                    for c in 0..s.cin_g() {
                        w[(o * s.cin_g() + c) * kk..][..kk].copy_from_slice(kernel);
                    }
                }
            }
            if let Some(ranges) = &idx.log_mu {
                let mus = config.channel_mus();
                for (b, r) in ranges.iter().enumerate() {
                    let width = config.widths[b];
                    for (o, v) in p.values[r.clone()].iter_mut().enumerate() {
                        *v = mus[o / width].ln();
                    }
                }
            }
        }
        InitScheme::Uniform => {
            if let Some(ranges) = &idx.log_mu {
                let mut rng = stream(config.seed, 4, StreamRole::Init);
                for r in ranges {
                    for v in &mut p.values[r.clone()] {
                        *v = rng.gen_range(lo_hi.0..=lo_hi.1);
                    }
                }
            }
        }
    }
    Ok(p)
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: NetworkConfig,
    entries: Vec<ParamEntry>,
    dtype: String,
    endianness: String,
}

/// Write a JSON header line followed by the parameters as little-endian f32.
pub fn write_checkpoint(path: &Path, config: &NetworkConfig, params: &Parameters) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        config: config.clone(),
        entries: params.index.entries.clone(),
        dtype: "f32".into(),
        endianness: "little".into(),
    };
    let file = File::create(path).map_err(|e| StrfError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for v in &params.values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&bytes).and_then(|_| out.flush()).map_err(|e| StrfError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(NetworkConfig, Parameters)> {
    let file = File::open(path).map_err(|e| StrfError::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| StrfError::io(path, e))?;
    let split = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| StrfError::format(path, "missing header line"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..split]).map_err(|e| StrfError::format(path, e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT || header.dtype != "f32" || header.endianness != "little" {
        return Err(StrfError::format(path, format!("unsupported checkpoint {:?}", header.format)));
    }
    let mut params = Parameters::zeros(&header.config)?;
    if params.index.entries != header.entries {
        return Err(StrfError::format(path, "tensor shapes disagree with the stored config"));
    }
    let blob = &bytes[split + 1..];
    if blob.len() != 4 * params.len() {
        return Err(StrfError::format(path, format!("expected {} values, found {} bytes", params.len(), blob.len())));
    }
    for (v, chunk) in params.values.iter_mut().zip(blob.chunks_exact(4)) {
        *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok((header.config, params))
}
