//! Frame-difference event generation, background noise and the event file format.

pub mod dataset;
pub mod render;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::FrameTensor;
use crate::rng::{stream, StreamRole};
use crate::{Result, StrfError};

/// Intensities are quantised to multiples of 2^-16 before differencing so the
/// accumulator runs on integers and event generation is exact.
pub const LATTICE: f64 = 65536.0;

pub const EVENT_MAGIC: &[u8; 4] = b"EVS1";
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 4 + 8;
const RECORD_LEN: usize = 10;

pub fn quantize(v: f64) -> i64 {
    (v * LATTICE).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    /// Frame index.
    pub t: u32,
    pub x: u16,
    pub y: u16,
    /// +1 or -1.
    pub p: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub dt_ms: f32,
    /// Sorted by `(t, y, x)`.
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn empty(height: usize, width: usize, n_frames: usize, dt_ms: f32) -> Self {
        EventStream { height, width, n_frames, dt_ms, events: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn sort(&mut self) {
        self.events.sort_by_key(|e| (e.t, e.y, e.x));
    }

    /// `(positive, negative)` event counts.
    pub fn polarity_counts(&self) -> (usize, usize) {
        let pos = self.events.iter().filter(|e| e.p > 0).count();
        (pos, self.events.len() - pos)
    }

    /// Count events into a `[T, 2, H, W]` tensor (channel 0 positive,
    /// channel 1 negative), clamped to `[0, 1]`.
    pub fn rasterize(&self) -> FrameTensor {
        let mut out = FrameTensor::zeros(self.n_frames, 2, self.height, self.width, 1.0);
        for e in &self.events {
            let c = if e.p > 0 { 0 } else { 1 };
            out.set(e.t as usize, c, e.y as usize, e.x as usize, 1.0);
        }
        out
    }

    /// Fraction of nonzero entries in the rasterised `[T, 2, H, W]` tensor.
    pub fn active_fraction(&self) -> f64 {
        let total = self.n_frames * 2 * self.height * self.width;
        if total == 0 {
            return 0.0;
        }
        let raster = self.rasterize();
        raster.data.iter().filter(|v| **v != 0.0).count() as f64 / total as f64
    }
}

/// Per-pixel signed accumulator with residual-subtract semantics.
#[derive(Debug, Clone)]
pub struct Accumulator {
    width: usize,
    threshold: i64,
    last: Vec<i64>,
    acc: Vec<i64>,
}

impl Accumulator {
    /// Start from the first frame; `threshold` is in intensity units.
    pub fn new(first: &[f64], width: usize, threshold: f64) -> Result<Self> {
        let q = quantize(threshold);
        if !(threshold > 0.0) || q < 1 {
            return Err(StrfError::domain(format!("event threshold must be positive, got {threshold}")));
        }
        Ok(Accumulator {
            width,
            threshold: q,
            last: first.iter().map(|v| quantize(*v)).collect(),
            acc: vec![0; first.len()],
        })
    }

    /// Integrate the difference to `frame` and append the events it triggers.
    pub fn step(&mut self, frame: &[f64], t: u32, out: &mut Vec<Event>) {
        for (i, v) in frame.iter().enumerate() {
            let q = quantize(*v);
            let a = &mut self.acc[i];
            *a += q - self.last[i];
            self.last[i] = q;
            let (x, y) = ((i % self.width) as u16, (i / self.width) as u16);
            while *a >= self.threshold {
                *a -= self.threshold;
                out.push(Event { t, x, y, p: 1 });
            }
            while *a <= -self.threshold {
                *a += self.threshold;
                out.push(Event { t, x, y, p: -1 });
            }
        }
    }

    /// Residual in lattice units.
    pub fn residual(&self) -> &[i64] {
        &self.acc
    }

    /// Threshold in lattice units.
    pub fn threshold_units(&self) -> i64 {
        self.threshold
    }
}

/// Convert a single-channel video into polarity events. Frame 0 only sets
/// the reference level; events from the change into frame `t` carry index `t`.
pub fn events_from_frames(frames: &FrameTensor, threshold: f64) -> Result<EventStream> {
    let (steps, c, h, w) = frames.dims;
    if c != 1 {
        return Err(StrfError::config(format!("event generation needs one channel, got {c}")));
    }
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(StrfError::config(format!("sensor {h}x{w} exceeds the u16 address range")));
    }
    let mut stream = EventStream::empty(h, w, steps, frames.dt as f32);
    if steps == 0 {
        return Ok(stream);
    }
    let mut acc = Accumulator::new(frames.frame(0, 0), w, threshold)?;
    for t in 1..steps {
        acc.step(frames.frame(t, 0), t as u32, &mut stream.events);
    }
    Ok(stream)
}

/// Add Bernoulli background noise with uniform polarity; the stream for the
/// draws is `(seed, 0, Noise)`.
pub fn add_noise(events: EventStream, rate: f64, seed: u64) -> Result<EventStream> {
    add_noise_with(events, rate, &mut stream(seed, 0, StreamRole::Noise))
}

/// Add noise drawing from `rng`: every `(frame, pixel)` receives one event
/// with probability `rate`.
pub fn add_noise_with(mut events: EventStream, rate: f64, rng: &mut impl Rng) -> Result<EventStream> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(StrfError::domain(format!("noise rate must lie in [0, 1], got {rate}")));
    }
    if rate == 0.0 {
        return Ok(events);
    }
    for t in 0..events.n_frames {
        for y in 0..events.height {
            for x in 0..events.width {
                if rng.gen::<f64>() < rate {
                    let p = if rng.gen::<bool>() { 1 } else { -1 };
                    events.events.push(Event { t: t as u32, x: x as u16, y: y as u16, p });
                }
            }
        }
    }
    events.sort();
    Ok(events)
}

pub fn write_events(path: &Path, events: &EventStream) -> Result<()> {
    let file = File::create(path).map_err(|e| StrfError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(EVENT_MAGIC);
    header.extend_from_slice(&(events.height as u16).to_le_bytes());
    header.extend_from_slice(&(events.width as u16).to_le_bytes());
    header.extend_from_slice(&(events.n_frames as u32).to_le_bytes());
    header.extend_from_slice(&events.dt_ms.to_le_bytes());
    header.extend_from_slice(&(events.events.len() as u64).to_le_bytes());
    out.write_all(&header).map_err(|e| StrfError::io(path, e))?;
    let mut rec = [0u8; RECORD_LEN];
    for e in &events.events {
        rec[0..4].copy_from_slice(&e.t.to_le_bytes());
        rec[4..6].copy_from_slice(&e.x.to_le_bytes());
        rec[6..8].copy_from_slice(&e.y.to_le_bytes());
        rec[8] = e.p as u8;
        rec[9] = 0;
        out.write_all(&rec).map_err(|e| StrfError::io(path, e))?;
    }
    out.flush().map_err(|e| StrfError::io(path, e))
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    let file = File::open(path).map_err(|e| StrfError::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| StrfError::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[0..4] != EVENT_MAGIC {
        return Err(StrfError::format(path, "missing EVS1 header"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let height = u16_at(4) as usize;
    let width = u16_at(6) as usize;
    let n_frames = u32_at(8) as usize;
    let dt_ms = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let n = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if bytes.len() != HEADER_LEN + n * RECORD_LEN {
        return Err(StrfError::format(
            path,
            format!("header announces {n} events but the body holds {} bytes", bytes.len() - HEADER_LEN),
        ));
    }
    let mut events = Vec::with_capacity(n);
    for k in 0..n {
        let o = HEADER_LEN + k * RECORD_LEN;
        let e = Event { t: u32_at(o), x: u16_at(o + 4), y: u16_at(o + 6), p: bytes[o + 8] as i8 };
        if (e.p != 1 && e.p != -1) || e.x as usize >= width || e.y as usize >= height || e.t as usize >= n_frames {
            return Err(StrfError::format(path, format!("record {k} out of range: {e:?}")));
        }
        events.push(e);
    }
    if events.windows(2).any(|w| w[0].t > w[1].t) {
        return Err(StrfError::format(path, "records are not sorted by time"));
    }
    Ok(EventStream { height, width, n_frames, dt_ms, events })
}

/// Write the `t,x,y,p` text mirror of a stream.
pub fn write_events_csv(path: &Path, events: &EventStream) -> Result<()> {
    let csv_err = |e: csv::Error| StrfError::format(path, e.to_string());
    let mut wtr = csv::Writer::from_path(path).map_err(csv_err)?;
    wtr.write_record(["t", "x", "y", "p"]).map_err(csv_err)?;
    for e in &events.events {
        wtr.serialize((e.t, e.x, e.y, e.p)).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| StrfError::io(path, e))
}
