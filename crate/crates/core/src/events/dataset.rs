//! Synthetic tracking datasets: three shapes on a random walk, rendered,
//! converted to events and labelled with their centroids.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render_frames, Pose, Shape, ShapeTrack};
use super::{add_noise_with, events_from_frames, read_events, write_events, write_events_csv, EventStream};
use crate::engine::FrameTensor;
use crate::rng::{stream, StreamRole};
use crate::{Result, StrfError};

pub const MANIFEST_FORMAT: &str = "strf-events/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Fixed shape size per sequence, drawn log-uniformly from `scale_range`.
    SpatialScale,
    /// Shapes grow or shrink by a per-sequence rate drawn from `velocity_range`.
    TemporalVelocity,
}

impl FromStr for Family {
    type Err = StrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" | "spatial_scale" => Ok(Family::SpatialScale),
            "velocity" | "temporal_velocity" => Ok(Family::TemporalVelocity),
            other => Err(StrfError::config(format!("unknown dataset family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub family: Family,
    pub height: usize,
    pub width: usize,
    /// Rendering happens at `supersample` times the output resolution.
    pub supersample: usize,
    pub n_frames: usize,
    pub n_sequences: usize,
    /// Shape size in output pixels (side length, or diameter for the circle).
    pub scale_range: (f64, f64),
    /// Size change per frame in output pixels; `(0, 0)` gives static sizes.
    pub velocity_range: (f64, f64),
    /// Bound of the uniform per-step translation, output pixels per frame.
    pub v_max: f64,
    pub noise_rate: f64,
    pub threshold: f64,
    pub dt_ms: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// 300x300 sensor rendered at 2400x2400, 50 frames.
    pub fn paper(family: Family) -> Self {
        DatasetSpec {
            family,
            height: 300,
            width: 300,
            supersample: 8,
            n_frames: 50,
            n_sequences: 800,
            scale_range: (10.0, 80.0),
            velocity_range: (0.16, 1.28),
            v_max: 1.0,
            noise_rate: 0.005,
            threshold: 0.3,
            dt_ms: 1.0,
            seed: 7,
        }
    }

    /// 64x64 sensor with sizes scaled to the smaller field of view.
    pub fn desk(family: Family) -> Self {
        DatasetSpec {
            height: 64,
            width: 64,
            n_frames: 32,
            n_sequences: 200,
            scale_range: (6.0, 24.0),
            ..DatasetSpec::paper(family)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(StrfError::config(m));
        if self.height == 0 || self.width == 0 || self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return bad(format!("resolution {}x{} out of range", self.height, self.width));
        }
        if self.supersample == 0 {
            return bad("supersample factor must be at least 1".into());
        }
        if self.n_frames == 0 {
            return bad("need at least one frame".into());
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("scale range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        let (vlo, vhi) = self.velocity_range;
        if !(vlo >= 0.0 && vlo <= vhi && vhi.is_finite()) || (vlo == 0.0 && vhi != 0.0) {
            return bad(format!("velocity range ({vlo}, {vhi}) must be positive or exactly (0, 0)"));
        }
        if !(self.v_max >= 0.0 && self.v_max.is_finite()) {
            return bad(format!("v_max {} must be finite and nonnegative", self.v_max));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise rate {} outside [0, 1]", self.noise_rate));
        }
        if !(self.threshold > 0.0) {
            return bad(format!("threshold {} must be positive", self.threshold));
        }
        if !(self.dt_ms > 0.0) {
            return bad(format!("dt_ms {} must be positive", self.dt_ms));
        }
        Ok(())
    }

    /// Largest size any shape can take in this family.
    fn max_size(&self) -> f64 {
        self.scale_range.1
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    (rng.gen::<f64>() * (hi / lo).ln()).exp() * lo
}

/// Reflect `x` into `[lo, hi]`; returns whether a reflection happened.
fn reflect(x: &mut f64, lo: f64, hi: f64) -> bool {
    if hi <= lo {
        *x = (lo + hi) / 2.0;
        return false;
    }
    let before = *x;
    if *x < lo {
        *x = 2.0 * lo - *x;
    }
    if *x > hi {
        *x = 2.0 * hi - *x;
    }
    *x = x.clamp(lo, hi);
    *x != before
}

/// One generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub index: usize,
    /// Size (spatial family) or signed size rate (velocity family).
    pub factor: f64,
    pub tracks: Vec<ShapeTrack>,
    pub events: EventStream,
}

impl Sequence {
    /// Per-frame centroids in label order (triangle, square, circle).
    pub fn labels(&self) -> Vec<[[f64; 2]; 3]> {
        track_labels(&self.tracks)
    }
}

pub fn track_labels(tracks: &[ShapeTrack]) -> Vec<[[f64; 2]; 3]> {
    let steps = tracks.iter().map(|t| t.poses.len()).min().unwrap_or(0);
    (0..steps)
        .map(|t| {
            let mut l = [[0.0; 2]; 3];
            for (k, track) in tracks.iter().take(3).enumerate() {
                l[k] = [track.poses[t].cx, track.poses[t].cy];
            }
            l
        })
        .collect()
}

/// Draw the three tracks of sequence `index`; returns them with the sequence factor.
pub fn sample_tracks(spec: &DatasetSpec, index: usize) -> Result<(Vec<ShapeTrack>, f64)> {
    spec.validate()?;
    let mut place = stream(spec.seed, index as u64, StreamRole::Placement);
    let mut motion = stream(spec.seed, index as u64, StreamRole::Motion);
    let (lo, hi) = spec.scale_range;
    let size0 = log_uniform(&mut place, lo, hi);
    let rate = match spec.family {
        Family::SpatialScale => 0.0,
        Family::TemporalVelocity => {
            let r = log_uniform(&mut place, spec.velocity_range.0, spec.velocity_range.1);
            if place.gen::<bool>() {
                r
            } else {
                -r
            }
        }
    };
    let factor = match spec.family {
        Family::SpatialScale => size0,
        Family::TemporalVelocity => rate,
    };
    let mut tracks = Vec::with_capacity(3);
    for shape in Shape::ALL {
        let margin = shape.circumradius(spec.max_size()) + 1.0;
        let (xlo, xhi) = (margin, spec.width as f64 - 1.0 - margin);
        let (ylo, yhi) = (margin, spec.height as f64 - 1.0 - margin);
        let span = |a: f64, b: f64, u: f64| if b > a { a + u * (b - a) } else { (a + b) / 2.0 };
        let mut pose = Pose {
            cx: span(xlo, xhi, place.gen()),
            cy: span(ylo, yhi, place.gen()),
            size: size0,
            angle: place.gen::<f64>() * 2.0 * PI,
        };
        let mut shape_rate = rate;
        let mut poses = Vec::with_capacity(spec.n_frames);
        poses.push(pose);
        for _ in 1..spec.n_frames {
            if spec.v_max > 0.0 {
                pose.cx += motion.gen_range(-spec.v_max..=spec.v_max);
                pose.cy += motion.gen_range(-spec.v_max..=spec.v_max);
            }
            reflect(&mut pose.cx, xlo, xhi);
            reflect(&mut pose.cy, ylo, yhi);
            if shape_rate != 0.0 {
                pose.size += shape_rate;
                if reflect(&mut pose.size, lo, hi) {
                    shape_rate = -shape_rate;
                }
            }
            poses.push(pose);
        }
        tracks.push(ShapeTrack { shape, poses });
    }
    Ok((tracks, factor))
}

/// Render the frames of sequence `index` together with its tracks.
pub fn render_tracks(spec: &DatasetSpec, index: usize) -> Result<(FrameTensor, Vec<ShapeTrack>, f64)> {
    let (tracks, factor) = sample_tracks(spec, index)?;
    let frames = render_frames(&tracks, spec.height, spec.width, spec.supersample);
    Ok((frames, tracks, factor))
}

pub fn generate_sequence(spec: &DatasetSpec, index: usize) -> Result<Sequence> {
    let (frames, tracks, factor) = render_tracks(spec, index)?;
    let mut events = events_from_frames(&frames, spec.threshold)?;
    events.dt_ms = spec.dt_ms as f32;
    let mut noise = stream(spec.seed, index as u64, StreamRole::Noise);
    let events = add_noise_with(events, spec.noise_rate, &mut noise)?;
    Ok(Sequence { index, factor, tracks, events })
}

/// Generate every sequence in memory, in index order.
pub fn generate_all(spec: &DatasetSpec) -> Result<Vec<Sequence>> {
    (0..spec.n_sequences).into_par_iter().map(|i| generate_sequence(spec, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub file: String,
    pub factor: f64,
    pub n_events: usize,
    /// Per frame: centroids of triangle, square, circle.
    pub labels: Vec<[[f64; 2]; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub spec: DatasetSpec,
    pub sequences: Vec<SequenceEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| StrfError::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| StrfError::format(&path, e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(StrfError::format(&path, format!("unsupported format {:?}", m.format)));
        }
        m.spec.validate()?;
        Ok(m)
    }

    pub fn read_sequence(&self, dir: &Path, index: usize) -> Result<Sequence> {
        let entry = self
            .sequences
            .get(index)
            .ok_or_else(|| StrfError::config(format!("sequence {index} not in manifest")))?;
        let path = dir.join(&entry.file);
        let events = read_events(&path)?;
        if events.n_frames != entry.labels.len() {
            return Err(StrfError::format(&path, "frame count disagrees with the manifest labels"));
        }
        let tracks = Shape::ALL
            .iter()
            .enumerate()
            .map(|(k, &shape)| ShapeTrack {
                shape,
                poses: entry
                    .labels
                    .iter()
                    .map(|l| Pose { cx: l[k][0], cy: l[k][1], size: f64::NAN, angle: f64::NAN })
                    .collect(),
            })
            .collect();
        Ok(Sequence { index, factor: entry.factor, tracks, events })
    }
}

/// Generate the dataset into `dir`: one event file per sequence plus the manifest.
pub fn make_dataset(spec: &DatasetSpec, dir: &Path, csv: bool) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| StrfError::io(dir, e))?;
    let sequences = (0..spec.n_sequences)
        .into_par_iter()
        .map(|i| {
            let seq = generate_sequence(spec, i)?;
            let file = format!("seq_{i:05}.evs");
            write_events(&dir.join(&file), &seq.events)?;
            if csv {
                write_events_csv(&dir.join(format!("seq_{i:05}.csv")), &seq.events)?;
            }
            Ok(SequenceEntry { file, factor: seq.factor, n_events: seq.events.len(), labels: seq.labels() })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { format: MANIFEST_FORMAT.into(), spec: spec.clone(), sequences };
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| StrfError::io(&path, e))?;
    Ok(manifest)
}
