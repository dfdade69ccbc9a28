//! Effect sizes, Monte-Carlo baselines and the experiment report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::events::dataset::Family;
use crate::net::{Activation, InitScheme};
use crate::rng::{stream, StreamRole};
use crate::train::{read_run, RunStats};
use crate::{Result, StrfError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub sd: f64,
}

impl GroupSummary {
    pub fn new(n: usize, mean: f64, sd: f64) -> Result<Self> {
        if n < 2 || !(sd >= 0.0) || !mean.is_finite() || !sd.is_finite() {
            return Err(StrfError::domain(format!("group summary needs n >= 2 and finite sd >= 0 (n={n}, sd={sd})")));
        }
        Ok(GroupSummary { n, mean, sd })
    }

    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(StrfError::domain(format!("need at least two samples, got {}", xs.len())));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        GroupSummary::new(xs.len(), mean, var.sqrt())
    }
}

/// Pooled standard deviation with (n - 1) weights on both groups.
pub fn pooled_sd(g1: &GroupSummary, g2: &GroupSummary) -> f64 {
    let (n1, n2) = (g1.n as f64, g2.n as f64);
    (((n1 - 1.0) * g1.sd * g1.sd + (n2 - 1.0) * g2.sd * g2.sd) / (n1 + n2 - 2.0)).sqrt()
}

/// Standardised mean difference `(mean(uniform) - mean(rf)) / pooled sd`:
/// positive when the RF group has the lower loss. Undefined (an error) when
/// the pooled sd is zero.
pub fn cohens_d(rf: &GroupSummary, uniform: &GroupSummary) -> Result<f64> {
    let s = pooled_sd(rf, uniform);
    if s == 0.0 {
        return Err(StrfError::domain("effect size undefined: pooled sd is zero"));
    }
    Ok((uniform.mean - rf.mean) / s)
}

const BASELINE_SHARDS: usize = 16;

/// Mean distance between two uniform points in a `side` x `side` square, or
/// between one uniform point and the centre when `fixed_center` is set.
/// Shards draw from their own streams and are summed in order, so the result
/// does not depend on the thread count.
pub fn random_baseline(side: f64, fixed_center: bool, n: usize, seed: u64) -> Result<f64> {
    if n < 10_000 {
        return Err(StrfError::domain(format!("random baseline needs n >= 10^4, got {n}")));
    }
    if !(side >= 0.0 && side.is_finite()) {
        return Err(StrfError::domain(format!("side must be finite and >= 0, got {side}")));
    }
    if side == 0.0 {
        return Ok(0.0);
    }
    let sums: Vec<f64> = (0..BASELINE_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let count = n / BASELINE_SHARDS + usize::from(shard < n % BASELINE_SHARDS);
            let mut rng = stream(seed, shard as u64, StreamRole::MonteCarlo);
            let mut sum = 0.0;
            for _ in 0..count {
                let (x1, y1) = (rng.gen::<f64>() * side, rng.gen::<f64>() * side);
                let (x2, y2) = if fixed_center {
                    (side / 2.0, side / 2.0)
                } else {
                    (rng.gen::<f64>() * side, rng.gen::<f64>() * side)
                };
                sum += (x1 - x2).hypot(y1 - y2);
            }
            sum
        })
        .collect();
    Ok(sums.iter().sum::<f64>() / n as f64)
}

/// RF-versus-uniform comparison for one dataset family and activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub family: Family,
    pub activation: Activation,
    pub n_rf: usize,
    pub n_uniform: usize,
    pub mean_rf: f64,
    pub mean_uniform: f64,
    pub sd_rf: f64,
    pub sd_uniform: f64,
    pub pooled_sd: f64,
    /// `None` when undefined (fewer than two runs a side, or zero spread).
    pub cohens_d: Option<f64>,
    /// Loss reduction of RF relative to uniform, in percent.
    pub improvement_pct: f64,
    pub mu_relvar_rf: f64,
    pub mu_relvar_uniform: f64,
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::SpatialScale => "spatial",
        Family::TemporalVelocity => "velocity",
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

type GroupKey = (Family, Activation);

fn grouped(runs: &[RunStats]) -> BTreeMap<(u8, u8), (GroupKey, Vec<&RunStats>, Vec<&RunStats>)> {
    let mut groups: BTreeMap<(u8, u8), (GroupKey, Vec<&RunStats>, Vec<&RunStats>)> = BTreeMap::new();
    for r in runs {
        let fam = r.family as u8;
        let act = Activation::ALL.iter().position(|a| *a == r.activation).unwrap_or(0) as u8;
        let e = groups.entry((fam, act)).or_insert(((r.family, r.activation), Vec::new(), Vec::new()));
        match r.init {
            InitScheme::Rf => e.1.push(r),
            InitScheme::Uniform => e.2.push(r),
        }
    }
    groups
}

/// One row per (family, activation) that has runs for both schemes.
pub fn effect_sizes(runs: &[RunStats]) -> Vec<EffectRow> {
    let mut rows = Vec::new();
    for ((family, activation), rf, un) in grouped(runs).into_values() {
        if rf.is_empty() || un.is_empty() {
            continue;
        }
        let lr: Vec<f64> = rf.iter().map(|r| r.final_val_loss).collect();
        let lu: Vec<f64> = un.iter().map(|r| r.final_val_loss).collect();
        let (g_rf, g_un) = (GroupSummary::from_samples(&lr), GroupSummary::from_samples(&lu));
        let (pooled, d) = match (&g_rf, &g_un) {
            (Ok(a), Ok(b)) => (pooled_sd(a, b), cohens_d(a, b).ok()),
            _ => (f64::NAN, None),
        };
        let sd = |g: &Result<GroupSummary>| g.as_ref().map_or(f64::NAN, |g| g.sd);
        let (mr, mu) = (mean(&lr), mean(&lu));
        rows.push(EffectRow {
            family,
            activation,
            n_rf: lr.len(),
            n_uniform: lu.len(),
            mean_rf: mr,
            mean_uniform: mu,
            sd_rf: sd(&g_rf),
            sd_uniform: sd(&g_un),
            pooled_sd: pooled,
            cohens_d: d,
            improvement_pct: 100.0 * (mu - mr) / mu,
            mu_relvar_rf: mean(&rf.iter().map(|r| r.mu_relative_variance).collect::<Vec<_>>()),
            mu_relvar_uniform: mean(&un.iter().map(|r| r.mu_relative_variance).collect::<Vec<_>>()),
        });
    }
    rows
}

/// Every `*.json` run summary in `dir`, sorted by run name.
pub fn load_runs(dir: &Path) -> Result<Vec<RunStats>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| StrfError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut runs = Vec::new();
    for p in paths {
        // Other JSON files (configs) share the directory; skip what does not parse.
        match read_run(&p) {
            Ok(r) => runs.push(r),
            Err(StrfError::Json(_)) => log::debug!("skipping {}", p.display()),
            Err(e) => return Err(e),
        }
    }
    Ok(runs)
}

pub fn write_effect_csv(path: &Path, rows: &[EffectRow]) -> Result<()> {
    let err = |e: csv::Error| StrfError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record([
        "family", "activation", "n_rf", "n_uniform", "mean_rf", "mean_uniform", "sd_rf", "sd_uniform", "pooled_sd",
        "cohens_d", "improvement_pct", "mu_relvar_rf", "mu_relvar_uniform",
    ])
    .map_err(err)?;
    for r in rows {
        w.write_record([
            family_name(r.family).to_string(),
            r.activation.name().to_string(),
            r.n_rf.to_string(),
            r.n_uniform.to_string(),
            r.mean_rf.to_string(),
            r.mean_uniform.to_string(),
            r.sd_rf.to_string(),
            r.sd_uniform.to_string(),
            r.pooled_sd.to_string(),
            r.cohens_d.map_or("undefined".to_string(), |d| d.to_string()),
            r.improvement_pct.to_string(),
            r.mu_relvar_rf.to_string(),
            r.mu_relvar_uniform.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| StrfError::io(path, e))
}

const RF_COLOR: &str = "#1f77b4";
const UNIFORM_COLOR: &str = "#d62728";

fn color(init: InitScheme) -> &'static str {
    match init {
        InitScheme::Rf => RF_COLOR,
        InitScheme::Uniform => UNIFORM_COLOR,
    }
}

struct Svg {
    body: String,
    w: f64,
    h: f64,
}

impl Svg {
    fn new(w: f64, h: f64) -> Self {
        Svg { body: String::new(), w, h }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(self.body, r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="{stroke}"/>"#);
    }

    fn circle(&mut self, x: f64, y: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3.5" fill="{fill}" fill-opacity="0.8"/>"#);
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{h:.1}" fill="{fill}"/>"#);
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(self.body, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="11">{s}</text>"#);
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ = writeln!(self.body, r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-opacity="0.7"/>"#, p.join(" "));
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n",
            w = self.w,
            h = self.h,
            body = self.body
        )
    }
}

/// Value range padded by 5% with a non-degenerate span.
fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

/// Final validation loss per run, one panel per family, one column per
/// activation, RF and uniform side by side.
pub fn strip_plot_svg(runs: &[RunStats]) -> String {
    let families: Vec<Family> = [Family::SpatialScale, Family::TemporalVelocity]
        .into_iter()
        .filter(|f| runs.iter().any(|r| r.family == *f))
        .collect();
    let (pw, ph, m) = (420.0, 260.0, 50.0);
    let mut svg = Svg::new(pw * families.len().max(1) as f64, ph + 20.0);
    for (fi, fam) in families.iter().enumerate() {
        let x0 = fi as f64 * pw;
        let rs: Vec<&RunStats> = runs.iter().filter(|r| r.family == *fam).collect();
        let (lo, hi) = span(rs.iter().map(|r| r.final_val_loss));
        let y = |v: f64| ph - m - (v - lo) / (hi - lo) * (ph - 2.0 * m);
        svg.text(x0 + pw / 2.0, 20.0, "middle", &format!("{} family: final validation loss (px)", family_name(*fam)));
        svg.line(x0 + m, m, x0 + m, ph - m, "black");
        svg.text(x0 + m - 4.0, y(hi) + 4.0, "end", &format!("{hi:.1}"));
        svg.text(x0 + m - 4.0, y(lo) + 4.0, "end", &format!("{lo:.1}"));
        let col_w = (pw - 1.5 * m) / Activation::ALL.len() as f64;
        for (ai, act) in Activation::ALL.iter().enumerate() {
            let cx = x0 + m + col_w * (ai as f64 + 0.5);
            svg.text(cx, ph - m + 16.0, "middle", act.name());
            for (k, init) in [InitScheme::Rf, InitScheme::Uniform].into_iter().enumerate() {
                let px = cx + if k == 0 { -col_w / 6.0 } else { col_w / 6.0 };
                for r in rs.iter().filter(|r| r.activation == *act && r.init == init) {
                    svg.circle(px, y(r.final_val_loss), color(init));
                }
            }
        }
    }
    svg.text(10.0, ph + 12.0, "start", "blue: RF init, red: uniform init");
    svg.finish()
}

/// Mean validation loss per factor bin, averaged over seeds.
pub fn per_bin_svg(runs: &[RunStats]) -> String {
    let mut groups: BTreeMap<(u8, u8, u8), Vec<&RunStats>> = BTreeMap::new();
    for r in runs {
        let act = Activation::ALL.iter().position(|a| *a == r.activation).unwrap_or(0) as u8;
        groups.entry((r.family as u8, act, r.init as u8)).or_default().push(r);
    }
    let (pw, ph, m) = (300.0, 200.0, 40.0);
    let ncol = 4.0;
    let nrows = (groups.len() as f64 / ncol).ceil().max(1.0);
    let mut svg = Svg::new(pw * ncol, ph * nrows);
    let (_, hi) = span(runs.iter().flat_map(|r| r.per_bin.iter().filter_map(|b| b.loss)));
    for (gi, rs) in groups.values().enumerate() {
        let (x0, y0) = ((gi as f64 % ncol) * pw, (gi as f64 / ncol).floor() * ph);
        let r0 = rs[0];
        svg.text(x0 + pw / 2.0, y0 + 16.0, "middle", &format!("{} {} {}", family_name(r0.family), r0.activation.name(), r0.init.name()));
        let nb = r0.per_bin.len().max(1);
        let bw = (pw - 2.0 * m) / nb as f64;
        for b in 0..nb {
            let vals: Vec<f64> = rs.iter().filter_map(|r| r.per_bin.get(b).and_then(|x| x.loss)).collect();
            if vals.is_empty() {
                continue;
            }
            let v = mean(&vals);
            let h = v / hi * (ph - 2.0 * m);
            svg.rect(x0 + m + b as f64 * bw + 2.0, y0 + ph - m - h, bw - 4.0, h, color(r0.init));
            svg.text(x0 + m + (b as f64 + 0.5) * bw, y0 + ph - m + 14.0, "middle", &format!("{:.2}", r0.per_bin[b].lo));
            svg.text(x0 + m + (b as f64 + 0.5) * bw, y0 + ph - m - h - 3.0, "middle", &format!("{v:.1}"));
        }
        svg.line(x0 + m, y0 + ph - m, x0 + pw - m, y0 + ph - m, "black");
    }
    svg.finish()
}

/// Relative time-constant variance against epoch for the temporal models.
pub fn mu_trajectory_svg(runs: &[RunStats]) -> String {
    let rs: Vec<&RunStats> = runs.iter().filter(|r| r.activation.is_temporal()).collect();
    let (w, h, m) = (520.0, 300.0, 50.0);
    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0, 20.0, "middle", "relative variance of mu per epoch (blue RF, red uniform)");
    let max_e = rs.iter().map(|r| r.epochs.len()).max().unwrap_or(1).max(2) - 1;
    let (_, hi) = span(rs.iter().flat_map(|r| r.epochs.iter().map(|e| e.mu_relative_variance)));
    svg.line(m, h - m, w - m, h - m, "black");
    svg.line(m, m, m, h - m, "black");
    svg.text(m - 4.0, m + 4.0, "end", &format!("{hi:.2e}"));
    svg.text(w - m, h - m + 16.0, "end", &format!("epoch {max_e}"));
    for r in rs {
        let pts: Vec<(f64, f64)> = r
            .epochs
            .iter()
            .map(|e| (m + e.epoch as f64 / max_e as f64 * (w - 2.0 * m), h - m - e.mu_relative_variance / hi * (h - 2.0 * m)))
            .collect();
        svg.polyline(&pts, color(r.init));
    }
    svg.finish()
}

/// Effect-size CSV plus three figures into `out`.
pub fn write_report(runs: &[RunStats], out: &Path) -> Result<Vec<EffectRow>> {
    fs::create_dir_all(out).map_err(|e| StrfError::io(out, e))?;
    let rows = effect_sizes(runs);
    write_effect_csv(&out.join("effect_sizes.csv"), &rows)?;
    for (name, svg) in [
        ("final_loss.svg", strip_plot_svg(runs)),
        ("per_bin_loss.svg", per_bin_svg(runs)),
        ("mu_relative_variance.svg", mu_trajectory_svg(runs)),
    ] {
        let p = out.join(name);
        fs::write(&p, svg).map_err(|e| StrfError::io(&p, e))?;
    }
    Ok(rows)
}
