//! Affine Gaussian derivative receptive fields over the image plane.
//!
//! Coordinates follow the image convention: `x` runs along columns (to the
//! right) and `y` along rows (downwards). An orientation `phi` is the angle of
//! the major eigendirection measured from `+x` towards `+y`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StrfError};

/// Symmetric positive definite 2x2 covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariance2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Covariance2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Result<Self> {
        let c = Covariance2 { xx, xy, yy };
        if !(xx > 0.0 && yy > 0.0 && c.det() > 0.0) || !(xx.is_finite() && xy.is_finite() && yy.is_finite()) {
            return Err(StrfError::domain(format!(
                "covariance [[{xx}, {xy}], [{xy}, {yy}]] is not positive definite"
            )));
        }
        Ok(c)
    }

    pub fn identity() -> Self {
        Covariance2 { xx: 1.0, xy: 0.0, yy: 1.0 }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn inverse(&self) -> Covariance2 {
        let d = self.det();
        Covariance2 {
            xx: self.yy / d,
            xy: -self.xy / d,
            yy: self.xx / d,
        }
    }

    /// Eigen-decomposition `(lambda_major, lambda_minor, phi)` with `phi` in `[0, pi)`.
    pub fn eigen(&self) -> (f64, f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let radius = half_diff.hypot(self.xy);
        let major = mean + radius;
        // Smaller root via the determinant avoids cancellation.
        let minor = self.det() / major;
        let mut phi = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        if phi < 0.0 {
            phi += PI;
        }
        if phi >= PI {
            phi -= PI;
        }
        (major, minor, phi)
    }

    /// Push the covariance through a linear map: `A Sigma A^T`.
    pub fn transformed(&self, a: &[[f64; 2]; 2]) -> Covariance2 {
        // A * Sigma
        let m00 = a[0][0] * self.xx + a[0][1] * self.xy;
        let m01 = a[0][0] * self.xy + a[0][1] * self.yy;
        let m10 = a[1][0] * self.xx + a[1][1] * self.xy;
        let m11 = a[1][0] * self.xy + a[1][1] * self.yy;
        Covariance2 {
            xx: m00 * a[0][0] + m01 * a[0][1],
            xy: m00 * a[1][0] + m01 * a[1][1],
            yy: m10 * a[1][0] + m11 * a[1][1],
        }
    }

    /// Quadratic form `p^T Sigma^{-1} p`.
    pub fn mahalanobis_sq(&self, x: f64, y: f64) -> f64 {
        let inv = self.inverse();
        inv.xx * x * x + 2.0 * inv.xy * x * y + inv.yy * y * y
    }
}

/// `Sigma = R(phi) diag(sigma_major^2, sigma_minor^2) R(phi)^T`.
pub fn make_covariance(sigma_major: f64, sigma_minor: f64, phi: f64) -> Result<Covariance2> {
    if !(sigma_minor > 0.0) || !(sigma_major >= sigma_minor) || !phi.is_finite() {
        return Err(StrfError::domain(format!(
            "need sigma_major >= sigma_minor > 0, got ({sigma_major}, {sigma_minor})"
        )));
    }
    let (s, c) = phi.sin_cos();
    let a = sigma_major * sigma_major;
    let b = sigma_minor * sigma_minor;
    Ok(Covariance2 {
        xx: a * c * c + b * s * s,
        xy: (a - b) * c * s,
        yy: a * s * s + b * c * c,
    })
}

/// Parametric description of one scale-normalised affine Gaussian derivative kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub orientation: f64,
    pub sigma_major: f64,
    pub sigma_minor: f64,
    pub deriv_major: u8,
    pub deriv_minor: u8,
    /// Image velocity in pixels per time unit; only used by the joint engine.
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl KernelSpec {
    pub fn gaussian(sigma_major: f64, sigma_minor: f64, orientation: f64) -> Self {
        KernelSpec {
            orientation,
            sigma_major,
            sigma_minor,
            deriv_major: 0,
            deriv_minor: 0,
            velocity: [0.0, 0.0],
        }
    }

    pub fn with_derivative(mut self, deriv_major: u8, deriv_minor: u8) -> Self {
        self.deriv_major = deriv_major;
        self.deriv_minor = deriv_minor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_minor > 0.0 && self.sigma_major >= self.sigma_minor) {
            return Err(StrfError::domain(format!(
                "kernel needs sigma_major >= sigma_minor > 0, got ({}, {})",
                self.sigma_major, self.sigma_minor
            )));
        }
        if self.deriv_major + self.deriv_minor > 2 {
            return Err(StrfError::domain(format!(
                "derivative order {}+{} exceeds 2",
                self.deriv_major, self.deriv_minor
            )));
        }
        if !self.orientation.is_finite() || !self.velocity.iter().all(|v| v.is_finite()) {
            return Err(StrfError::domain("kernel orientation and velocity must be finite"));
        }
        Ok(())
    }

    pub fn covariance(&self) -> Result<Covariance2> {
        make_covariance(self.sigma_major, self.sigma_minor, self.orientation)
    }

    pub fn order(&self) -> u8 {
        self.deriv_major + self.deriv_minor
    }

    /// Continuous kernel value at `(x, y)` relative to the kernel centre.
    ///
    /// Directional derivatives are taken analytically: with `xi`/`eta` the
    /// coordinates along the eigendirections, the scale-normalised derivative
    /// of the Gaussian is `g * (-1)^(m1+m2) He_m1(xi/s1) He_m2(eta/s2)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.orientation.sin_cos();
        let xi = (c * x + s * y) / self.sigma_major;
        let eta = (-s * x + c * y) / self.sigma_minor;
        let g = (-(xi * xi + eta * eta) / 2.0).exp() / (2.0 * PI * self.sigma_major * self.sigma_minor);
        let sign = if self.order() % 2 == 0 { 1.0 } else { -1.0 };
        sign * g * hermite(self.deriv_major, xi) * hermite(self.deriv_minor, eta)
    }
}

/// Probabilists' Hermite polynomial `He_n`.
fn hermite(n: u8, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        2 => x * x - 1.0,
        _ => {
            let (mut a, mut b) = (1.0, x);
            for k in 1..n {
                let next = x * b - f64::from(k) * a;
                a = b;
                b = next;
            }
            b
        }
    }
}

/// A kernel sampled onto an odd-sized pixel grid (row-major weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteKernel {
    pub weights: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub spec: KernelSpec,
    /// Set when the grid does not contain the +-3 sigma support.
    pub truncated: bool,
}

impl DiscreteKernel {
    /// Single-tap identity kernel.
    pub fn identity() -> Self {
        DiscreteKernel {
            weights: vec![1.0],
            height: 1,
            width: 1,
            spec: KernelSpec::gaussian(1.0, 1.0, 0.0),
            truncated: true,
        }
    }

    pub fn from_weights(weights: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        if height % 2 == 0 || width % 2 == 0 || weights.len() != height * width {
            return Err(StrfError::domain(format!(
                "kernel grid must be odd-sized and match weight count, got {height}x{width} with {} weights",
                weights.len()
            )));
        }
        Ok(DiscreteKernel {
            weights,
            height,
            width,
            spec: KernelSpec::gaussian(1.0, 1.0, 0.0),
            truncated: false,
        })
    }

    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Sample `spec` on an odd `(h, w)` grid by averaging `supersample^2` point
/// evaluations per pixel. Zeroth-order kernels are renormalised to unit sum;
/// derivative kernels keep their truncated tails so odd orders stay zero-sum.
pub fn sample_kernel(spec: &KernelSpec, grid: (usize, usize), supersample: usize) -> Result<DiscreteKernel> {
    spec.validate()?;
    let (h, w) = grid;
    if h % 2 == 0 || w % 2 == 0 {
        return Err(StrfError::domain(format!("kernel grid must be odd, got {h}x{w}")));
    }
    if supersample == 0 {
        return Err(StrfError::domain("supersample must be at least 1"));
    }
    let cov = spec.covariance()?;
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let ss = supersample as f64;
    let mut weights = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for i in 0..supersample {
                let dy = (i as f64 + 0.5) / ss - 0.5;
                for j in 0..supersample {
                    let dx = (j as f64 + 0.5) / ss - 0.5;
                    acc += spec.eval(col as f64 - cx + dx, row as f64 - cy + dy);
                }
            }
            weights.push(acc / (ss * ss));
        }
    }
    if spec.order() == 0 {
        let total: f64 = weights.iter().sum();
        for v in &mut weights {
            *v /= total;
        }
    }
    let truncated = cx < 3.0 * cov.xx.sqrt() || cy < 3.0 * cov.yy.sqrt();
    Ok(DiscreteKernel {
        weights,
        height: h,
        width: w,
        spec: *spec,
        truncated,
    })
}

/// Grid dimensions of a [`KernelBank`], outermost first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankLayout {
    pub n_orientations: usize,
    pub n_scales: usize,
    pub n_skews: usize,
    pub n_deriv_families: usize,
}

impl BankLayout {
    pub fn len(&self) -> usize {
        self.n_orientations * self.n_scales * self.n_skews * self.n_deriv_families
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, orientation: usize, scale: usize, skew: usize, family: usize) -> usize {
        ((orientation * self.n_scales + scale) * self.n_skews + skew) * self.n_deriv_families + family
    }
}

/// Parameters of a bank; `Default` is the canonical 4 x 4 x 3 x 3 = 144 bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankParams {
    pub n_orientations: usize,
    pub scales: Vec<f64>,
    /// Ratios `sigma_minor / sigma_major`.
    pub skews: Vec<f64>,
    pub deriv_families: Vec<(u8, u8)>,
    pub grid: usize,
    pub supersample: usize,
}

impl Default for BankParams {
    fn default() -> Self {
        BankParams {
            n_orientations: 4,
            scales: vec![1.0, 2.0, 4.0, 8.0],
            skews: vec![1.0, 0.5, 0.25],
            deriv_families: vec![(0, 0), (1, 0), (0, 1)],
            grid: 9,
            supersample: 4,
        }
    }
}

impl BankParams {
    /// Adds the mixed second-order family `(1, 1)`.
    pub fn with_mixed_second_order(mut self) -> Self {
        if !self.deriv_families.contains(&(1, 1)) {
            self.deriv_families.push((1, 1));
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub kernels: Vec<DiscreteKernel>,
    pub layout: BankLayout,
}

impl KernelBank {
    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn grid(&self) -> (usize, usize) {
        self.kernels.first().map_or((0, 0), |k| (k.height, k.width))
    }
}

/// One kernel per cell of orientations x scales x skews x families, in that
/// nesting order. Orientations are spread uniformly over `[0, pi)`.
pub fn build_bank(params: &BankParams) -> Result<KernelBank> {
    if params.n_orientations == 0
        || params.scales.is_empty()
        || params.skews.is_empty()
        || params.deriv_families.is_empty()
    {
        return Err(StrfError::domain("kernel bank parameter lists must be non-empty"));
    }
    if let Some(s) = params.skews.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
        return Err(StrfError::domain(format!("skew {s} outside (0, 1]")));
    }
    let layout = BankLayout {
        n_orientations: params.n_orientations,
        n_scales: params.scales.len(),
        n_skews: params.skews.len(),
        n_deriv_families: params.deriv_families.len(),
    };
    let specs: Vec<KernelSpec> = (0..layout.len())
        .map(|flat| {
            let family = flat % layout.n_deriv_families;
            let skew = (flat / layout.n_deriv_families) % layout.n_skews;
            let scale = (flat / (layout.n_deriv_families * layout.n_skews)) % layout.n_scales;
            let orient = flat / (layout.n_deriv_families * layout.n_skews * layout.n_scales);
            let sigma = params.scales[scale];
            let (m1, m2) = params.deriv_families[family];
            KernelSpec::gaussian(sigma, sigma * params.skews[skew], orient as f64 * PI / params.n_orientations as f64)
                .with_derivative(m1, m2)
        })
        .collect();
    let kernels = specs
        .par_iter()
        .map(|spec| sample_kernel(spec, (params.grid, params.grid), params.supersample))
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelBank { kernels, layout })
}

#[derive(Debug, Serialize, Deserialize)]
struct BankHeader {
    format: String,
    layout: BankLayout,
    specs: Vec<KernelSpec>,
    grid_size: [usize; 2],
    dtype: String,
    endianness: String,
}

pub const BANK_FORMAT: &str = "strf-kernel-bank/1";

/// Write a bank as one line of JSON header followed by a little-endian f32 blob.
pub fn write_bank(bank: &KernelBank, path: &Path) -> Result<()> {
    let (h, w) = bank.grid();
    let header = BankHeader {
        format: BANK_FORMAT.to_string(),
        layout: bank.layout,
        specs: bank.kernels.iter().map(|k| k.spec).collect(),
        grid_size: [h, w],
        dtype: "f32".into(),
        endianness: "little".into(),
    };
    let file = File::create(path).map_err(|e| StrfError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        for k in &bank.kernels {
            for v in &k.weights {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        out.flush()
    };
    write(&mut out).map_err(|e| StrfError::io(path, e))
}

pub fn read_bank(path: &Path) -> Result<KernelBank> {
    let file = File::open(path).map_err(|e| StrfError::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line).map_err(|e| StrfError::io(path, e))?;
    let header: BankHeader = serde_json::from_slice(&line)?;
    if header.dtype != "f32" || header.endianness != "little" {
        return Err(StrfError::format(path, "only little-endian f32 banks are supported"));
    }
    let [h, w] = header.grid_size;
    let mut blob = Vec::new();
    input.read_to_end(&mut blob).map_err(|e| StrfError::io(path, e))?;
    if blob.len() != header.specs.len() * h * w * 4 || header.specs.len() != header.layout.len() {
        return Err(StrfError::format(path, "blob size does not match header"));
    }
    let kernels = header
        .specs
        .iter()
        .zip(blob.chunks_exact(h * w * 4))
        .map(|(spec, chunk)| {
            let weights = chunk
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            let cov = spec.covariance().unwrap_or_else(|_| Covariance2::identity());
            DiscreteKernel {
                weights,
                height: h,
                width: w,
                spec: *spec,
                truncated: ((w / 2) as f64) < 3.0 * cov.xx.sqrt() || ((h / 2) as f64) < 3.0 * cov.yy.sqrt(),
            }
        })
        .collect();
    Ok(KernelBank {
        kernels,
        layout: header.layout,
    })
}

/// Grid of kernels as an SVG heat map, one tile per kernel.
pub fn bank_svg(bank: &KernelBank) -> String {
    let (h, w) = bank.grid();
    let cols = bank.layout.n_deriv_families * bank.layout.n_skews;
    let rows = bank.len().div_ceil(cols.max(1));
    let cell = 6.0;
    let pad = 4.0;
    let tile_w = w as f64 * cell + pad;
    let tile_h = h as f64 * cell + pad;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n<rect width=\"100%\" height=\"100%\" fill=\"#808080\"/>\n",
        cols as f64 * tile_w + pad,
        rows as f64 * tile_h + pad
    );
    for (n, k) in bank.kernels.iter().enumerate() {
        let peak = k.weights.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let (ox, oy) = ((n % cols) as f64 * tile_w + pad, (n / cols) as f64 * tile_h + pad);
        for r in 0..h {
            for c in 0..w {
                let level = (127.5 + 127.5 * k.at(r, c) / peak).round() as u8;
                svg.push_str(&format!(
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({level},{level},{level})\"/>\n",
                    ox + c as f64 * cell,
                    oy + r as f64 * cell
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}
