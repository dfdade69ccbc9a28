//! Anti-aliased contour rendering of the three tracked shapes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::engine::FrameTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Triangle,
    Square,
    Circle,
}

impl Shape {
    /// Label order used throughout: triangle, square, circle.
    pub const ALL: [Shape; 3] = [Shape::Triangle, Shape::Square, Shape::Circle];

    /// Distance from the centroid to the farthest boundary point for `size`
    /// (triangle side, square side, circle diameter).
    pub fn circumradius(self, size: f64) -> f64 {
        match self {
            Shape::Triangle => size / 3f64.sqrt(),
            Shape::Square => size / 2f64.sqrt(),
            Shape::Circle => size / 2.0,
        }
    }

    fn vertices(self, pose: &Pose) -> Vec<(f64, f64)> {
        let (n, r) = match self {
            Shape::Triangle => (3, self.circumradius(pose.size)),
            Shape::Square => (4, self.circumradius(pose.size)),
            Shape::Circle => return Vec::new(),
        };
        (0..n)
            .map(|k| {
                let a = pose.angle + 2.0 * PI * k as f64 / n as f64;
                (pose.cx + r * a.cos(), pose.cy + r * a.sin())
            })
            .collect()
    }

    /// Unsigned distance from `(x, y)` to the shape boundary.
    pub fn boundary_distance(self, pose: &Pose, x: f64, y: f64) -> f64 {
        Outline::new(self, pose).distance(x, y)
    }
}

/// Boundary of one posed shape, with polygon vertices precomputed.
struct Outline {
    centre: (f64, f64),
    radius: f64,
    vertices: Vec<(f64, f64)>,
}

impl Outline {
    fn new(shape: Shape, pose: &Pose) -> Self {
        Outline { centre: (pose.cx, pose.cy), radius: pose.size / 2.0, vertices: shape.vertices(pose) }
    }

    fn distance(&self, x: f64, y: f64) -> f64 {
        let v = &self.vertices;
        if v.is_empty() {
            return ((x - self.centre.0).hypot(y - self.centre.1) - self.radius).abs();
        }
        (0..v.len())
            .map(|i| segment_distance(v[i], v[(i + 1) % v.len()], x, y))
            .fold(f64::INFINITY, f64::min)
    }
}

fn segment_distance(a: (f64, f64), b: (f64, f64), x: f64, y: f64) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (x - a.0 - t * dx).hypot(y - a.1 - t * dy)
}

/// Centre, size and orientation of one shape in output-pixel coordinates
/// (pixel `(i, j)` is centred on `x = j`, `y = i`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeTrack {
    pub shape: Shape,
    pub poses: Vec<Pose>,
}

/// Normalised tent weights mapping `ss` high-resolution samples per output
/// pixel onto output pixel `j`; returns `(first_hi_index, weights)`.
fn tent_weights(j: isize, ss: usize) -> (isize, Vec<f64>) {
    let s = ss as f64;
    let centre = (j as f64 + 0.5) * s;
    let first = j * ss as isize - ss as isize;
    let weights: Vec<f64> = (0..3 * ss)
        .map(|k| {
            let a = (first + k as isize) as f64 + 0.5;
            (1.0 - (a - centre).abs() / s).max(0.0)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    (first, weights.into_iter().map(|w| w / total).collect())
}

/// Tent-filter downsample of an `hh x hw` image by an integer factor `ss`;
/// samples outside the image are dropped and the weights renormalised.
pub fn downsample(hi: &[f64], hh: usize, hw: usize, ss: usize) -> Vec<f64> {
    let (h, w) = (hh / ss, hw / ss);
    let axis = |n_out: usize, n_in: usize| -> Vec<Vec<(usize, f64)>> {
        (0..n_out)
            .map(|j| {
                let (first, wts) = tent_weights(j as isize, ss);
                let taps: Vec<(usize, f64)> = wts
                    .iter()
                    .enumerate()
                    .filter_map(|(k, wt)| {
                        let idx = first + k as isize;
                        (idx >= 0 && (idx as usize) < n_in && *wt > 0.0).then_some((idx as usize, *wt))
                    })
                    .collect();
                let total: f64 = taps.iter().map(|t| t.1).sum();
                taps.into_iter().map(|(i, wt)| (i, wt / total)).collect()
            })
            .collect()
    };
    let (ax, ay) = (axis(w, hw), axis(h, hh));
    let mut rows = vec![0.0; hh * w];
    for r in 0..hh {
        for (j, taps) in ax.iter().enumerate() {
            rows[r * w + j] = taps.iter().map(|(i, wt)| wt * hi[r * hw + i]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for (i, taps) in ay.iter().enumerate() {
        for j in 0..w {
            out[i * w + j] = taps.iter().map(|(r, wt)| wt * rows[r * w + j]).sum();
        }
    }
    out
}

/// Render one shape contour (stroke 1 output pixel) into `frame` (`h x w`)
/// by max-compositing, sampling at `ss x` resolution and tent-downsampling.
pub fn draw_shape(frame: &mut [f64], h: usize, w: usize, ss: usize, shape: Shape, pose: &Pose) {
    let reach = shape.circumradius(pose.size) + 2.5;
    let x0 = ((pose.cx - reach).floor() as isize).max(0);
    let x1 = ((pose.cx + reach).ceil() as isize).min(w as isize - 1);
    let y0 = ((pose.cy - reach).floor() as isize).max(0);
    let y1 = ((pose.cy + reach).ceil() as isize).min(h as isize - 1);
    if x0 > x1 || y0 > y1 {
        return;
    }
    // High-resolution tile covering the tent support of every output pixel in range.
    let s = ss as f64;
    let hx0 = (x0 - 1) * ss as isize;
    let hy0 = (y0 - 1) * ss as isize;
    let tw = ((x1 - x0 + 3) as usize) * ss;
    let th = ((y1 - y0 + 3) as usize) * ss;
    let mut tile = vec![0.0; tw * th];
    let outline = Outline::new(shape, pose);
    // Coarse pass: skip output cells whose centre is far from the contour.
    let cw = (x1 - x0 + 3) as usize;
    let ch = (y1 - y0 + 3) as usize;
    let near: Vec<bool> = (0..ch * cw)
        .map(|i| {
            let (cx, cy) = ((i % cw) as isize + x0 - 1, (i / cw) as isize + y0 - 1);
            outline.distance(cx as f64, cy as f64) <= 0.5 + std::f64::consts::FRAC_1_SQRT_2 + 0.5 / s
        })
        .collect();
    for ty in 0..th {
        let cell_y = ty / ss;
        let y = (hy0 + ty as isize) as f64 / s + 0.5 / s - 0.5;
        for tx in 0..tw {
            if !near[cell_y * cw + tx / ss] {
                continue;
            }
            let x = (hx0 + tx as isize) as f64 / s + 0.5 / s - 0.5;
            let d = outline.distance(x, y) * s;
            tile[ty * tw + tx] = (s / 2.0 + 0.5 - d).clamp(0.0, 1.0);
        }
    }
    // Separable tent downsample of the tile.
    let out_w = (x1 - x0 + 1) as usize;
    let mut rows = vec![0.0; th * out_w];
    for j in 0..out_w {
        let (first, wts) = tent_weights(x0 + j as isize, ss);
        let offset = (first - hx0) as usize;
        for ty in 0..th {
            let row = &tile[ty * tw..(ty + 1) * tw];
            rows[ty * out_w + j] = wts.iter().zip(&row[offset..offset + wts.len()]).map(|(a, b)| a * b).sum();
        }
    }
    for i in 0..=(y1 - y0) as usize {
        let (first, wts) = tent_weights(y0 + i as isize, ss);
        let offset = (first - hy0) as usize;
        for j in 0..out_w {
            let v: f64 = wts.iter().enumerate().map(|(k, a)| a * rows[(offset + k) * out_w + j]).sum();
            let px = &mut frame[(y0 as usize + i) * w + x0 as usize + j];
            *px = px.max(v);
        }
    }
}

/// Render every frame of `tracks` as a `[T, 1, h, w]` tensor with unit time step.
pub fn render_frames(tracks: &[ShapeTrack], h: usize, w: usize, ss: usize) -> FrameTensor {
    let steps = tracks.iter().map(|t| t.poses.len()).max().unwrap_or(0);
    let mut frames = FrameTensor::zeros(steps, 1, h, w, 1.0);
    for t in 0..steps {
        let frame = frames.frame_mut(t, 0);
        for track in tracks {
            if let Some(pose) = track.poses.get(t) {
                draw_shape(frame, h, w, ss, track.shape, pose);
            }
        }
    }
    frames
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tent_weights_are_normalised() {
        for ss in [1, 2, 8] {
            let (_, w) = tent_weights(5, ss);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn circle_contour_is_symmetric() {
        let (h, w) = (41, 41);
        let mut f = vec![0.0; h * w];
        let pose = Pose { cx: 20.0, cy: 20.0, size: 20.0, angle: 0.0 };
        draw_shape(&mut f, h, w, 8, Shape::Circle, &pose);
        // Stroke centred on radius 10; the tent filter caps a 1 px stroke at 3/4.
        assert!(f[20 * w + 30] > 0.7 && f[20 * w + 30] <= 0.75 + 1e-9);
        assert!(f[20 * w + 20] < 1e-12);
        for (a, b) in [(20 * w + 30, 20 * w + 10), (30 * w + 20, 10 * w + 20), (20 * w + 30, 30 * w + 20)] {
            assert_abs_diff_eq!(f[a], f[b], epsilon = 1e-9);
        }
        assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn distances() {
        let pose = Pose { cx: 0.0, cy: 0.0, size: 2.0, angle: PI / 4.0 };
        // Axis-aligned unit square of side 2.
        assert_abs_diff_eq!(Shape::Square.boundary_distance(&pose, 0.0, 0.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(Shape::Square.boundary_distance(&pose, 3.0, 0.0), 2.0, epsilon = 1e-12);
        let tri = Pose { cx: 0.0, cy: 0.0, size: 3f64.sqrt() * 2.0, angle: 0.0 };
        // Inradius of an equilateral triangle with circumradius 2 is 1.
        assert_abs_diff_eq!(Shape::Triangle.boundary_distance(&tri, 0.0, 0.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn downsample_commutes_with_intensity_scaling() {
        let hi: Vec<f64> = (0..32 * 32).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
        let scaled: Vec<f64> = hi.iter().map(|v| 0.37 * v).collect();
        let a = downsample(&hi, 32, 32, 2);
        let b = downsample(&scaled, 32, 32, 2);
        assert_eq!(a.len(), 256);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(0.37 * x, *y, epsilon = 1e-15);
        }
        let flat = downsample(&vec![0.6; 64 * 64], 64, 64, 8);
        assert!(flat.iter().all(|v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn stroke_ink_matches_perimeter() {
        let (h, w) = (24, 24);
        let pose = Pose { cx: 11.3, cy: 12.7, size: 10.0, angle: 0.3 };
        let mut a = vec![0.0; h * w];
        draw_shape(&mut a, h, w, 2, Shape::Triangle, &pose);
        let total: f64 = a.iter().sum();
        // A one-pixel stroke deposits about one unit of ink per unit of perimeter.
        assert!((total - 30.0).abs() < 3.0, "ink {total}");
    }
}
