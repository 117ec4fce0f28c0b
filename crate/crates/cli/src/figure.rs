//! Minimal raster figures written as binary PPM.
//!
//! File format (what [`parse_ppm`] accepts and nothing else):
//!
//! ```text
//! P6\n
//! # wam figure v1\n
//! <width> <height>\n
//! 255\n
//! <width * height * 3 bytes, row-major RGB>
//! ```

use wam_core::experts::{DepthMap, Trajectory};
use wam_core::microworld::Scene;

pub const FIGURE_HEADER: &str = "# wam figure v1";

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];
pub const GREY: Rgb = [160, 160, 160];
pub const EXPERT: Rgb = [30, 160, 60];
pub const PREDICTED: Rgb = [220, 40, 40];
pub const ACTOR: Rgb = [60, 90, 200];

const PALETTE: [Rgb; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

pub fn palette(i: usize) -> Rgb {
    PALETTE[i % PALETTE.len()]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    pub w: usize,
    pub h: usize,
    pub px: Vec<Rgb>,
}

impl Canvas {
    pub fn new(w: usize, h: usize, bg: Rgb) -> Self {
        Self { w, h, px: vec![bg; w * h] }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.px[y * self.w + x]
    }

    pub fn set(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = c;
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.set(x, y, c);
            }
        }
    }

    pub fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    /// Copies `other` with its top-left corner at `(x, y)`.
    pub fn blit(&mut self, other: &Canvas, x: usize, y: usize) {
        for j in 0..other.h {
            for i in 0..other.w {
                self.set((x + i) as i64, (y + j) as i64, other.get(i, j));
            }
        }
    }

    pub fn upscale(&self, k: usize) -> Canvas {
        let mut c = Canvas::new(self.w * k, self.h * k, BLACK);
        for y in 0..c.h {
            for x in 0..c.w {
                c.px[y * c.w + x] = self.get(x / k, y / k);
            }
        }
        c
    }

    /// Places canvases left to right with a gap, top-aligned.
    pub fn hstack(parts: &[Canvas], gap: usize, bg: Rgb) -> Canvas {
        let w = parts.iter().map(|p| p.w).sum::<usize>() + gap * parts.len().saturating_sub(1);
        let h = parts.iter().map(|p| p.h).max().unwrap_or(0);
        let mut c = Canvas::new(w, h, bg);
        let mut x = 0;
        for p in parts {
            c.blit(p, x, 0);
            x += p.w + gap;
        }
        c
    }

    pub fn vstack(parts: &[Canvas], gap: usize, bg: Rgb) -> Canvas {
        let h = parts.iter().map(|p| p.h).sum::<usize>() + gap * parts.len().saturating_sub(1);
        let w = parts.iter().map(|p| p.w).max().unwrap_or(0);
        let mut c = Canvas::new(w, h, bg);
        let mut y = 0;
        for p in parts {
            c.blit(p, 0, y);
            y += p.h + gap;
        }
        c
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{FIGURE_HEADER}\n{} {}\n255\n", self.w, self.h).into_bytes();
        for p in &self.px {
            out.extend_from_slice(p);
        }
        out
    }
}

/// Strict reader for the format documented at the top of this module.
pub fn parse_ppm(bytes: &[u8]) -> Result<Canvas, String> {
    let mut pos = 0;
    let mut line = || -> Result<String, String> {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or("truncated header")?;
        let s = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| "header is not UTF-8")?.to_string();
        pos += end + 1;
        Ok(s)
    };
    if line()? != "P6" {
        return Err("missing P6 magic".into());
    }
    let version = line()?;
    if version != FIGURE_HEADER {
        return Err(format!("unsupported figure header `{version}`"));
    }
    let dims = line()?;
    let mut it = dims.split(' ');
    let mut dim = || -> Result<usize, String> {
        it.next().and_then(|v| v.parse().ok()).filter(|&v: &usize| v > 0).ok_or_else(|| format!("bad dimensions `{dims}`"))
    };
    let (w, h) = (dim()?, dim()?);
    if line()? != "255" {
        return Err("max value must be 255".into());
    }
    let body = &bytes[pos..];
    if body.len() != w * h * 3 {
        return Err(format!("expected {} pixel bytes, found {}", w * h * 3, body.len()));
    }
    Ok(Canvas { w, h, px: body.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() })
}

pub fn rgb_frame(data: &[f32], h: usize, w: usize) -> Canvas {
    let to = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut c = Canvas::new(w, h, BLACK);
    for (p, rgb) in c.px.iter_mut().zip(data.chunks_exact(3)) {
        *p = [to(rgb[0]), to(rgb[1]), to(rgb[2])];
    }
    c
}

/// Near is warm, far is cool; depths are truncated at `d_max` before mapping.
pub fn depth_color(d: f32, d_max: f32) -> Rgb {
    let u = (d.min(d_max).max(0.0) / d_max).sqrt();
    let stops: [(f32, [f32; 3]); 5] = [
        (0.0, [180.0, 4.0, 38.0]),
        (0.25, [244.0, 109.0, 67.0]),
        (0.5, [254.0, 224.0, 144.0]),
        (0.75, [116.0, 173.0, 209.0]),
        (1.0, [49.0, 54.0, 149.0]),
    ];
    let k = stops.iter().rposition(|s| s.0 <= u).unwrap_or(0).min(stops.len() - 2);
    let (a, b) = (stops[k], stops[k + 1]);
    let f = (u - a.0) / (b.0 - a.0);
    let mix = |i: usize| (a.1[i] + f * (b.1[i] - a.1[i])).round() as u8;
    [mix(0), mix(1), mix(2)]
}

pub fn depth_image(d: &DepthMap, d_max: f32) -> Canvas {
    let mut c = Canvas::new(d.w, d.h, BLACK);
    for (p, &v) in c.px.iter_mut().zip(&d.data) {
        *p = depth_color(v, d_max);
    }
    c
}

/// Top-down view in the ego frame at decision time.
///
/// Ego-frame `x` (forward) points up and `y` (left) points left:
/// `px = origin_x − y·scale`, `py = origin_y − x·scale`, rounded to the
/// nearest pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadProjection {
    pub w: usize,
    pub h: usize,
    pub scale: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl Default for OverheadProjection {
    fn default() -> Self {
        Self { w: 240, h: 320, scale: 5.0, origin_x: 120.0, origin_y: 300.0 }
    }
}

impl OverheadProjection {
    pub fn project(&self, x: f64, y: f64) -> (i64, i64) {
        ((self.origin_x - y * self.scale).round() as i64, (self.origin_y - x * self.scale).round() as i64)
    }
}

/// Lane edges, actors at the snapshot, expert and predicted states.
pub fn trajectory_overlay(scene: &Scene, expert: &Trajectory, predicted: &Trajectory, proj: &OverheadProjection) -> Canvas {
    let mut c = Canvas::new(proj.w, proj.h, WHITE);
    let local = |x: f64, y: f64| {
        let s = scene.ego.to_local(x, y, 0.0);
        proj.project(s.x as f64, s.y as f64)
    };
    for edge in [scene.left_edge(), scene.right_edge()] {
        let pts = edge.points();
        for w in pts.windows(2) {
            c.line(local(w[0][0], w[0][1]), local(w[1][0], w[1][1]), GREY);
        }
    }
    for a in &scene.actors {
        let corners = a.rect().corners();
        for k in 0..4 {
            let (p, q) = (corners[k], corners[(k + 1) % 4]);
            c.line(local(p[0], p[1]), local(q[0], q[1]), ACTOR);
        }
    }
    let (ex, ey) = proj.project(0.0, 0.0);
    c.fill_rect(ex - 2, ey - 4, ex + 2, ey + 4, BLACK);
    for (traj, color) in [(expert, EXPERT), (predicted, PREDICTED)] {
        let mut prev = (ex, ey);
        for s in &traj.states {
            let p = proj.project(s.x as f64, s.y as f64);
            c.line(prev, p, color);
            prev = p;
        }
        for s in &traj.states {
            let (x, y) = proj.project(s.x as f64, s.y as f64);
            c.fill_rect(x - 1, y - 1, x + 1, y + 1, color);
        }
    }
    c
}

fn frame_axes(c: &mut Canvas, m: i64) {
    let (w, h) = (c.w as i64, c.h as i64);
    c.line((m, m), (m, h - m), BLACK);
    c.line((m, h - m), (w - m, h - m), BLACK);
}

/// One polyline per series on shared linear axes.
pub fn line_plot(series: &[Vec<f64>], w: usize, h: usize) -> Canvas {
    let mut c = Canvas::new(w, h, WHITE);
    let m = 10i64;
    frame_axes(&mut c, m);
    let finite = || series.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = (finite().fold(f64::INFINITY, f64::min), finite().fold(f64::NEG_INFINITY, f64::max));
    if !lo.is_finite() {
        return c;
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (pw, ph) = ((w as i64 - 2 * m) as f64, (h as i64 - 2 * m) as f64);
    for (k, s) in series.iter().enumerate() {
        let n = s.len().max(2) - 1;
        let pts: Vec<(i64, i64)> = s
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| (m + (i as f64 / n as f64 * pw).round() as i64, h as i64 - m - ((v - lo) / span * ph).round() as i64))
            .collect();
        for p in pts.windows(2) {
            c.line(p[0], p[1], palette(k));
        }
    }
    c
}

/// Vertical bars from zero, one per value, colored by index.
pub fn bar_chart(values: &[f64], w: usize, h: usize) -> Canvas {
    let mut c = Canvas::new(w, h, WHITE);
    let m = 10i64;
    frame_axes(&mut c, m);
    let top = values.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    if values.is_empty() || top <= 0.0 {
        return c;
    }
    let slot = (w as i64 - 2 * m) / values.len() as i64;
    let ph = (h as i64 - 2 * m) as f64;
    for (k, &v) in values.iter().enumerate() {
        if !v.is_finite() || v <= 0.0 {
            continue;
        }
        let x0 = m + k as i64 * slot + slot / 5;
        let x1 = m + (k as i64 + 1) * slot - slot / 5;
        let y = h as i64 - m - (v / top * ph).round() as i64;
        c.fill_rect(x0, y, x1, h as i64 - m - 1, palette(k));
    }
    c
}

/// Trailing moving average with window `k`.
pub fn smooth(v: &[f64], k: usize) -> Vec<f64> {
    let k = k.max(1);
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(v.len());
    for i in 0..v.len() {
        acc += v[i];
        if i >= k {
            acc -= v[i - k];
        }
        out.push(acc / (i + 1).min(k) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut c = Canvas::new(3, 2, WHITE);
        c.set(1, 1, PREDICTED);
        let back = parse_ppm(&c.to_ppm()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn ppm_rejects_bad_input() {
        let good = Canvas::new(2, 2, BLACK).to_ppm();
        assert!(parse_ppm(&good[..good.len() - 1]).is_err());
        let other = String::from_utf8_lossy(&good).replace("v1", "v2");
        assert!(parse_ppm(other.as_bytes()).is_err());
        assert!(parse_ppm(b"P3\n").is_err());
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smooth(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn depth_colors_saturate_at_truncation() {
        assert_eq!(depth_color(80.0, 80.0), depth_color(500.0, 80.0));
        assert_ne!(depth_color(5.0, 80.0), depth_color(60.0, 80.0));
    }
}
