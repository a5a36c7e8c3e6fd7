//! A small RGB rasterizer for panels and plots.

use image::{Rgb, RgbImage};
use icreg_core::autodiff::Tensor;

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
pub const GRID: Rgb<u8> = Rgb([255, 64, 64]);
pub const AXIS: Rgb<u8> = Rgb([90, 90, 90]);

/// Distinct series colors.
pub const PALETTE: [Rgb<u8>; 9] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([227, 119, 194]),
    Rgb([127, 127, 127]),
    Rgb([23, 190, 207]),
];

pub struct Canvas {
    pub img: RgbImage,
}

impl Canvas {
    pub fn new(w: u32, h: u32, bg: Rgb<u8>) -> Self {
        Self {
            img: RgbImage::from_pixel(w, h, bg),
        }
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, w: i64, h: i64, c: Rgb<u8>) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.put(x, y, c);
            }
        }
    }

    /// Bresenham line between two points.
    pub fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
            return;
        }
        let (mut x, mut y) = (x0.round() as i64, y0.round() as i64);
        let (xe, ye) = (x1.round() as i64, y1.round() as i64);
        let (dx, dy) = ((xe - x).abs(), -(ye - y).abs());
        let (sx, sy) = (if x < xe { 1 } else { -1 }, if y < ye { 1 } else { -1 });
        let mut err = dx + dy;
        // guards against runaway loops on huge coordinates
        for _ in 0..=(dx - dy).min(100_000) {
            self.put(x, y, c);
            if x == xe && y == ye {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], c: Rgb<u8>) {
        for w in pts.windows(2) {
            self.line(w[0], w[1], c);
        }
    }

    /// Blits a `[0,1]` image with integer upscaling at `(x0, y0)`.
    pub fn blit_gray(&mut self, img: &Tensor, x0: i64, y0: i64, zoom: i64) {
        let (h, w) = (img.shape()[0], img.shape()[1]);
        for i in 0..h {
            for j in 0..w {
                let v = (img.data()[i * w + j].clamp(0.0, 1.0) * 255.0).round() as u8;
                self.fill_rect(x0 + j as i64 * zoom, y0 + i as i64 * zoom, zoom, zoom, Rgb([v, v, v]));
            }
        }
    }

    /// Draws a deformed grid given a position field `[h,w,2]` in normalized
    /// units: every `step`-th row and column of pixel centers, joined.
    pub fn deformed_grid(&mut self, field: &Tensor, x0: i64, y0: i64, zoom: i64, step: usize, c: Rgb<u8>) {
        let (h, w) = (field.shape()[0], field.shape()[1]);
        let d = field.data();
        let at = |i: usize, j: usize| {
            let k = (i * w + j) * 2;
            (x0 as f64 + d[k] * (w as i64 * zoom) as f64, y0 as f64 + d[k + 1] * (h as i64 * zoom) as f64)
        };
        for i in (0..h).step_by(step) {
            let row: Vec<_> = (0..w).map(|j| at(i, j)).collect();
            self.polyline(&row, c);
        }
        for j in (0..w).step_by(step) {
            let col: Vec<_> = (0..h).map(|i| at(i, j)).collect();
            self.polyline(&col, c);
        }
    }
}

/// Plot frame mapping data coordinates to pixels.
pub struct Frame {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Frame {
    pub fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let fx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        let fy = (y - self.y_range.0) / (self.y_range.1 - self.y_range.0);
        (self.left + fx * self.width, self.top + (1.0 - fy) * self.height)
    }

    pub fn axes(&self, c: &mut Canvas) {
        let (l, t, r, b) = (self.left, self.top, self.left + self.width, self.top + self.height);
        c.line((l, b), (r, b), AXIS);
        c.line((l, t), (l, b), AXIS);
        for k in 0..=4 {
            let x = l + self.width * k as f64 / 4.0;
            let y = t + self.height * k as f64 / 4.0;
            c.line((x, b), (x, b + 4.0), AXIS);
            c.line((l - 4.0, y), (l, y), AXIS);
        }
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

/// Line plot of several `(x, y)` series, colored by `PALETTE` order, with a
/// swatch legend strip along the bottom.
pub fn line_plot(series: &[Vec<(f64, f64)>], width: u32, height: u32) -> RgbImage {
    let mut c = Canvas::new(width, height, WHITE);
    let frame = Frame {
        left: 40.0,
        top: 20.0,
        width: width as f64 - 60.0,
        height: height as f64 - 70.0,
        x_range: padded_range(series.iter().flatten().map(|p| p.0)),
        y_range: padded_range(series.iter().flatten().map(|p| p.1)),
    };
    frame.axes(&mut c);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<_> = s.iter().map(|&(x, y)| frame.to_px(x, y)).collect();
        c.polyline(&pts, color);
        c.fill_rect(40 + 20 * k as i64, height as i64 - 25, 14, 10, color);
    }
    c.img
}

/// One violin per group: a mirrored histogram of the values with the median
/// marked in black.
pub fn violin_plot(groups: &[Vec<f64>], width: u32, height: u32) -> RgbImage {
    let mut c = Canvas::new(width, height, WHITE);
    let n = groups.len().max(1);
    let frame = Frame {
        left: 40.0,
        top: 20.0,
        width: width as f64 - 60.0,
        height: height as f64 - 70.0,
        x_range: (0.0, n as f64),
        y_range: padded_range(groups.iter().flatten().copied()),
    };
    frame.axes(&mut c);
    const BINS: usize = 24;
    let slot = frame.width / n as f64;
    for (k, g) in groups.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let vals: Vec<f64> = g.iter().copied().filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            continue;
        }
        let (lo, hi) = frame.y_range;
        let mut hist = [0usize; BINS];
        for v in &vals {
            let b = (((v - lo) / (hi - lo)) * BINS as f64).floor().clamp(0.0, (BINS - 1) as f64) as usize;
            hist[b] += 1;
        }
        let peak = *hist.iter().max().expect("bins") as f64;
        let cx = frame.left + slot * (k as f64 + 0.5);
        for (b, &count) in hist.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let half = 0.4 * slot * count as f64 / peak;
            let y0 = frame.to_px(0.0, lo + (hi - lo) * b as f64 / BINS as f64).1;
            let y1 = frame.to_px(0.0, lo + (hi - lo) * (b + 1) as f64 / BINS as f64).1;
            c.fill_rect((cx - half) as i64, y1 as i64, (2.0 * half).max(1.0) as i64, (y0 - y1).max(1.0) as i64, color);
        }
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        let (_, my) = frame.to_px(0.0, sorted[sorted.len() / 2]);
        c.line((cx - 0.4 * slot, my), (cx + 0.4 * slot, my), BLACK);
        c.fill_rect(40 + 20 * k as i64, height as i64 - 25, 14, 10, color);
    }
    c.img
}
