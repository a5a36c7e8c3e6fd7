use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, DatasetMeta, Image};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MIN_SIZE: usize = 32;

fn check_size(op: &'static str, size: usize) -> Result<()> {
    if size < MIN_SIZE {
        return Err(Error::invalid(op, format!("size must be at least {MIN_SIZE}, got {size}")));
    }
    Ok(())
}

/// Stroke of half-width `half` around an outline at unsigned distance `d`
/// (pixels), with a one-pixel linear anti-aliasing ramp.
fn stroke(d: f64, half: f64) -> f64 {
    (half + 0.5 - d).clamp(0.0, 1.0)
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Point-in-polygon by ray crossing.
fn inside(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut odd = false;
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]) {
            odd = !odd;
        }
    }
    odd
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Shape {
    Circle,
    Triangle,
}

/// Renders a hollow shape. Returns intensities, the filled mask, and the
/// outline anchors (pixel units).
pub(crate) fn render_shape(size: usize, shape: Shape, c: [f64; 2], r: f64, angle: f64, half: f64) -> (Vec<f64>, Vec<bool>, Vec<[f64; 2]>) {
    let anchors: Vec<[f64; 2]> = (0..3)
        .map(|k| {
            let t = angle + TAU * k as f64 / 3.0;
            [c[0] + r * t.cos(), c[1] + r * t.sin()]
        })
        .collect();
    let mut pix = Vec::with_capacity(size * size);
    let mut mask = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let p = [j as f64 + 0.5, i as f64 + 0.5];
            let (d, filled) = match shape {
                Shape::Circle => {
                    let rho = (p[0] - c[0]).hypot(p[1] - c[1]);
                    ((rho - r).abs(), rho <= r)
                }
                Shape::Triangle => {
                    let d = (0..3).map(|k| segment_distance(p, anchors[k], anchors[(k + 1) % 3])).fold(f64::MAX, f64::min);
                    (d, inside(p, &anchors))
                }
            };
            pix.push(stroke(d, half));
            mask.push(filled || d <= half);
        }
    }
    (pix, mask, anchors)
}

fn to_normalized(p: [f64; 2], size: usize) -> [f64; 2] {
    [p[0] / size as f64, p[1] / size as f64]
}

/// Hollow circles and equilateral triangles.
///
/// Centers lie in the middle 60% of the frame, radii in `[0.15, 0.35]` of
/// the width, strokes are 2–3 px wide. Draws are rejected until the shape
/// fits inside the frame with a one-pixel margin.
pub fn gen_tri_circ(count: usize, size: usize, seed: u64) -> Result<Dataset> {
    check_size("gen_tri_circ", size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut images = Vec::with_capacity(count);
    let mut classes = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = if rng.gen_bool(0.5) { Shape::Circle } else { Shape::Triangle };
        let width = rng.gen_range(2.0..=3.0);
        let half = width / 2.0;
        let (c, r) = loop {
            let c = [rng.gen_range(0.2..0.8) * s, rng.gen_range(0.2..0.8) * s];
            let r = rng.gen_range(0.15..0.35) * s;
            let reach = r + half + 1.0;
            if c[0] - reach >= 0.0 && c[0] + reach <= s && c[1] - reach >= 0.0 && c[1] + reach <= s {
                break (c, r);
            }
        };
        let angle = rng.gen_range(0.0..TAU);
        let (pix, mask, anchors) = render_shape(size, shape, c, r, angle, half);
        let mut img = Image::new(Tensor::new(&[size, size], pix)?)?;
        img.mask = Some(mask);
        img.landmarks = anchors.into_iter().map(|p| to_normalized(p, size)).collect();
        images.push(img);
        classes.push(match shape {
            Shape::Circle => "circle".to_string(),
            Shape::Triangle => "triangle".to_string(),
        });
    }
    Ok(Dataset {
        meta: DatasetMeta {
            count,
            size,
            seed,
            generator: "tri_circ".into(),
            classes,
        },
        images,
    })
}

fn bezier(p: &[[f64; 2]; 4], t: f64) -> [f64; 2] {
    let u = 1.0 - t;
    let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
    [
        a * p[0][0] + b * p[1][0] + c * p[2][0] + d * p[3][0],
        a * p[0][1] + b * p[1][1] + c * p[2][1] + d * p[3][1],
    ]
}

/// Closed curve through `anchors` (unit-square coordinates) as cubic
/// Bézier segments with Catmull-Rom tangents.
fn closed_curve(anchors: &[[f64; 2]]) -> Vec<[[f64; 2]; 4]> {
    let n = anchors.len();
    (0..n)
        .map(|k| {
            let (prev, a, b, next) = (anchors[(k + n - 1) % n], anchors[k], anchors[(k + 1) % n], anchors[(k + 2) % n]);
            let ta = [(b[0] - prev[0]) / 6.0, (b[1] - prev[1]) / 6.0];
            let tb = [(next[0] - a[0]) / 6.0, (next[1] - a[1]) / 6.0];
            [a, [a[0] + ta[0], a[1] + ta[1]], [b[0] - tb[0], b[1] - tb[1]], b]
        })
        .collect()
}

const BLOB_STROKE_PX: f64 = 2.5;
const CURVE_SAMPLES: usize = 24;

/// Digit-like closed strokes: 2–4 Bézier segments through random anchors.
///
/// The seed fixes one template curve; every image perturbs the anchors
/// slightly and applies a random rotation (±20°), translation (±2.5 px) and
/// scale (±5%), so images are related mostly by rigid motion.
pub fn gen_blob_digits(count: usize, size: usize, seed: u64) -> Result<Dataset> {
    check_size("gen_blob_digits", size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let segments = rng.gen_range(2..=4);
    let phase = rng.gen_range(0.0..TAU);
    let template: Vec<[f64; 2]> = (0..segments)
        .map(|k| {
            let t = phase + TAU * (k as f64 + rng.gen_range(-0.2..0.2)) / segments as f64;
            let rho = rng.gen_range(0.12..0.28);
            [rho * t.cos(), rho * t.sin()]
        })
        .collect();
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let rot = rng.gen_range(-20.0..20.0) * PI / 180.0;
        let scale = rng.gen_range(0.95..1.05);
        let shift = [rng.gen_range(-2.5..2.5) / s, rng.gen_range(-2.5..2.5) / s];
        let (cr, sr) = (rot.cos(), rot.sin());
        let anchors: Vec<[f64; 2]> = template
            .iter()
            .map(|p| {
                let q = [p[0] + rng.gen_range(-0.015..0.015), p[1] + rng.gen_range(-0.015..0.015)];
                [
                    0.5 + shift[0] + scale * (cr * q[0] - sr * q[1]),
                    0.5 + shift[1] + scale * (sr * q[0] + cr * q[1]),
                ]
            })
            .collect();
        let poly: Vec<[f64; 2]> = closed_curve(&anchors)
            .iter()
            .flat_map(|seg| (0..CURVE_SAMPLES).map(move |k| bezier(seg, k as f64 / CURVE_SAMPLES as f64)))
            .map(|p| [p[0] * s, p[1] * s])
            .collect();
        let mut pix = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let p = [j as f64 + 0.5, i as f64 + 0.5];
                let d = (0..poly.len()).map(|k| segment_distance(p, poly[k], poly[(k + 1) % poly.len()])).fold(f64::MAX, f64::min);
                pix.push(stroke(d, BLOB_STROKE_PX / 2.0));
            }
        }
        let mask = pix.iter().map(|&v| v >= 0.5).collect();
        let mut img = Image::new(Tensor::new(&[size, size], pix)?)?;
        img.mask = Some(mask);
        img.landmarks = anchors;
        images.push(img);
    }
    Ok(Dataset {
        meta: DatasetMeta {
            count,
            size,
            seed,
            generator: "blob_digits".into(),
            classes: vec![format!("blob{}", seed); count],
        },
        images,
    })
}
