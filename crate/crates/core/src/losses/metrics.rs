use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::lie::{compose, interior_points, Transform};

/// Pixels excluded along every edge when computing metrics.
pub const METRIC_BORDER: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct JacobianStats {
    /// Percentage of interior pixels with a negative determinant.
    pub pct_neg: f64,
    pub mean_det: f64,
    /// Row-major determinants over the interior.
    pub dets: Vec<f64>,
}

/// Central-difference Jacobian determinants of a position field `[h,w,2]`
/// (normalized units), measured in pixel units at interior pixels.
pub fn jacobian_stats_field(field: &Tensor) -> Result<JacobianStats> {
    let s = field.shape();
    if s.len() != 3 || s[2] != 2 {
        return Err(Error::shape("jacobian_stats", &[s]));
    }
    let (h, w) = (s[0], s[1]);
    let b = METRIC_BORDER.max(1);
    if h <= 2 * b || w <= 2 * b {
        return Err(Error::invalid("jacobian_stats", format!("grid {h}x{w} has no interior")));
    }
    let d = field.data();
    let at = |i: usize, j: usize, c: usize| d[(i * w + j) * 2 + c] * if c == 0 { w as f64 } else { h as f64 };
    let mut dets = Vec::with_capacity((h - 2 * b) * (w - 2 * b));
    for i in b..h - b {
        for j in b..w - b {
            let dxdx = (at(i, j + 1, 0) - at(i, j - 1, 0)) / 2.0;
            let dxdy = (at(i + 1, j, 0) - at(i - 1, j, 0)) / 2.0;
            let dydx = (at(i, j + 1, 1) - at(i, j - 1, 1)) / 2.0;
            let dydy = (at(i + 1, j, 1) - at(i - 1, j, 1)) / 2.0;
            dets.push(dxdx * dydy - dxdy * dydx);
        }
    }
    let n = dets.len() as f64;
    Ok(JacobianStats {
        pct_neg: 100.0 * dets.iter().filter(|&&v| v < 0.0).count() as f64 / n,
        mean_det: dets.iter().sum::<f64>() / n,
        dets,
    })
}

/// Evaluates `t` on `tape`, which must be the tape `t` was built on.
pub fn jacobian_stats<'t>(tape: &'t Tape, t: &Transform<'t>, h: usize, w: usize) -> Result<JacobianStats> {
    let field = t.position_field(tape, h, w)?;
    jacobian_stats_field(field.value())
}

/// Mean over interior pixel centers `x` of `‖T_ab(T_ba(x)) − x‖`, in pixels.
pub fn inv_consistency_error<'t>(tape: &'t Tape, t_ab: &Transform<'t>, t_ba: &Transform<'t>, h: usize, w: usize) -> Result<f64> {
    let pts = tape.constant(interior_points(h, w, METRIC_BORDER));
    let round = compose(t_ab, t_ba)?.apply_points(&pts)?;
    Ok(mean_pixel_distance(round.value().data(), pts.value().data(), h, w))
}

fn mean_pixel_distance(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let n = a.len() / 2;
    a.chunks(2)
        .zip(b.chunks(2))
        .map(|(p, q)| ((p[0] - q[0]) * w as f64).hypot((p[1] - q[1]) * h as f64))
        .sum::<f64>()
        / n as f64
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("dice", &[&[a.len()], &[b.len()]]));
    }
    let (na, nb) = (a.iter().filter(|&&v| v).count(), b.iter().filter(|&&v| v).count());
    if na + nb == 0 {
        log::debug!("dice of two empty masks, reporting 1");
        return Ok(1.0);
    }
    let both = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Mean Euclidean distance in pixels between corresponding landmarks given
/// in normalized coordinates.
pub fn landmark_mtre(a: &[[f64; 2]], b: &[[f64; 2]], h: usize, w: usize) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("landmark_mtre", format!("landmark counts {} and {}", a.len(), b.len())));
    }
    let flat = |v: &[[f64; 2]]| v.iter().flatten().copied().collect::<Vec<_>>();
    Ok(mean_pixel_distance(&flat(a), &flat(b), h, w))
}
