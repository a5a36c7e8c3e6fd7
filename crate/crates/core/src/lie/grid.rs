use crate::autodiff::Tensor;

/// Normalized pixel-center coordinates of an `h×w` grid, shape `[h,w,2]`.
///
/// Entry `(i, j)` is `((j + 0.5) / w, (i + 0.5) / h)`: x runs along columns.
pub fn identity_grid(h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[h, w, 2], |k| {
        let (p, c) = (k / 2, k % 2);
        if c == 0 {
            ((p % w) as f64 + 0.5) / w as f64
        } else {
            ((p / w) as f64 + 0.5) / h as f64
        }
    })
}

/// Pixel centers at least `border` pixels from every edge, shape `[n,2]`.
pub fn interior_points(h: usize, w: usize, border: usize) -> Tensor {
    let rows: Vec<usize> = (border..h.saturating_sub(border)).collect();
    let cols: Vec<usize> = (border..w.saturating_sub(border)).collect();
    let mut data = Vec::with_capacity(rows.len() * cols.len() * 2);
    for &i in &rows {
        for &j in &cols {
            data.push((j as f64 + 0.5) / w as f64);
            data.push((i as f64 + 0.5) / h as f64);
        }
    }
    let n = data.len() / 2;
    Tensor::new(&[n.max(1), 2], if n == 0 { vec![0.5, 0.5] } else { data }).expect("consistent shape")
}

/// Center of the normalized domain; homogeneous-matrix transforms act
/// about this point.
pub const CENTER: f64 = 0.5;
