//! Delta regression and context splicing on frame matrices, plus their
//! adjoints so gradients can be routed back through them.
//!
//! These work on any per-frame width; [`super::features`] wraps them with the
//! fixed 257/771/8481 layout.

use crate::nn::Matrix;

pub const DELTA_WINDOW: usize = 2;
pub const SPLICE_CONTEXT: usize = 5;

fn clamp_index(t: isize, len: usize) -> usize {
    t.clamp(0, len as isize - 1) as usize
}

fn delta_norm() -> f64 {
    2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>()
}

/// `Δc_t = Σ_{n=1..2} n (c_{t+n} - c_{t-n}) / (2 Σ n²)`, edges replicated.
pub fn deltas(frames: &Matrix) -> Matrix {
    let (t_len, d) = frames.shape();
    let mut out = Matrix::zeros(t_len, d);
    let norm = delta_norm();
    for t in 0..t_len {
        let dst = out.row_mut(t);
        for n in 1..=DELTA_WINDOW {
            let fwd = frames.row(clamp_index(t as isize + n as isize, t_len));
            let back = frames.row(clamp_index(t as isize - n as isize, t_len));
            let w = n as f64 / norm;
            for j in 0..d {
                dst[j] += w * (fwd[j] - back[j]);
            }
        }
    }
    out
}

/// Transpose of [`deltas`].
pub fn deltas_adjoint(grad: &Matrix) -> Matrix {
    let (t_len, d) = grad.shape();
    let mut out = Matrix::zeros(t_len, d);
    let norm = delta_norm();
    for t in 0..t_len {
        for n in 1..=DELTA_WINDOW {
            let w = n as f64 / norm;
            let fwd = clamp_index(t as isize + n as isize, t_len);
            let back = clamp_index(t as isize - n as isize, t_len);
            for j in 0..d {
                let g = w * grad.get(t, j);
                out.as_mut_slice()[fwd * d + j] += g;
                out.as_mut_slice()[back * d + j] -= g;
            }
        }
    }
    out
}

/// `[c, Δc, ΔΔc]` per frame: width `d` becomes `3d`.
pub fn append_deltas(frames: &Matrix) -> Matrix {
    let (t_len, d) = frames.shape();
    let first = deltas(frames);
    let second = deltas(&first);
    let mut out = Matrix::zeros(t_len, 3 * d);
    for t in 0..t_len {
        let row = out.row_mut(t);
        row[..d].copy_from_slice(frames.row(t));
        row[d..2 * d].copy_from_slice(first.row(t));
        row[2 * d..].copy_from_slice(second.row(t));
    }
    out
}

fn column_block(m: &Matrix, start: usize, width: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), width);
    for t in 0..m.rows() {
        out.row_mut(t).copy_from_slice(&m.row(t)[start..start + width]);
    }
    out
}

/// Transpose of [`append_deltas`]: width `3d` becomes `d`.
pub fn append_deltas_adjoint(grad: &Matrix) -> Matrix {
    let d = grad.cols() / 3;
    let g_static = column_block(grad, 0, d);
    let mut g_first = column_block(grad, d, d);
    let g_second = column_block(grad, 2 * d, d);
    g_first.add_scaled(&deltas_adjoint(&g_second), 1.0).expect("same shape");
    let mut out = g_static;
    out.add_scaled(&deltas_adjoint(&g_first), 1.0).expect("same shape");
    out
}

/// Concatenates frames `t - context ..= t + context` per output frame, edges
/// replicated.
pub fn splice(frames: &Matrix, context: usize) -> Matrix {
    let (t_len, d) = frames.shape();
    let width = 2 * context + 1;
    let mut out = Matrix::zeros(t_len, width * d);
    for t in 0..t_len {
        let row = out.row_mut(t);
        for k in 0..width {
            let src = clamp_index(t as isize + k as isize - context as isize, t_len);
            row[k * d..(k + 1) * d].copy_from_slice(frames.row(src));
        }
    }
    out
}

/// Transpose of [`splice`].
pub fn splice_adjoint(grad: &Matrix, context: usize) -> Matrix {
    let width = 2 * context + 1;
    let t_len = grad.rows();
    let d = grad.cols() / width;
    let mut out = Matrix::zeros(t_len, d);
    for t in 0..t_len {
        let g = grad.row(t);
        for k in 0..width {
            let dst = clamp_index(t as isize + k as isize - context as isize, t_len);
            let row = out.row_mut(dst);
            for j in 0..d {
                row[j] += g[k * d + j];
            }
        }
    }
    out
}

/// Rows `rows` of `splice(frames, context)` only.
pub fn splice_rows(frames: &Matrix, context: usize, rows: &[usize]) -> Matrix {
    let (t_len, d) = frames.shape();
    let width = 2 * context + 1;
    let mut out = Matrix::zeros(rows.len(), width * d);
    for (r, &t) in rows.iter().enumerate() {
        let row = out.row_mut(r);
        for k in 0..width {
            let src = clamp_index(t as isize + k as isize - context as isize, t_len);
            row[k * d..(k + 1) * d].copy_from_slice(frames.row(src));
        }
    }
    out
}
