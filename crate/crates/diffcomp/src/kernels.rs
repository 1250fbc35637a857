//! Dense inner loops shared by the eager layers and the tape.
//!
//! Reductions use four independent accumulators so the compiler can keep
//! them in vector registers. Summation order is fixed, so results are
//! reproducible bit-for-bit on a given target.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[r, o] = bias[o] + sum_i x[r, i] * w[o, i]` for row-major `x` (rows x in)
/// and `w` (out x in).
pub fn linear_forward(
    x: &[f64],
    rows: usize,
    w: &[f64],
    out_dim: usize,
    in_dim: usize,
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), rows * in_dim);
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(out.len(), rows * out_dim);
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let yr = &mut out[r * out_dim..(r + 1) * out_dim];
        for (o, y) in yr.iter_mut().enumerate() {
            let b = bias.map_or(0.0, |b| b[o]);
            *y = b + dot(xr, &w[o * in_dim..(o + 1) * in_dim]);
        }
    }
}

/// Accumulates the three gradients of `linear_forward`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    rows: usize,
    w: &[f64],
    out_dim: usize,
    in_dim: usize,
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    if let Some(dx) = dx {
        for r in 0..rows {
            let dyr = &dy[r * out_dim..(r + 1) * out_dim];
            let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
            for (o, &g) in dyr.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, &w[o * in_dim..(o + 1) * in_dim], dxr);
                }
            }
        }
    }
    if let Some(dw) = dw {
        for r in 0..rows {
            let xr = &x[r * in_dim..(r + 1) * in_dim];
            let dyr = &dy[r * out_dim..(r + 1) * out_dim];
            for (o, &g) in dyr.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, xr, &mut dw[o * in_dim..(o + 1) * in_dim]);
                }
            }
        }
    }
    if let Some(db) = db {
        for r in 0..rows {
            axpy(1.0, &dy[r * out_dim..(r + 1) * out_dim], db);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
