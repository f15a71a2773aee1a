//! Sum-factorized application of 1-D matrices to tensor-product nodal arrays.
//!
//! Arrays are stored x-fastest: `idx = i0 + s0 * (i1 + s1 * i2)`.

use crate::matrix::Matrix;

/// Applies `mat` along `axis` of an array with shape `shape` (unused trailing
/// extents are 1). `out` must hold the product of the output shape, where the
/// extent along `axis` becomes `mat.rows()`.
pub fn apply_axis(mat: &Matrix, input: &[f64], shape: [usize; 3], axis: usize, out: &mut [f64]) {
    debug_assert_eq!(shape[axis], mat.cols());
    let stride: usize = shape[..axis].iter().product();
    let outer: usize = shape[axis + 1..].iter().product();
    let cols = mat.cols();
    let rows = mat.rows();
    debug_assert_eq!(input.len(), stride * cols * outer);
    debug_assert_eq!(out.len(), stride * rows * outer);
    let m = mat.as_slice();
    for o in 0..outer {
        let in_block = &input[o * stride * cols..(o + 1) * stride * cols];
        let out_block = &mut out[o * stride * rows..(o + 1) * stride * rows];
        for r in 0..rows {
            let dst = &mut out_block[r * stride..(r + 1) * stride];
            dst.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..cols {
                let a = m[r * cols + c];
                if a == 0.0 {
                    continue;
                }
                let src = &in_block[c * stride..(c + 1) * stride];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }
}

/// Shape of a `(n)^dim` array padded to three extents.
pub fn cube_shape(n: usize, dim: usize) -> [usize; 3] {
    let mut s = [1; 3];
    s[..dim].iter_mut().for_each(|e| *e = n);
    s
}

/// Applies the same square-or-rectangular matrix along every axis, mapping an
/// `n^dim` array to an `m^dim` array.
pub fn apply_all_axes(
    mat: &Matrix,
    input: &[f64],
    dim: usize,
    work: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    let mut shape = cube_shape(mat.cols(), dim);
    out.clear();
    out.extend_from_slice(input);
    for axis in 0..dim {
        let mut next_shape = shape;
        next_shape[axis] = mat.rows();
        work.clear();
        work.resize(next_shape.iter().product(), 0.0);
        apply_axis(mat, out, shape, axis, work);
        std::mem::swap(work, out);
        shape = next_shape;
    }
}

/// Multi-index of a flat x-fastest index in an `n^dim` block.
#[inline]
pub fn unflatten(idx: usize, n: usize) -> [usize; 3] {
    [idx % n, (idx / n) % n, idx / (n * n)]
}
