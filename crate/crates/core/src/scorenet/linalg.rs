//! Row-major dense kernels on top of `matrixmultiply`.

/// `C ← A·Wᵀ + 1·bᵀ` for `A: rows × input`, `W: output × input`.
pub(crate) fn affine(a: &[f64], rows: usize, input: usize, w: &[f64], b: &[f64], c: &mut [f64]) {
    let output = b.len();
    debug_assert_eq!(a.len(), rows * input);
    debug_assert_eq!(w.len(), output * input);
    debug_assert_eq!(c.len(), rows * output);
    for row in c.chunks_exact_mut(output) {
        row.copy_from_slice(b);
    }
    // SAFETY: dimensions and strides match the slice lengths checked above.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            input,
            output,
            1.0,
            a.as_ptr(),
            input as isize,
            1,
            w.as_ptr(),
            1,
            input as isize,
            1.0,
            c.as_mut_ptr(),
            output as isize,
            1,
        );
    }
}

/// `G_W ← Δᵀ·A` and `G_b ← Σ_rows Δ` for `Δ: rows × output`, `A: rows × input`.
pub(crate) fn weight_grads(
    delta: &[f64],
    a: &[f64],
    rows: usize,
    input: usize,
    output: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) {
    debug_assert_eq!(delta.len(), rows * output);
    debug_assert_eq!(a.len(), rows * input);
    debug_assert_eq!(gw.len(), output * input);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            output,
            rows,
            input,
            1.0,
            delta.as_ptr(),
            1,
            output as isize,
            a.as_ptr(),
            input as isize,
            1,
            0.0,
            gw.as_mut_ptr(),
            input as isize,
            1,
        );
    }
    gb.fill(0.0);
    for row in delta.chunks_exact(output) {
        for (g, d) in gb.iter_mut().zip(row) {
            *g += d;
        }
    }
}

/// `D ← Δ·W` for `Δ: rows × output`, `W: output × input`.
pub(crate) fn input_grads(delta: &[f64], rows: usize, output: usize, w: &[f64], input: usize, d: &mut [f64]) {
    debug_assert_eq!(d.len(), rows * input);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            output,
            input,
            1.0,
            delta.as_ptr(),
            output as isize,
            1,
            w.as_ptr(),
            input as isize,
            1,
            0.0,
            d.as_mut_ptr(),
            input as isize,
            1,
        );
    }
}
