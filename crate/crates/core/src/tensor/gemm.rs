//! Thin safe wrapper over `matrixmultiply::dgemm` for row-major slices.

/// Layout of an operand: `false` reads it as stored (row-major), `true`
/// reads its transpose.
#[derive(Clone, Copy)]
pub(crate) struct Op {
    pub transpose: bool,
}

pub(crate) const N: Op = Op { transpose: false };
pub(crate) const T: Op = Op { transpose: true };

/// `c = beta * c + a(m×k) · b(k×n)` where `a` and `b` are taken through
/// their [`Op`]. Stored shapes are `m×k` / `k×m` for `a` and `k×n` / `n×k`
/// for `b` depending on the transpose flag.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    op_a: Op,
    b: &[f64],
    op_b: Op,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "lhs length");
    assert_eq!(b.len(), k * n, "rhs length");
    assert_eq!(c.len(), m * n, "output length");
    let (rsa, csa) = if op_a.transpose { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if op_b.transpose { (1, k as isize) } else { (n as isize, 1) };
    super::opcount::record(m * k * n);
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b` (it is `&mut`).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y += W·x` for a row-major `rows × cols` matrix.
pub(crate) fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    super::opcount::record(rows * cols);
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        *yi += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `y += Wᵀ·g` for a row-major `rows × cols` matrix.
pub(crate) fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, g: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    super::opcount::record(rows * cols);
    for (gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        for (yj, wij) in y.iter_mut().zip(row) {
            *yj += gi * wij;
        }
    }
}

/// `W += g ⊗ x`.
pub(crate) fn outer_acc(w: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), g.len() * cols);
    super::opcount::record(g.len() * cols);
    for (gi, row) in g.iter().zip(w.chunks_exact_mut(cols)) {
        for (wij, xj) in row.iter_mut().zip(x) {
            *wij += gi * xj;
        }
    }
}
