//! Dense helpers shared by the solvers.
//!
//! Symmetric eigendecompositions are delegated to `faer`; everything else is
//! plain `ndarray`.

use faer::{MatRef, Side};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Result, SidaError};

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

/// Full eigendecomposition of a symmetric matrix. Only the lower triangle is read.
pub fn sym_eigen(a: ArrayView2<f64>) -> Result<SymEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(SidaError::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(SymEigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SidaError::Eigen("matrix has non-finite entries".into()));
    }
    let owned;
    let data = match a.as_slice() {
        Some(s) => s,
        None => {
            owned = a.as_standard_layout().to_owned();
            owned.as_slice().expect("standard layout")
        }
    };
    // Row-major storage of A is column-major storage of A^T; reading the upper
    // triangle of A^T is reading the lower triangle of A.
    let m = MatRef::from_column_major_slice(data, n, n);
    let evd = m
        .self_adjoint_eigen(Side::Upper)
        .map_err(|e| SidaError::Eigen(format!("{e:?}")))?;
    let u = evd.U();
    let sv = evd.S().column_vector();
    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    // faer returns ascending order
    for k in 0..n {
        let src = n - 1 - k;
        values[k] = sv[src];
        for i in 0..n {
            vectors[[i, k]] = u[(i, src)];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// Top `r` eigenpairs of the PSD matrix `F Fᵀ`, computed from the thin factor
/// `F` (p x m) without forming the p x p product.
///
/// `F = Q R` by twice-iterated modified Gram-Schmidt, then `F Fᵀ = Q (R Rᵀ) Qᵀ`
/// and only the small m x m core is diagonalized. Missing pairs (m < r) are
/// returned as zero eigenvalues with zero vectors.
pub fn low_rank_top_eigen(f: ArrayView2<f64>, r: usize) -> Result<SymEigen> {
    let p = f.nrows();
    let (q, rmat) = thin_qr(f);
    let k = q.ncols();
    let mut values = Array1::zeros(r);
    let mut vectors = Array2::zeros((p, r));
    if k == 0 {
        return Ok(SymEigen { values, vectors });
    }
    let core = rmat.dot(&rmat.t());
    let core = symmetrize(core.view());
    let small = sym_eigen(core.view())?;
    let take = r.min(k);
    let v = q.dot(&small.vectors.slice(s![.., ..take]));
    vectors.slice_mut(s![.., ..take]).assign(&v);
    for i in 0..take {
        values[i] = small.values[i].max(0.0);
    }
    Ok(SymEigen { values, vectors })
}

/// Thin QR of a tall matrix; columns that are numerically dependent are dropped
/// from Q (and the matching rows of R).
pub fn thin_qr(f: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (p, m) = f.dim();
    let scale = f.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut q_cols: Vec<Array1<f64>> = Vec::with_capacity(m);
    let mut r_rows: Vec<Array1<f64>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut v = f.column(j).to_owned();
        let norm0 = v.dot(&v).sqrt();
        let mut coeffs = Array1::<f64>::zeros(m);
        for _pass in 0..2 {
            for (idx, qc) in q_cols.iter().enumerate() {
                let c = qc.dot(&v);
                v.scaled_add(-c, qc);
                coeffs[idx] += c;
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-13 * norm0.max(scale * (p as f64).sqrt()) && norm > 0.0 {
            v /= norm;
            coeffs[q_cols.len()] = norm;
            q_cols.push(v);
        }
        r_rows.push(coeffs);
    }
    let k = q_cols.len();
    let mut q = Array2::zeros((p, k));
    for (j, c) in q_cols.iter().enumerate() {
        q.column_mut(j).assign(c);
    }
    let mut r = Array2::zeros((k, m));
    for (j, coeffs) in r_rows.iter().enumerate() {
        for i in 0..k {
            r[[i, j]] = coeffs[i];
        }
    }
    (q, r)
}

/// Matrix product. Large products go through `faer`'s blocked kernels.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimensions differ");
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    if (m * k * n) < 1 << 18 || m == 0 || n == 0 || k == 0 {
        return a.dot(&b);
    }
    let a_std = a.as_standard_layout();
    let b_std = b.as_standard_layout();
    let fa = MatRef::from_row_major_slice(a_std.as_slice().expect("standard layout"), m, k);
    let fb = MatRef::from_row_major_slice(b_std.as_slice().expect("standard layout"), k, n);
    let prod = fa * fb;
    Array2::from_shape_fn((m, n), |(i, j)| prod[(i, j)])
}

/// `(A + Aᵀ) / 2`
pub fn symmetrize(a: ArrayView2<f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    out += &a.t();
    out *= 0.5;
    out
}

/// Maximum absolute row sum, `max_i Σ_j |a_ij|`.
pub fn max_abs_row_sum(a: ArrayView2<f64>) -> f64 {
    a.axis_iter(Axis(0))
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn row_norms(a: ArrayView2<f64>) -> Array1<f64> {
    a.map_axis(Axis(1), |row| row.dot(&row).sqrt())
}

/// Flip column signs so the largest-magnitude entry of each column is positive.
/// Ties go to the first such entry.
pub fn canonical_signs(a: &mut Array2<f64>) {
    for mut col in a.axis_iter_mut(Axis(1)) {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}

/// Flip columns of `a` so each has a non-negative inner product with the matching
/// column of `reference`.
pub fn align_signs(a: &mut Array2<f64>, reference: ArrayView2<f64>) {
    for (mut col, rcol) in a.axis_iter_mut(Axis(1)).zip(reference.axis_iter(Axis(1))) {
        if col.dot(&rcol) < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}

/// Frobenius distance between `a` and `b` after sign-aligning the columns of `a`
/// to `b`.
pub fn aligned_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let mut aa = a.to_owned();
    align_signs(&mut aa, b);
    frobenius((&aa - &b).view())
}

/// Largest principal angle (radians) between the column spaces of two matrices
/// with orthonormal columns, from the sine form `‖(I - A Aᵀ) B‖₂` which stays
/// accurate for tiny angles.
pub fn max_principal_angle(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    let resid = &b - &a.dot(&a.t().dot(&b));
    let g = resid.t().dot(&resid);
    let e = sym_eigen(g.view())?;
    let s = e.values.iter().cloned().fold(0.0f64, f64::max).sqrt().min(1.0);
    Ok(s.asin())
}

/// Modified Gram-Schmidt with column pivoting. Columns are processed in order of
/// decreasing remaining norm but written back in place; columns that are zero
/// (norm < 1e-12) or numerically dependent on earlier ones come out as zero.
pub fn gram_schmidt(g: ArrayView2<f64>) -> Array2<f64> {
    let (p, r) = g.dim();
    let mut work = g.to_owned();
    let mut out = Array2::zeros((p, r));
    let original: Vec<f64> = (0..r).map(|j| l2(g.column(j))).collect();
    let mut done = vec![false; r];
    let mut basis: Vec<usize> = Vec::with_capacity(r);
    for _ in 0..r {
        // pivot: largest remaining column norm, first index on ties
        let mut pick = None;
        let mut best = -1.0;
        for j in 0..r {
            if !done[j] {
                let nrm = l2(work.column(j));
                if nrm > best {
                    best = nrm;
                    pick = Some(j);
                }
            }
        }
        let j = pick.expect("a column remains");
        done[j] = true;
        // second pass against the accepted basis
        let mut v = work.column(j).to_owned();
        for &b in &basis {
            let q = out.column(b);
            let c = q.dot(&v);
            v.scaled_add(-c, &q);
        }
        let nrm = l2(v.view());
        if original[j] < 1e-12 || nrm <= 1e-10 * original[j] {
            continue;
        }
        v /= nrm;
        for k in 0..r {
            if !done[k] {
                let c = v.dot(&work.column(k));
                let mut col = work.column_mut(k);
                col.scaled_add(-c, &v);
            }
        }
        out.column_mut(j).assign(&v);
        basis.push(j);
    }
    out
}

/// Replaces the listed columns of an orthonormal-column matrix by unit vectors
/// orthogonal to every other column, taken from the standard basis in order.
pub fn fill_orthonormal_complement(g: &mut Array2<f64>, cols: &[usize]) {
    let p = g.nrows();
    for &c in cols {
        g.column_mut(c).fill(0.0);
    }
    let mut next = 0;
    for &c in cols {
        while next < p {
            let mut v = Array1::<f64>::zeros(p);
            v[next] = 1.0;
            next += 1;
            for _pass in 0..2 {
                for k in 0..g.ncols() {
                    let q = g.column(k);
                    let d = q.dot(&v);
                    v.scaled_add(-d, &q);
                }
            }
            let nrm = l2(v.view());
            if nrm > 1e-8 {
                v /= nrm;
                g.column_mut(c).assign(&v);
                break;
            }
        }
    }
}

pub fn l2(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}
