//! Small dense Hermitian linear algebra over `Complex<f64>`.
//!
//! Every matrix in this crate is stored complex. Real-valued experiments
//! simply carry zero imaginary parts, which keeps one code path for both
//! scalar fields.

use nalgebra::{Complex, DMatrix, SymmetricEigen};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

/// Relative pivot floor used by the Hermitian factorizations.
pub const PIVOT_TOL: f64 = 1e-12;

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn zeros(rows: usize, cols: usize) -> CMat {
    CMat::zeros(rows, cols)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn from_real(rows: usize, cols: usize, row_major: &[f64]) -> CMat {
    CMat::from_row_iterator(rows, cols, row_major.iter().map(|&v| c(v)))
}

pub fn trace_re(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs_imag(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.im.abs()))
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// In-place lower Cholesky factor `L` with `A = L L*`.
///
/// Fails when a pivot drops below `PIVOT_TOL` times the largest diagonal
/// entry of `A`, which bounds the spectral radius of a Hermitian p.d. matrix
/// from below.
pub fn cholesky(a: &CMat) -> Option<CMat> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let scale = (0..n).fold(0.0_f64, |m, i| m.max(a[(i, i)].re.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let floor = PIVOT_TOL * scale;
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > floor) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = c(d);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

pub fn logdet_from_cholesky(l: &CMat) -> f64 {
    2.0 * l.diagonal().iter().map(|z| z.re.ln()).sum::<f64>()
}

/// `ln det(A)` for Hermitian positive definite `A`, `None` if numerically singular.
pub fn logdet_hpd(a: &CMat) -> Option<f64> {
    cholesky(a).map(|l| logdet_from_cholesky(&l))
}

/// Solves `L L* X = B` given the Cholesky factor.
pub fn cholesky_solve(l: &CMat, b: &CMat) -> CMat {
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[(i, col)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, col)];
            for k in (i + 1)..n {
                s -= l[(k, i)].conj() * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
    }
    x
}

pub fn inv_hpd(a: &CMat) -> Option<CMat> {
    let l = cholesky(a)?;
    let mut inv = cholesky_solve(&l, &identity(a.nrows()));
    // enforce exact Hermitian symmetry of the result
    inv = hermitian_part(&inv);
    Some(inv)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn herm_eig(a: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Column basis `V_s` and eigenvalues of the numerically nonzero part of a
/// p.s.d. matrix, with cutoff `rel_tol * lambda_max`.
pub fn psd_range(a: &CMat, rel_tol: f64) -> (Vec<f64>, CMat) {
    let (values, vectors) = herm_eig(a);
    let top = values.iter().cloned().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return (Vec::new(), CMat::zeros(a.nrows(), 0));
    }
    let keep: Vec<usize> = (0..values.len()).rev().filter(|&i| values[i] > rel_tol * top).collect();
    let mut basis = CMat::zeros(a.nrows(), keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        basis.set_column(dst, &vectors.column(src));
    }
    (keep.iter().map(|&i| values[i]).collect(), basis)
}

/// Hermitian square root of a p.s.d. matrix (negative eigenvalues clipped).
pub fn psd_sqrt(a: &CMat) -> CMat {
    let (values, vectors) = herm_eig(a);
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| c(v.max(0.0).sqrt())),
    ));
    &vectors * d * vectors.adjoint()
}

/// Moore-Penrose pseudo-inverse with singular values below
/// `rel_tol * sigma_max` treated as zero.
pub fn pinv(a: &CMat, rel_tol: f64) -> CMat {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return CMat::zeros(cols, rows);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let mut out = CMat::zeros(cols, rows);
    if smax == 0.0 {
        return out;
    }
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax {
            let vk = v_t.row(k).adjoint();
            let uk = u.column(k).adjoint();
            out += (vk * uk).scale(1.0 / s);
        }
    }
    out
}

pub fn numerical_rank(a: &CMat, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}
