//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Eigen-decomposition of a real symmetric matrix, eigenvalues ascending.
/// Each eigenvector's largest-magnitude component is made positive.
pub fn sym_eig_sorted(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_gauge(&mut vectors);
    (values, vectors)
}

pub fn fix_gauge(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// `exp(−i h τ)` for real symmetric `h`.
pub fn unitary_exp(h: &DMatrix<f64>, tau: f64) -> DMatrix<C64> {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let v = eig.eigenvectors.map(|x| C64::new(x, 0.0));
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= C64::from_polar(1.0, -eig.eigenvalues[j] * tau);
    }
    scaled * v.transpose()
}

/// Eigenvalues and orthonormal eigenvectors of a (numerically) unitary matrix
/// from its complex Schur form.
pub fn eig_unitary(u: &DMatrix<C64>) -> Result<(Vec<C64>, DMatrix<C64>)> {
    let schur = nalgebra::linalg::Schur::try_new(u.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::numeric("Schur decomposition did not converge"))?;
    let (q, t) = schur.unpack();
    let n = u.nrows();
    let mut off = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            off = off.max(t[(i, j)].norm());
        }
    }
    if off > 1e-8 {
        return Err(Error::numeric(format!(
            "propagator is not normal: Schur off-diagonal {off:.2e}"
        )));
    }
    Ok(((0..n).map(|i| t[(i, i)]).collect(), q))
}

/// ‖A†A − 1‖ (max-abs entry).
pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let n = u.nrows();
    let p = u.adjoint() * u;
    let mut d = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            d = d.max((p[(i, j)] - target).norm());
        }
    }
    d
}

/// Element-wise pairwise sum of equally long rows. The tree shape depends
/// only on the number of rows, so the result is independent of scheduling.
pub fn pairwise_sum_rows(rows: &[Vec<C64>]) -> Vec<C64> {
    match rows.len() {
        0 => Vec::new(),
        1 => rows[0].clone(),
        n => {
            let (a, b) = rows.split_at(n / 2);
            let mut left = pairwise_sum_rows(a);
            let right = pairwise_sum_rows(b);
            for (l, r) in left.iter_mut().zip(right) {
                *l += r;
            }
            left
        }
    }
}
