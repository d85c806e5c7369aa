//! Dense and sparse linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

pub type Sparse = CsrMatrix<f64>;

/// Builds a CSR matrix from `(row, col, value)` triplets; duplicates are summed.
pub fn csr_from_triplets(
    nrows: usize,
    ncols: usize,
    triplets: impl IntoIterator<Item = (usize, usize, f64)>,
) -> Sparse {
    let mut coo = CooMatrix::new(nrows, ncols);
    for (r, c, v) in triplets {
        coo.push(r, c, v);
    }
    CsrMatrix::from(&coo)
}

pub fn sparse_diagonal(diag: &[f64]) -> Sparse {
    csr_from_triplets(diag.len(), diag.len(), diag.iter().enumerate().map(|(i, &v)| (i, i, v)))
}

pub fn spmv(a: &Sparse, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![0.0; a.nrows()];
    for (r, row) in a.row_iter().enumerate() {
        y[r] = row
            .col_indices()
            .iter()
            .zip(row.values())
            .map(|(&c, &v)| v * x[c])
            .sum();
    }
    y
}

/// Sparse times dense.
pub fn spmm(a: &Sparse, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    for (r, row) in a.row_iter().enumerate() {
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            for j in 0..b.ncols() {
                out[(r, j)] += v * b[(c, j)];
            }
        }
    }
    out
}

pub fn to_dense(a: &Sparse) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (r, row) in a.row_iter().enumerate() {
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            d[(r, c)] += v;
        }
    }
    d
}

pub fn diagonal_of(a: &Sparse) -> Vec<f64> {
    let mut d = vec![0.0; a.nrows().min(a.ncols())];
    for (r, row) in a.row_iter().enumerate() {
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            if r == c {
                d[r] += v;
            }
        }
    }
    d
}

pub fn max_abs_sparse(a: &Sparse) -> f64 {
    a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Greedy selection of linearly independent rows.
///
/// Rows are visited in order; a row is kept when its component orthogonal to
/// the already kept rows has norm above `rel_tol * max_row_norm`. The kept
/// rows are returned unchanged, so their span equals the span of the input.
pub fn independent_rows(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let ncols = a.ncols();
    let max_norm = (0..a.nrows()).map(|r| a.row(r).norm()).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return DMatrix::zeros(0, ncols);
    }
    let tol = rel_tol * max_norm;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for r in 0..a.nrows() {
        let mut v: DVector<f64> = a.row(r).transpose();
        // two passes of Gram-Schmidt keep the basis orthonormal to round-off
        for _ in 0..2 {
            for q in &basis {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
        }
        let nv = v.norm();
        if nv > tol {
            basis.push(v / nv);
            kept.push(r);
        }
    }
    DMatrix::from_fn(kept.len(), ncols, |i, j| a[(kept[i], j)])
}

/// Orthonormal basis of the null space of a full-row-rank `c x n` matrix,
/// computed from a Householder QR of its transpose. Returns `n x (n - c)`.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (c, n) = a.shape();
    assert!(c <= n, "null_space expects a wide matrix");
    let mut work = a.transpose(); // n x c
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(c);
    for k in 0..c {
        let x = work.view((k, k), (n - k, 1)).clone_owned();
        let alpha = x.norm();
        let mut v = DVector::zeros(n - k);
        v.copy_from(&x.column(0));
        let sign = if x[(0, 0)] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vn = v.norm();
        if vn > 0.0 {
            v /= vn;
            let mut sub = work.view_mut((k, k), (n - k, c - k));
            let proj = sub.tr_mul(&v); // (c-k) x 1
            sub.ger(-2.0, &v, &proj, 1.0);
        }
        reflectors.push(v);
    }
    let mut q = DMatrix::zeros(n, n - c);
    for j in 0..(n - c) {
        q[(c + j, j)] = 1.0;
    }
    for (k, v) in reflectors.iter().enumerate().rev() {
        if v.norm() == 0.0 {
            continue;
        }
        let mut sub = q.view_mut((k, 0), (n - k, n - c));
        let proj = sub.tr_mul(v);
        sub.ger(-2.0, v, &proj, 1.0);
    }
    q
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen_sorted(a: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let sym = (&a + a.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigen solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// Flips each column so that its largest-magnitude entry is positive.
pub fn normalize_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
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

/// Jacobi-preconditioned conjugate gradient on an SPD operator.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    diag: &[f64],
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return x;
    }
    let precond = |r: &[f64]| -> Vec<f64> { r.iter().zip(diag).map(|(a, d)| a / d).collect() };
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= rel_tol * bnorm {
            break;
        }
        z = precond(&r);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}

/// Factorization of the reduced system matrix.
#[derive(Debug, Clone)]
pub enum SystemSolver {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    /// Minimum-norm solves through a truncated eigendecomposition; used when
    /// the subspace basis is rank deficient (e.g. a full-rank LBS basis).
    PseudoInverse {
        vectors: DMatrix<f64>,
        inv_values: Vec<f64>,
    },
}

impl SystemSolver {
    pub fn cholesky(a: &DMatrix<f64>) -> Result<Self> {
        nalgebra::Cholesky::new(a.clone())
            .map(SystemSolver::Cholesky)
            .ok_or(Error::NotPositiveDefinite)
    }

    pub fn pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        let (vals, vecs) = sym_eigen_sorted(a.clone())?;
        let max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if vals.iter().any(|&v| v < -rel_tol * max) {
            return Err(Error::NotPositiveDefinite);
        }
        let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > rel_tol * max).collect();
        let vectors = DMatrix::from_fn(a.nrows(), keep.len(), |r, c| vecs[(r, keep[c])]);
        let inv_values = keep.iter().map(|&i| 1.0 / vals[i]).collect();
        Ok(SystemSolver::PseudoInverse {
            vectors,
            inv_values,
        })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            SystemSolver::Cholesky(c) => c.solve(b),
            SystemSolver::PseudoInverse {
                vectors,
                inv_values,
            } => {
                let mut coeffs = vectors.tr_mul(b);
                for (c, s) in coeffs.iter_mut().zip(inv_values) {
                    *c *= s;
                }
                vectors * coeffs
            }
        }
    }

    /// `L` of the Cholesky factorization, when there is one.
    pub fn cholesky_factor(&self) -> Option<DMatrix<f64>> {
        match self {
            SystemSolver::Cholesky(c) => Some(c.l()),
            SystemSolver::PseudoInverse { .. } => None,
        }
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn null_space_is_orthonormal_and_annihilated() {
        let a = random(4, 11, 3);
        let n = null_space(&a);
        assert_eq!(n.shape(), (11, 7));
        assert!(max_abs(&(&a * &n)) < 1e-13);
        let gram = n.transpose() * &n;
        assert!(max_abs(&(gram - DMatrix::identity(7, 7))) < 1e-13);
    }

    #[test]
    fn independent_rows_drops_duplicates_and_combinations() {
        let a = random(3, 8, 5);
        let mut stacked = DMatrix::zeros(6, 8);
        stacked.rows_mut(0, 3).copy_from(&a);
        stacked.row_mut(3).copy_from(&a.row(1));
        let combo = a.row(0) * 2.0 - a.row(2) * 0.5;
        stacked.row_mut(4).copy_from(&combo);
        stacked.row_mut(5).copy_from(&(a.row(2) * 3.0));
        let kept = independent_rows(&stacked, 1e-10);
        assert_eq!(kept.nrows(), 3);
        assert_eq!(kept, a);
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = random(6, 6, 9);
        let spd = &a * a.transpose() + DMatrix::identity(6, 6);
        let b: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let diag: Vec<f64> = (0..6).map(|i| spd[(i, i)]).collect();
        let x = conjugate_gradient(
            |v| (&spd * DVector::from_column_slice(v)).as_slice().to_vec(),
            &diag,
            &b,
            1e-14,
            100,
        );
        let r = &spd * DVector::from_vec(x) - DVector::from_vec(b);
        assert!(r.norm() < 1e-10);
    }

    #[test]
    fn pseudo_inverse_gives_minimum_norm_solution() {
        let basis = random(5, 2, 1);
        let a = &basis * basis.transpose();
        let b = &a * DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let solver = SystemSolver::pseudo_inverse(&a, 1e-12).unwrap();
        let x = solver.solve(&b);
        assert!((&a * &x - &b).norm() < 1e-10 * b.norm());
        assert!(SystemSolver::cholesky(&a).is_err());
    }
}
