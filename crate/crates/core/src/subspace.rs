//! Rig-complementary skinning eigenmodes.
//!
//! The LBS matrix `B` (`3n x 12m`) has one 12-column block per mode `b`; inside
//! the block, column `a * 4 + j` holds the entry `T[a][j]` of the mode's
//! row-major `3x4` transform, so `(B z)` at vertex `v`, axis `a` is
//! `sum_b w[v][b] * sum_j T_b[a][j] * X_h[v][j]` with homogeneous rest
//! position `X_h = (x, y, z, 1)`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{
    csr_from_triplets, independent_rows, normalize_column_signs, null_space, sym_eigen_sorted, to_dense, Sparse,
};
use crate::mesh::{FullSpaceOperators, TetMesh};
use crate::rig::ComplementarityData;

/// Relative pivot tolerance used when dropping redundant constraint rows.
pub const CONSTRAINT_ROW_TOL: f64 = 1e-10;

/// The twelve weight-space skinning Jacobians `A_ij` (axis `i`, homogeneous
/// coordinate `j`), each `3n x n` with one nonzero per column. They are kept
/// implicit: `A_ij w` places `w[v] * X_h[v][j]` in the axis-`i` block.
#[derive(Debug, Clone)]
pub struct WeightSpaceJacobians {
    rest: Vec<Vector3<f64>>,
}

impl WeightSpaceJacobians {
    pub fn n_vertices(&self) -> usize {
        self.rest.len()
    }

    /// Homogeneous rest coordinate `j` of vertex `v`.
    pub fn coefficient(&self, v: usize, j: usize) -> f64 {
        if j == 3 {
            1.0
        } else {
            self.rest[v][j]
        }
    }

    pub fn apply(&self, axis: usize, j: usize, w: &[f64]) -> Vec<f64> {
        let n = self.n_vertices();
        let mut out = vec![0.0; 3 * n];
        for v in 0..n {
            out[axis * n + v] = w[v] * self.coefficient(v, j);
        }
        out
    }

    pub fn matrix(&self, axis: usize, j: usize) -> Sparse {
        let n = self.n_vertices();
        csr_from_triplets(3 * n, n, (0..n).map(|v| (axis * n + v, v, self.coefficient(v, j))))
    }
}

pub fn weight_space_skinning_jacobians(mesh: &TetMesh) -> WeightSpaceJacobians {
    WeightSpaceJacobians {
        rest: mesh.vertices().to_vec(),
    }
}

/// LBS matrix of `n x m` weights over the mesh's rest positions (`3n x 12m`).
pub fn lbs_jacobian(weights: &DMatrix<f64>, mesh: &TetMesh) -> DMatrix<f64> {
    let n = mesh.n_vertices();
    assert_eq!(weights.nrows(), n, "weights must have one row per vertex");
    let m = weights.ncols();
    let mut b = DMatrix::zeros(3 * n, 12 * m);
    for mode in 0..m {
        for a in 0..3 {
            for j in 0..4 {
                let mut col = b.column_mut(mode * 12 + a * 4 + j);
                for (v, x) in mesh.vertices().iter().enumerate() {
                    let h = if j == 3 { 1.0 } else { x[j] };
                    col[a * n + v] = weights[(v, mode)] * h;
                }
            }
        }
    }
    b
}

/// `H_w`: sum of the three per-axis diagonal blocks of a `3n x 3n` matrix.
pub fn weight_space_hessian(h: &Sparse) -> Result<Sparse> {
    if h.nrows() != h.ncols() || !h.nrows().is_multiple_of(3) {
        return Err(Error::Dimension(format!("H is {}x{}, expected 3n x 3n", h.nrows(), h.ncols())));
    }
    let n = h.nrows() / 3;
    let trip = h
        .triplet_iter()
        .filter(|(r, c, _)| r / n == c / n)
        .map(|(r, c, v)| (r % n, c % n, *v));
    Ok(csr_from_triplets(n, n, trip))
}

/// Weight-space constraint: the stack of `cJ^T A_ij` (row block `(i*4 + j)`,
/// one row per rig parameter) with redundant rows removed.
pub fn weight_space_constraint(comp_matrix: &DMatrix<f64>, jac: &WeightSpaceJacobians) -> Result<DMatrix<f64>> {
    let n = jac.n_vertices();
    if comp_matrix.nrows() != 3 * n {
        return Err(Error::Dimension(format!("constraint matrix has {} rows, expected {}", comp_matrix.nrows(), 3 * n)));
    }
    let p = comp_matrix.ncols();
    let mut full = DMatrix::zeros(12 * p, n);
    for i in 0..3 {
        for j in 0..4 {
            for q in 0..p {
                let row = (i * 4 + j) * p + q;
                for v in 0..n {
                    full[(row, v)] = comp_matrix[(i * n + v, q)] * jac.coefficient(v, j);
                }
            }
        }
    }
    Ok(independent_rows(&full, CONSTRAINT_ROW_TOL))
}

/// Secondary skinning weights, their eigenvalues and the LBS matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinningSubspace {
    pub weights: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub basis: DMatrix<f64>,
}

impl SkinningSubspace {
    pub fn new(weights: DMatrix<f64>, eigenvalues: Vec<f64>, mesh: &TetMesh) -> Self {
        let basis = lbs_jacobian(&weights, mesh);
        SkinningSubspace {
            weights,
            eigenvalues,
            basis,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.weights.ncols()
    }

    /// Reduced dimension `12m`.
    pub fn dim(&self) -> usize {
        12 * self.n_modes()
    }
}

/// The `m` smallest generalized eigenpairs of `(H_w, M_w)` restricted to the
/// null space of `J_w`, with `W^T M_w W = I`.
///
/// Solved through the projected pencil: with `S = M_w^{-1/2}` and `N` an
/// orthonormal null-space basis of `J_w S`, the eigenvectors `U` of
/// `N^T S H_w S N` give `W = S N U`. This is equivalent to the KKT eigenproblem
/// with multipliers for `J_w W = 0`.
pub fn solve_constrained_gevp(
    weight_hessian: &DMatrix<f64>,
    weight_mass: &[f64],
    weight_constraint: &DMatrix<f64>,
    m: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = weight_mass.len();
    if weight_hessian.shape() != (n, n) || weight_constraint.ncols() != n {
        return Err(Error::Dimension("H_w, M_w and J_w sizes disagree".into()));
    }
    if weight_mass.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Dimension("weight-space mass must be positive".into()));
    }
    let available = n.saturating_sub(weight_constraint.nrows());
    if m > available || m == 0 {
        return Err(Error::TooManyModes { requested: m, available });
    }
    let s: Vec<f64> = weight_mass.iter().map(|v| 1.0 / v.sqrt()).collect();
    let scaled_j = DMatrix::from_fn(weight_constraint.nrows(), n, |r, c| weight_constraint[(r, c)] * s[c]);
    let basis = null_space(&scaled_j);
    let scaled_h = DMatrix::from_fn(n, n, |r, c| weight_hessian[(r, c)] * s[r] * s[c]);
    let projected = basis.tr_mul(&(&scaled_h * &basis));
    let (vals, vecs) = sym_eigen_sorted(projected)?;
    let lam_max = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for k in 1..m.min(vals.len()) {
        if vals[k] - vals[k - 1] < 1e-10 * lam_max {
            log::debug!("eigenvalues {} and {} are (nearly) degenerate", k - 1, k);
        }
    }
    let u = vecs.columns(0, m).clone_owned();
    let mut w = &basis * u;
    for (r, mut row) in w.row_iter_mut().enumerate() {
        row *= s[r];
    }
    normalize_column_signs(&mut w);
    Ok((vals[..m].to_vec(), w))
}

/// Baseline: the `k` smallest generalized eigenvectors of `(H, M)` with `M`
/// diagonal, mass-orthonormal.
pub fn displacement_modes(h: &Sparse, mass: &[f64], k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = mass.len();
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::Dimension("H and M sizes disagree".into()));
    }
    if k > n || k == 0 {
        return Err(Error::TooManyModes { requested: k, available: n });
    }
    let s: Vec<f64> = mass.iter().map(|v| 1.0 / v.sqrt()).collect();
    let dense = to_dense(h);
    let scaled = DMatrix::from_fn(n, n, |r, c| dense[(r, c)] * s[r] * s[c]);
    let (vals, vecs) = sym_eigen_sorted(scaled)?;
    let mut b = vecs.columns(0, k).clone_owned();
    for (r, mut row) in b.row_iter_mut().enumerate() {
        row *= s[r];
    }
    normalize_column_signs(&mut b);
    Ok((vals[..k].to_vec(), b))
}

/// Checks `R^T R = I` and `det R = 1` to `1e-10`.
pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if orth > 1e-10 || (det - 1.0).abs() > 1e-10 {
        return Err(Error::NotRotation(format!("|R^T R - I| = {orth:e}, det = {det}")));
    }
    Ok(())
}

/// Reduced coordinates `w` with `B w = rep(R) B z`: every mode transform `T_b`
/// becomes `R T_b`.
pub fn rotate_reduced_coords(r: &Matrix3<f64>, z: &[f64]) -> Result<Vec<f64>> {
    check_rotation(r)?;
    if !z.len().is_multiple_of(12) {
        return Err(Error::Dimension(format!("reduced vector length {} is not a multiple of 12", z.len())));
    }
    let mut w = vec![0.0; z.len()];
    for (src, dst) in z.chunks_exact(12).zip(w.chunks_exact_mut(12)) {
        for a in 0..3 {
            for j in 0..4 {
                dst[a * 4 + j] = (0..3).map(|k| r[(a, k)] * src[k * 4 + j]).sum();
            }
        }
    }
    Ok(w)
}

/// `rep(R) u` for an axis-major `3n` vector.
pub fn rotate_field(r: &Matrix3<f64>, u: &[f64]) -> Vec<f64> {
    let n = u.len() / 3;
    let mut out = vec![0.0; u.len()];
    for v in 0..n {
        let x = r * Vector3::new(u[v], u[n + v], u[2 * n + v]);
        for a in 0..3 {
            out[a * n + v] = x[a];
        }
    }
    out
}

/// Relative least-squares residual of fitting the rotational displacement
/// `rep(R) x0 - x0` in the column span of `basis`.
pub fn rotation_fit_residual(basis: &DMatrix<f64>, rest: &[f64], r: &Matrix3<f64>) -> f64 {
    let target: Vec<f64> = rotate_field(r, rest).iter().zip(rest).map(|(a, b)| a - b).collect();
    let t = DVector::from_vec(target);
    let tn = t.norm();
    if tn == 0.0 {
        return 0.0;
    }
    let svd = basis.clone().svd(true, false);
    let u = svd.u.expect("svd computes U");
    let smax = svd.singular_values.max();
    let mut fit = DVector::zeros(t.len());
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if sv > 1e-12 * smax {
            let col = u.column(k);
            fit.axpy(col.dot(&t), &col, 1.0);
        }
    }
    (t - fit).norm() / tn
}

/// Constraint-side summary produced alongside a subspace.
#[derive(Debug, Clone)]
pub struct SubspaceReport {
    /// Rows of `J_w` kept after redundant-row removal.
    pub constraint_rows: usize,
    /// `max |J_w W|`.
    pub weight_residual: f64,
    /// `max |cJ^T B|` scaled by `max|cJ| * max|B|`.
    pub complementarity_residual: f64,
}

/// Subspace construction: weight-space Hessian and constraint, then the
/// constrained eigenproblem for `m` modes.
pub fn build_skinning_subspace(
    mesh: &TetMesh,
    ops: &FullSpaceOperators,
    comp: &ComplementarityData,
    m: usize,
) -> Result<(SkinningSubspace, SubspaceReport)> {
    let weight_hessian = to_dense(&weight_space_hessian(&ops.hessian)?);
    let jac = weight_space_skinning_jacobians(mesh);
    let weight_constraint = weight_space_constraint(&comp.matrix, &jac)?;
    let (vals, w) = solve_constrained_gevp(&weight_hessian, &ops.weight_mass, &weight_constraint, m)?;
    let weight_residual = crate::linalg::max_abs(&(&weight_constraint * &w));
    let sub = SkinningSubspace::new(w, vals, mesh);
    let complementarity_residual = complementarity_residual(&comp.matrix, &sub.basis);
    Ok((
        sub,
        SubspaceReport {
            constraint_rows: weight_constraint.nrows(),
            weight_residual,
            complementarity_residual,
        },
    ))
}

/// `max |cJ^T B| / (max|cJ| * max|B|)`, zero for an empty rig.
pub fn complementarity_residual(comp_matrix: &DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
    if comp_matrix.ncols() == 0 || basis.ncols() == 0 {
        return 0.0;
    }
    let scale = crate::linalg::max_abs(comp_matrix) * crate::linalg::max_abs(basis);
    if scale == 0.0 {
        return 0.0;
    }
    crate::linalg::max_abs(&comp_matrix.tr_mul(basis)) / scale
}
