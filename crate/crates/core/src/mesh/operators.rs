use nalgebra::{SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::{MaterialField, TetMesh};
use crate::error::Result;
use crate::linalg::{csr_from_triplets, sparse_diagonal, Sparse};
use crate::par::{map_indexed, Execution};

/// Which energy the rest-state Hessian `H` is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianKind {
    /// `H = 2L`: Hessian of `sum_t V_t mu_t |F_t - R_t|^2` with `R_t` frozen at
    /// the identity.
    #[default]
    Arap,
    /// Exact linearization of the co-rotational energy
    /// `sum_t V_t (mu_t |F_t - R_t|^2 + lambda_t/2 tr^2(R_t^T F_t - I))` at rest.
    Corotational,
}

/// Full-space sparse operators assembled from a mesh and its material.
#[derive(Debug, Clone)]
pub struct FullSpaceOperators {
    /// Diagonal of the `3n x 3n` lumped vector mass matrix `M`.
    pub mass: Vec<f64>,
    /// Diagonal of the `n x n` weight-space mass matrix `M_w`.
    pub weight_mass: Vec<f64>,
    /// Per-tet rest volumes.
    pub volumes: Vec<f64>,
    /// Per-tet first Lamé parameter (copied from the material).
    pub mu: Vec<f64>,
    /// Deformation-gradient operator `K` (`9t x 3n`).
    pub grad: Sparse,
    /// Heterogeneous Laplacian `L = K^T U V K` (`3n x 3n`).
    pub laplacian: Sparse,
    /// Rest-state elastic Hessian `H` (`3n x 3n`).
    pub hessian: Sparse,
    pub hessian_kind: HessianKind,
}

impl FullSpaceOperators {
    pub fn n_vertices(&self) -> usize {
        self.weight_mass.len()
    }

    pub fn n_tets(&self) -> usize {
        self.volumes.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.weight_mass.iter().sum()
    }

    pub fn mass_matrix(&self) -> Sparse {
        sparse_diagonal(&self.mass)
    }

    /// `9t x 9t` diagonal of tet volumes, matching the flattening of `K`.
    pub fn volume_matrix(&self) -> Sparse {
        let d: Vec<f64> = self.volumes.iter().flat_map(|&v| [v; 9]).collect();
        sparse_diagonal(&d)
    }

    /// `9t x 9t` diagonal of the per-tet first Lamé parameter.
    pub fn mu_matrix(&self) -> Sparse {
        let d: Vec<f64> = self.mu.iter().flat_map(|&v| [v; 9]).collect();
        sparse_diagonal(&d)
    }
}

type Mat9 = SMatrix<f64, 9, 9>;
type Mat9x12 = SMatrix<f64, 9, 12>;

/// Maps the 12 local displacements (vertex-major, axis-minor) of a tet to its
/// flattened deformation gradient.
fn local_gradient(g: &[Vector3<f64>; 4]) -> Mat9x12 {
    let mut b = Mat9x12::zeros();
    for (k, gk) in g.iter().enumerate() {
        for r in 0..3 {
            for c in 0..3 {
                b[(3 * r + c, 3 * k + r)] = gk[c];
            }
        }
    }
    b
}

fn local_dofs(t: &[usize; 4], n: usize) -> [usize; 12] {
    let mut d = [0; 12];
    for k in 0..4 {
        for r in 0..3 {
            d[3 * k + r] = r * n + t[k];
        }
    }
    d
}

/// `2 mu sym + lambda vec(I) vec(I)^T` acting on flattened 3x3 matrices.
pub(crate) fn corotational_rest_tangent(mu: f64, lambda: f64) -> Mat9 {
    let mut c = Mat9::zeros();
    for r in 0..3 {
        for s in 0..3 {
            c[(3 * r + s, 3 * r + s)] += mu;
            c[(3 * r + s, 3 * s + r)] += mu;
        }
    }
    for a in [0, 4, 8] {
        for b in [0, 4, 8] {
            c[(a, b)] += lambda;
        }
    }
    c
}

fn assemble_quadratic(mesh: &TetMesh, exec: Execution, tangent: impl Fn(usize) -> Mat9 + Sync + Send) -> Sparse {
    let n = mesh.n_vertices();
    let blocks = map_indexed(exec, mesh.n_tets(), |j| {
        let b = local_gradient(&mesh.shape_gradients(j));
        let h = b.transpose() * tangent(j) * b * mesh.tet_volume(j);
        (local_dofs(&mesh.tets()[j], n), h)
    });
    csr_from_triplets(
        3 * n,
        3 * n,
        blocks.iter().flat_map(|(dofs, h)| {
            (0..12).flat_map(move |a| (0..12).map(move |b| (dofs[a], dofs[b], h[(a, b)])))
        }),
    )
}

/// Deformation-gradient operator `K` (`9t x 3n`).
pub fn gradient_operator(mesh: &TetMesh) -> Sparse {
    let n = mesh.n_vertices();
    let mut trip = Vec::with_capacity(mesh.n_tets() * 36);
    for (j, t) in mesh.tets().iter().enumerate() {
        let g = mesh.shape_gradients(j);
        for r in 0..3 {
            for c in 0..3 {
                for k in 0..4 {
                    trip.push((9 * j + 3 * r + c, r * n + t[k], g[k][c]));
                }
            }
        }
    }
    csr_from_triplets(9 * mesh.n_tets(), 3 * n, trip)
}

pub fn assemble_operators(mesh: &TetMesh, mat: &MaterialField, kind: HessianKind) -> Result<FullSpaceOperators> {
    assemble_operators_with(mesh, mat, kind, Execution::default())
}

pub fn assemble_operators_with(
    mesh: &TetMesh,
    mat: &MaterialField,
    kind: HessianKind,
    exec: Execution,
) -> Result<FullSpaceOperators> {
    mat.validate(mesh.n_tets())?;
    let n = mesh.n_vertices();
    let volumes = mesh.tet_volumes();

    let mut weight_mass = vec![0.0; n];
    for (j, t) in mesh.tets().iter().enumerate() {
        let m = mat.density[j] * volumes[j] / 4.0;
        for &v in t {
            weight_mass[v] += m;
        }
    }
    let mass: Vec<f64> = (0..3).flat_map(|_| weight_mass.iter().copied()).collect();

    let grad = gradient_operator(mesh);
    let laplacian = assemble_quadratic(mesh, exec, |j| Mat9::identity() * mat.mu[j]);
    let hessian = match kind {
        HessianKind::Arap => assemble_quadratic(mesh, exec, |j| Mat9::identity() * (2.0 * mat.mu[j])),
        HessianKind::Corotational => {
            assemble_quadratic(mesh, exec, |j| corotational_rest_tangent(mat.mu[j], mat.lambda[j]))
        }
    };
    Ok(FullSpaceOperators {
        mass,
        weight_mass,
        volumes,
        mu: mat.mu.clone(),
        grad,
        laplacian,
        hessian,
        hessian_kind: kind,
    })
}
