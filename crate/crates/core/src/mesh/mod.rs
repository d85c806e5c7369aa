//! Tetrahedral meshes, material fields and full-space operator assembly.
//!
//! Degrees of freedom are flattened axis-major: entry `a * n + i` holds axis
//! `a` of vertex `i`, so the per-axis selectors are contiguous index ranges.
//! Deformation gradients are flattened tet-major and row-major within each
//! tet: entry `9 * j + 3 * r + c` is `F_j[r][c]`.

mod io;
mod operators;
pub mod primitives;

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_material, load_tet_mesh, parse_material, parse_msh, parse_tet, write_obj, write_tet};
pub use operators::{assemble_operators, assemble_operators_with, gradient_operator, FullSpaceOperators, HessianKind};

/// Relative degeneracy threshold: `|volume| < DEGENERATE_REL * bbox_diag^3`.
pub const DEGENERATE_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    vertices: Vec<Vector3<f64>>,
    tets: Vec<[usize; 4]>,
    surface_tris: Vec<[usize; 3]>,
}

impl TetMesh {
    /// Validates indices, canonicalizes orientation (swapping the second and
    /// third index of negatively oriented tets) and rejects degenerate tets.
    pub fn new(vertices: Vec<Vector3<f64>>, mut tets: Vec<[usize; 4]>) -> Result<Self> {
        let n = vertices.len();
        if n == 0 || tets.is_empty() {
            return Err(Error::InvalidMesh("mesh needs vertices and tets".into()));
        }
        if let Some((j, _)) = vertices.iter().enumerate().find(|(_, v)| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {j} is not finite")));
        }
        for (j, t) in tets.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "tet {j} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
        }
        let diag = bbox_diagonal(&vertices);
        let threshold = DEGENERATE_REL * diag.powi(3);
        let mut degenerate = Vec::new();
        for (j, t) in tets.iter_mut().enumerate() {
            let v = signed_volume(&vertices, t);
            if v.abs() < threshold || !v.is_finite() {
                degenerate.push(j);
            } else if v < 0.0 {
                t.swap(1, 2);
            }
        }
        if !degenerate.is_empty() {
            return Err(Error::DegenerateTets {
                tets: degenerate,
                threshold,
            });
        }
        let surface_tris = boundary_faces(&tets);
        Ok(TetMesh {
            vertices,
            tets,
            surface_tris,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    /// Boundary triangles, outward oriented.
    pub fn surface_tris(&self) -> &[[usize; 3]] {
        &self.surface_tris
    }

    /// Sorted indices of vertices touched by a boundary triangle.
    pub fn surface_vertices(&self) -> Vec<usize> {
        let mut on = vec![false; self.n_vertices()];
        for f in &self.surface_tris {
            for &v in f {
                on[v] = true;
            }
        }
        (0..on.len()).filter(|&i| on[i]).collect()
    }

    pub fn tet_volume(&self, j: usize) -> f64 {
        signed_volume(&self.vertices, &self.tets[j])
    }

    /// Per-tet volumes; all strictly positive by construction.
    pub fn tet_volumes(&self) -> Vec<f64> {
        (0..self.n_tets()).map(|j| self.tet_volume(j)).collect()
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }

    /// Rest positions flattened axis-major (`3n`).
    pub fn rest_positions(&self) -> Vec<f64> {
        let n = self.n_vertices();
        let mut x = vec![0.0; 3 * n];
        for (i, v) in self.vertices.iter().enumerate() {
            for a in 0..3 {
                x[a * n + i] = v[a];
            }
        }
        x
    }

    /// Unique undirected edges (sorted pairs).
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut e: Vec<[usize; 2]> = self
            .tets
            .iter()
            .flat_map(|t| {
                [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)].map(|(a, b)| {
                    let (i, j) = (t[a], t[b]);
                    [i.min(j), i.max(j)]
                })
            })
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn mean_edge_length(&self) -> f64 {
        let e = self.edges();
        e.iter()
            .map(|[i, j]| (self.vertices[*i] - self.vertices[*j]).norm())
            .sum::<f64>()
            / e.len() as f64
    }

    /// Pairs of tets sharing a triangular face.
    pub fn face_adjacency(&self) -> Vec<(usize, usize)> {
        let mut owner: HashMap<[usize; 3], usize> = HashMap::new();
        let mut pairs = Vec::new();
        for (j, t) in self.tets.iter().enumerate() {
            for f in tet_faces(t) {
                let key = sorted3(f);
                if let Some(&other) = owner.get(&key) {
                    pairs.push((other, j));
                } else {
                    owner.insert(key, j);
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// Rest shape matrix `[X1-X0, X2-X0, X3-X0]` of tet `j`.
    pub fn rest_shape_matrix(&self, j: usize) -> Matrix3<f64> {
        let t = self.tets[j];
        let x0 = self.vertices[t[0]];
        Matrix3::from_columns(&[
            self.vertices[t[1]] - x0,
            self.vertices[t[2]] - x0,
            self.vertices[t[3]] - x0,
        ])
    }

    /// Gradients of the four barycentric shape functions of tet `j`.
    ///
    /// `F[r][c] = sum_k x_k[r] * g_k[c]` for deformed positions `x_k`.
    pub fn shape_gradients(&self, j: usize) -> [Vector3<f64>; 4] {
        let inv = self
            .rest_shape_matrix(j)
            .try_inverse()
            .expect("non-degenerate tet has invertible shape matrix");
        let g1 = inv.row(0).transpose();
        let g2 = inv.row(1).transpose();
        let g3 = inv.row(2).transpose();
        [-(g1 + g2 + g3), g1, g2, g3]
    }
}

fn signed_volume(vertices: &[Vector3<f64>], t: &[usize; 4]) -> f64 {
    let x0 = vertices[t[0]];
    let d1 = vertices[t[1]] - x0;
    let d2 = vertices[t[2]] - x0;
    let d3 = vertices[t[3]] - x0;
    d1.dot(&d2.cross(&d3)) / 6.0
}

fn bbox_diagonal(vertices: &[Vector3<f64>]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for v in vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    (hi - lo).norm()
}

/// Outward faces of a positively oriented tet.
fn tet_faces(t: &[usize; 4]) -> [[usize; 3]; 4] {
    [
        [t[1], t[2], t[3]],
        [t[0], t[3], t[2]],
        [t[0], t[1], t[3]],
        [t[0], t[2], t[1]],
    ]
}

fn sorted3(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

fn boundary_faces(tets: &[[usize; 4]]) -> Vec<[usize; 3]> {
    let mut count: HashMap<[usize; 3], (usize, [usize; 3])> = HashMap::new();
    for t in tets {
        for f in tet_faces(t) {
            count.entry(sorted3(f)).or_insert((0, f)).0 += 1;
        }
    }
    let mut faces: Vec<[usize; 3]> = count
        .into_values()
        .filter(|(c, _)| *c == 1)
        .map(|(_, f)| f)
        .collect();
    faces.sort_unstable();
    faces
}

/// Per-tet Lamé parameters and density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialField {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub density: Vec<f64>,
}

impl MaterialField {
    pub fn homogeneous(n_tets: usize, mu: f64, lambda: f64, density: f64) -> Self {
        MaterialField {
            mu: vec![mu; n_tets],
            lambda: vec![lambda; n_tets],
            density: vec![density; n_tets],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn validate(&self, n_tets: usize) -> Result<()> {
        if self.mu.len() != n_tets || self.lambda.len() != n_tets || self.density.len() != n_tets {
            return Err(Error::Dimension(format!(
                "material sized ({}, {}, {}) for {n_tets} tets",
                self.mu.len(),
                self.lambda.len(),
                self.density.len()
            )));
        }
        if let Some(j) = self.mu.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidMaterial(format!("mu must be > 0 (tet {j})")));
        }
        if let Some(j) = self.lambda.iter().position(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidMaterial(format!("lambda must be >= 0 (tet {j})")));
        }
        if let Some(j) = self.density.iter().position(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidMaterial(format!("density must be > 0 (tet {j})")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_tet_vertices() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ]
    }

    #[test]
    fn unit_tet_volume() {
        let m = TetMesh::new(unit_tet_vertices(), vec![[0, 1, 2, 3]]).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_tets(), 1);
        assert!((m.tet_volumes()[0] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.surface_tris().len(), 4);
    }

    #[test]
    fn inverted_tet_is_reoriented() {
        let m = TetMesh::new(unit_tet_vertices(), vec![[0, 2, 1, 3]]).unwrap();
        assert!((m.tet_volumes()[0] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.tets()[0], [0, 1, 2, 3]);
    }

    #[test]
    fn scaled_tet_volume_is_cubic() {
        let v: Vec<_> = unit_tet_vertices().into_iter().map(|p| p * 2.0).collect();
        let m = TetMesh::new(v, vec![[0, 1, 2, 3]]).unwrap();
        assert!((m.tet_volumes()[0] - 8.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn coplanar_tet_is_rejected() {
        let mut v = unit_tet_vertices();
        v[3] = Vector3::new(0.3, 0.3, 0.0);
        match TetMesh::new(v, vec![[0, 1, 2, 3]]) {
            Err(Error::DegenerateTets { tets, .. }) => assert_eq!(tets, vec![0]),
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        assert!(matches!(
            TetMesh::new(unit_tet_vertices(), vec![[0, 1, 2, 7]]),
            Err(Error::InvalidMesh(_))
        ));
    }

    #[test]
    fn surface_faces_point_outward() {
        let m = primitives::box_grid([2, 2, 2], [1.0, 1.0, 1.0]).unwrap();
        let center = Vector3::new(0.5, 0.5, 0.5);
        for f in m.surface_tris() {
            let [a, b, c] = f.map(|i| m.vertices()[i]);
            let normal = (b - a).cross(&(c - a));
            let centroid = (a + b + c) / 3.0;
            assert!(normal.dot(&(centroid - center)) > 0.0);
        }
        // 6 faces * 4 squares * 2 triangles
        assert_eq!(m.surface_tris().len(), 48);
    }

    #[test]
    fn cube_volume_matches_divergence_theorem() {
        // independent: V = 1/3 * sum over boundary faces of centroid . area-normal
        let m = primitives::box_grid([1, 1, 1], [1.0, 2.0, 1.5]).unwrap();
        let mut v_surf = 0.0;
        for f in m.surface_tris() {
            let [a, b, c] = f.map(|i| m.vertices()[i]);
            let n = (b - a).cross(&(c - a)) * 0.5;
            v_surf += ((a + b + c) / 3.0).dot(&n) / 3.0;
        }
        let total: f64 = m.tet_volumes().iter().sum();
        assert!((total - v_surf).abs() < 1e-13);
        assert!((total - 3.0).abs() < 1e-13);
    }

    #[test]
    fn two_tet_bipyramid_volume_matches_surface_integral() {
        let v = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.2, 0.3, 1.0),
            Vector3::new(0.4, 0.1, -0.7),
        ];
        let m = TetMesh::new(v, vec![[0, 1, 2, 3], [0, 1, 2, 4]]).unwrap();
        assert_eq!(m.surface_tris().len(), 6);
        let mut v_surf = 0.0;
        for f in m.surface_tris() {
            let [a, b, c] = f.map(|i| m.vertices()[i]);
            v_surf += a.dot(&b.cross(&c)) / 6.0;
        }
        let total: f64 = m.tet_volumes().iter().sum();
        assert!((total - v_surf).abs() < 1e-14);
        assert!((total - 0.5 * 1.7 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn material_validation() {
        let mut m = MaterialField::homogeneous(3, 1.0, 0.0, 1.0);
        assert!(m.validate(3).is_ok());
        assert!(m.validate(4).is_err());
        m.mu[1] = 0.0;
        assert!(matches!(m.validate(3), Err(Error::InvalidMaterial(_))));
        m.mu[1] = 1.0;
        m.lambda[2] = -1.0;
        assert!(matches!(m.validate(3), Err(Error::InvalidMaterial(_))));
    }
}
