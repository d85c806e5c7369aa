//! Procedural test and demo meshes.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TetMesh;
use crate::error::Result;

pub fn unit_tet() -> TetMesh {
    TetMesh::new(
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ],
        vec![[0, 1, 2, 3]],
    )
    .expect("unit tet is valid")
}

/// Axis-aligned box `[0, extent]` split into `cells` cubes, six tets per
/// cube (Freudenthal split along the main diagonal, conforming across cells).
pub fn box_grid(cells: [usize; 3], extent: [f64; 3]) -> Result<TetMesh> {
    let [nx, ny, nz] = cells;
    let id = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Vector3::new(
                    extent[0] * i as f64 / nx as f64,
                    extent[1] * j as f64 / ny as f64,
                    extent[2] * k as f64 / nz as f64,
                ));
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [id(c[0], c[1], c[2]), 0, 0, 0];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = id(c[0], c[1], c[2]);
                    }
                    tets.push(t);
                }
            }
        }
    }
    TetMesh::new(vertices, tets)
}

/// Box grid sized to roughly `target_tets` tetrahedra with the given aspect.
pub fn box_with_tets(target_tets: usize, extent: [f64; 3]) -> Result<TetMesh> {
    let cubes = (target_tets as f64 / 6.0).max(1.0);
    let vol = extent[0] * extent[1] * extent[2];
    let h = (vol / cubes).cbrt();
    let cells = extent.map(|e| ((e / h).round() as usize).max(1));
    box_grid(cells, extent)
}

/// Copy of `mesh` with every vertex displaced by a uniform random offset of
/// up to `amplitude` (absolute units) per axis.
pub fn jittered(mesh: &TetMesh, amplitude: f64, seed: u64) -> Result<TetMesh> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vertices = mesh
        .vertices()
        .iter()
        .map(|v| v + Vector3::from_fn(|_, _| rng.random_range(-amplitude..=amplitude)))
        .collect();
    TetMesh::new(vertices, mesh.tets().to_vec())
}

/// Two disjoint boxes side by side (two connected components).
pub fn two_boxes(cells: [usize; 3], extent: [f64; 3], gap: f64) -> Result<TetMesh> {
    let a = box_grid(cells, extent)?;
    let offset = Vector3::new(extent[0] + gap, 0.0, 0.0);
    let n = a.n_vertices();
    let mut vertices = a.vertices().to_vec();
    vertices.extend(a.vertices().iter().map(|v| v + offset));
    let mut tets = a.tets().to_vec();
    tets.extend(a.tets().iter().map(|t| t.map(|i| i + n)));
    TetMesh::new(vertices, tets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_volume_and_counts() {
        let m = box_grid([3, 2, 1], [3.0, 2.0, 1.0]).unwrap();
        assert_eq!(m.n_vertices(), 4 * 3 * 2);
        assert_eq!(m.n_tets(), 36);
        let vol: f64 = m.tet_volumes().iter().sum();
        assert!((vol - 6.0).abs() < 1e-12);
        // all tets are face-connected through interior faces
        assert_eq!(m.face_adjacency().len(), (4 * 36 - m.surface_tris().len()) / 2);
    }

    #[test]
    fn two_boxes_have_no_shared_faces() {
        let m = two_boxes([1, 1, 1], [1.0, 1.0, 1.0], 0.5).unwrap();
        assert_eq!(m.n_tets(), 12);
        assert!(m.face_adjacency().iter().all(|&(a, b)| (a < 6) == (b < 6)));
    }
}
