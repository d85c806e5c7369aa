//! Linear rigs, their constant Jacobian, the momentum-leak field and the
//! complementarity matrix `D M J`.
//!
//! Rig parameters are displacement transforms: each bone contributes a
//! flattened row-major `3x4` matrix `[A | t]`, and `p = 0` leaves the mesh at
//! rest (`u_rig = J p`).

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, csr_from_triplets, diagonal_of, spmv};
use crate::mesh::{FullSpaceOperators, TetMesh};
use crate::subspace::lbs_jacobian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigKind {
    AffineHandle,
    LbsSkeleton,
    NullRig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRig {
    kind: RigKind,
    weights: DMatrix<f64>,
}

impl LinearRig {
    /// Single handle moving every vertex with weight one.
    pub fn affine_handle(n_vertices: usize) -> Self {
        LinearRig {
            kind: RigKind::AffineHandle,
            weights: DMatrix::from_element(n_vertices, 1, 1.0),
        }
    }

    pub fn null_rig(n_vertices: usize) -> Self {
        LinearRig {
            kind: RigKind::NullRig,
            weights: DMatrix::zeros(n_vertices, 0),
        }
    }

    /// Skeleton rig with `n x b` per-vertex bone weights.
    pub fn lbs_skeleton(weights: DMatrix<f64>) -> Result<Self> {
        if weights.ncols() == 0 {
            return Err(Error::InvalidRig("an LBS skeleton needs at least one bone".into()));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::InvalidRig("rig weights must be finite".into()));
        }
        Ok(LinearRig {
            kind: RigKind::LbsSkeleton,
            weights,
        })
    }

    pub fn kind(&self) -> RigKind {
        self.kind
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn n_bones(&self) -> usize {
        self.weights.ncols()
    }

    pub fn p_dim(&self) -> usize {
        12 * self.n_bones()
    }

    pub fn n_vertices(&self) -> usize {
        self.weights.nrows()
    }

    /// Parses `{kind, weights?}`; weights are an `n x b` array of rows.
    pub fn from_json(json: &str, n_vertices: usize) -> Result<Self> {
        let file: RigFile = serde_json::from_str(json)?;
        match file.kind {
            RigKind::AffineHandle => Ok(Self::affine_handle(n_vertices)),
            RigKind::NullRig => Ok(Self::null_rig(n_vertices)),
            RigKind::LbsSkeleton => {
                let rows = file
                    .weights
                    .ok_or_else(|| Error::InvalidRig("lbs_skeleton requires weights".into()))?;
                if rows.len() != n_vertices {
                    return Err(Error::Dimension(format!(
                        "rig weights have {} rows for {n_vertices} vertices",
                        rows.len()
                    )));
                }
                let b = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != b) {
                    return Err(Error::InvalidRig("ragged rig weight rows".into()));
                }
                Self::lbs_skeleton(DMatrix::from_fn(n_vertices, b, |i, j| rows[i][j]))
            }
        }
    }

    pub fn to_json(&self) -> String {
        let weights = (self.kind == RigKind::LbsSkeleton).then(|| {
            (0..self.weights.nrows())
                .map(|i| self.weights.row(i).iter().copied().collect())
                .collect()
        });
        serde_json::to_string(&RigFile {
            kind: self.kind,
            weights,
        })
        .expect("rig serializes")
    }

    /// Rig parameters applying the same displacement transform `[A | t]`
    /// (row-major `3x4`) to every bone.
    pub fn uniform_params(&self, transform: &[f64; 12]) -> Vec<f64> {
        (0..self.n_bones()).flat_map(|_| transform.iter().copied()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct RigFile {
    kind: RigKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<Vec<f64>>>,
}

pub fn load_rig(path: impl AsRef<Path>, n_vertices: usize) -> Result<LinearRig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LinearRig::from_json(&text, n_vertices)
}

/// Partition-of-unity hat weights for `bones` joints spaced along `axis`.
pub fn chain_weights(mesh: &TetMesh, bones: usize, axis: usize) -> DMatrix<f64> {
    assert!(bones >= 1 && axis < 3);
    let coords: Vec<f64> = mesh.vertices().iter().map(|v| v[axis]).collect();
    let lo = coords.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if bones == 1 {
        return DMatrix::from_element(coords.len(), 1, 1.0);
    }
    let spacing = (hi - lo) / (bones - 1) as f64;
    DMatrix::from_fn(coords.len(), bones, |i, b| {
        let s = (coords[i] - lo) / spacing;
        (1.0 - (s - b as f64).abs()).max(0.0)
    })
}

/// Constant rig Jacobian `J` (`3n x 12b`), the LBS matrix of the rig weights.
pub fn rig_jacobian(rig: &LinearRig, mesh: &TetMesh) -> Result<DMatrix<f64>> {
    if rig.n_vertices() != mesh.n_vertices() {
        return Err(Error::Dimension(format!(
            "rig has {} vertices, mesh has {}",
            rig.n_vertices(),
            mesh.n_vertices()
        )));
    }
    Ok(lbs_jacobian(rig.weights(), mesh))
}

/// Per-vertex momentum-leak values in `[0, 1]`.
///
/// A user field is clamped. Otherwise one implicit diffusion step
/// `(V + s L) d = V chi` spreads the surface indicator `chi` inward, with `V`
/// the lumped vertex volumes, `L` the geometric (unit-modulus) cotangent
/// stiffness and `s` the squared mean edge length; `d` is then affinely
/// rescaled to `[0, 1]` unless it is constant.
pub fn momentum_leak_field(mesh: &TetMesh, user_field: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = mesh.n_vertices();
    if let Some(f) = user_field {
        if f.len() != n {
            return Err(Error::Dimension(format!("leak field has {} entries for {n} vertices", f.len())));
        }
        if !f.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("leak field"));
        }
        return Ok(f.iter().map(|v| v.clamp(0.0, 1.0)).collect());
    }

    let mut lumped = vec![0.0; n];
    let mut trip = Vec::with_capacity(16 * mesh.n_tets());
    for (j, t) in mesh.tets().iter().enumerate() {
        let vol = mesh.tet_volume(j);
        let g = mesh.shape_gradients(j);
        for a in 0..4 {
            lumped[t[a]] += vol / 4.0;
            for b in 0..4 {
                trip.push((t[a], t[b], vol * g[a].dot(&g[b])));
            }
        }
    }
    let lap = csr_from_triplets(n, n, trip);
    let s = mesh.mean_edge_length().powi(2);
    let mut chi = vec![0.0; n];
    for v in mesh.surface_vertices() {
        chi[v] = 1.0;
    }
    let rhs: Vec<f64> = chi.iter().zip(&lumped).map(|(c, m)| c * m).collect();
    let diag: Vec<f64> = diagonal_of(&lap).iter().zip(&lumped).map(|(l, m)| m + s * l).collect();
    let d = conjugate_gradient(
        |x| {
            spmv(&lap, x)
                .iter()
                .zip(x.iter().zip(&lumped))
                .map(|(lx, (xi, m))| m * xi + s * lx)
                .collect()
        },
        &diag,
        &rhs,
        1e-13,
        10 * n + 100,
    );
    if !d.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("leak diffusion"));
    }
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-14 * hi.abs().max(1.0) {
        return Ok(d.iter().map(|v| v.clamp(0.0, 1.0)).collect());
    }
    Ok(d.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Rig Jacobian, leak field and the complementarity matrix `cJ = D M J`.
#[derive(Debug, Clone)]
pub struct ComplementarityData {
    pub jacobian: DMatrix<f64>,
    /// Per-vertex leak values; `D` is this replicated on each axis.
    pub leak: Vec<f64>,
    pub matrix: DMatrix<f64>,
}

impl ComplementarityData {
    pub fn p_dim(&self) -> usize {
        self.jacobian.ncols()
    }

    /// Diagonal of the `3n x 3n` matrix `D`.
    pub fn leak_diagonal(&self) -> Vec<f64> {
        (0..3).flat_map(|_| self.leak.iter().copied()).collect()
    }
}

pub fn complementarity_matrix(
    rig: &LinearRig,
    mesh: &TetMesh,
    ops: &FullSpaceOperators,
    leak: &[f64],
) -> Result<ComplementarityData> {
    let n = mesh.n_vertices();
    if leak.len() != n || ops.n_vertices() != n {
        return Err(Error::Dimension("leak field / operators do not match the mesh".into()));
    }
    let jacobian = rig_jacobian(rig, mesh)?;
    let mut matrix = jacobian.clone();
    for (r, mut row) in matrix.row_iter_mut().enumerate() {
        row *= leak[r % n] * ops.mass[r];
    }
    Ok(ComplementarityData {
        jacobian,
        leak: leak.to_vec(),
        matrix,
    })
}

/// Rig animation: `{dt, frames: [[p...]...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Animation {
    pub dt: f64,
    pub frames: Vec<Vec<f64>>,
}

impl Animation {
    pub fn from_json(json: &str, p_dim: usize) -> Result<Self> {
        let anim: Animation = serde_json::from_str(json)?;
        if !(anim.dt > 0.0 && anim.dt.is_finite()) {
            return Err(Error::Config(format!("animation dt must be positive, got {}", anim.dt)));
        }
        if let Some(k) = anim.frames.iter().position(|f| f.len() != p_dim) {
            return Err(Error::Dimension(format!(
                "animation frame {k} has {} parameters, rig expects {p_dim}",
                anim.frames[k].len()
            )));
        }
        Ok(anim)
    }

    pub fn load(path: impl AsRef<Path>, p_dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, p_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{assemble_operators, primitives, HessianKind, MaterialField};
    use nalgebra::{DVector, Matrix3, Vector3, Vector4};

    fn setup(mesh: &TetMesh) -> FullSpaceOperators {
        let mat = MaterialField::homogeneous(mesh.n_tets(), 1.0, 0.0, 2.0);
        assemble_operators(mesh, &mat, HessianKind::Arap).unwrap()
    }

    fn vertex(u: &DVector<f64>, n: usize, i: usize) -> Vector3<f64> {
        Vector3::new(u[i], u[n + i], u[2 * n + i])
    }

    #[test]
    fn affine_handle_translation_and_linear_part() {
        let mesh = primitives::jittered(&primitives::box_grid([2, 1, 1], [1.0, 1.0, 1.0]).unwrap(), 0.1, 1).unwrap();
        let n = mesh.n_vertices();
        let rig = LinearRig::affine_handle(n);
        let j = rig_jacobian(&rig, &mesh).unwrap();
        assert_eq!(j.ncols(), 12);
        let p = DVector::from_vec(vec![0., 0., 0., 1., 0., 0., 0., 2., 0., 0., 0., 3.]);
        let u = &j * p;
        for i in 0..n {
            assert!((vertex(&u, n, i) - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-14);
        }
        let a = Matrix3::new(0.1, 0.2, 0.3, -0.4, 0.5, 0.6, 0.7, -0.8, 0.9);
        let mut p = vec![0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                p[4 * r + c] = a[(r, c)];
            }
        }
        let u = &j * DVector::from_vec(p);
        for (i, x) in mesh.vertices().iter().enumerate() {
            assert!((vertex(&u, n, i) - a * x).norm() < 1e-14);
        }
    }

    #[test]
    fn skeleton_with_uniform_transform_matches_single_handle() {
        let mesh = primitives::jittered(&primitives::box_grid([3, 1, 1], [3.0, 1.0, 1.0]).unwrap(), 0.1, 2).unwrap();
        let n = mesh.n_vertices();
        let w = chain_weights(&mesh, 3, 0);
        let rig = LinearRig::lbs_skeleton(w.clone()).unwrap();
        let t = [0.1, -0.3, 0.2, 1.0, 0.05, 0.4, -0.1, 2.0, 0.3, 0.0, 0.2, -1.0];
        let u = rig_jacobian(&rig, &mesh).unwrap() * DVector::from_vec(rig.uniform_params(&t));
        // per-vertex LBS evaluation oracle
        let tm = nalgebra::Matrix3x4::from_row_slice(&t);
        for (i, x) in mesh.vertices().iter().enumerate() {
            let xh = Vector4::new(x.x, x.y, x.z, 1.0);
            let mut expect = Vector3::zeros();
            for b in 0..3 {
                expect += tm * xh * w[(i, b)];
            }
            assert!((vertex(&u, n, i) - expect).norm() < 1e-13);
            assert!((vertex(&u, n, i) - tm * xh).norm() < 1e-13);
        }
        let zero = rig_jacobian(&rig, &mesh).unwrap() * DVector::zeros(36);
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn rig_json_round_trip() {
        let mesh = primitives::box_grid([1, 1, 1], [1.0, 1.0, 1.0]).unwrap();
        let rig = LinearRig::lbs_skeleton(chain_weights(&mesh, 2, 2)).unwrap();
        let back = LinearRig::from_json(&rig.to_json(), mesh.n_vertices()).unwrap();
        assert_eq!(back, rig);
        let null = LinearRig::from_json(r#"{"kind":"null_rig"}"#, 8).unwrap();
        assert_eq!(null.p_dim(), 0);
        assert!(LinearRig::from_json(r#"{"kind":"lbs_skeleton"}"#, 8).is_err());
        assert!(LinearRig::from_json(r#"{"kind":"lbs_skeleton","weights":[[1.0]]}"#, 8).is_err());
    }

    #[test]
    fn leak_passthrough_and_clamping() {
        let mesh = primitives::unit_tet();
        assert_eq!(momentum_leak_field(&mesh, Some(&[1.0; 4])).unwrap(), vec![1.0; 4]);
        assert_eq!(
            momentum_leak_field(&mesh, Some(&[-1.0, 0.5, 2.0, 1.0])).unwrap(),
            vec![0.0, 0.5, 1.0, 1.0]
        );
        assert!(momentum_leak_field(&mesh, Some(&[1.0; 3])).is_err());
    }

    #[test]
    fn leak_without_interior_is_constant_one() {
        let mesh = primitives::unit_tet();
        let d = momentum_leak_field(&mesh, None).unwrap();
        for v in d {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn leak_interior_is_below_surface() {
        let mesh = primitives::box_grid([4, 4, 4], [1.0, 1.0, 1.0]).unwrap();
        let d = momentum_leak_field(&mesh, None).unwrap();
        let surf = mesh.surface_vertices();
        let on: std::collections::HashSet<_> = surf.iter().copied().collect();
        let min_surface = surf.iter().map(|&v| d[v]).fold(f64::INFINITY, f64::min);
        let interior: Vec<f64> = (0..mesh.n_vertices()).filter(|v| !on.contains(v)).map(|v| d[v]).collect();
        assert!(!interior.is_empty());
        let max_interior = interior.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(max_interior < min_surface, "{max_interior} vs {min_surface}");
        assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((d.iter().copied().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
        assert!(d.iter().copied().fold(1.0, f64::min).abs() < 1e-12);
    }

    #[test]
    fn complementarity_products() {
        let mesh = primitives::box_grid([2, 1, 1], [1.0, 1.0, 1.0]).unwrap();
        let n = mesh.n_vertices();
        let ops = setup(&mesh);
        let null = complementarity_matrix(&LinearRig::null_rig(n), &mesh, &ops, &vec![1.0; n]).unwrap();
        assert_eq!(null.matrix.shape(), (3 * n, 0));

        let rig = LinearRig::affine_handle(n);
        let c = complementarity_matrix(&rig, &mesh, &ops, &vec![1.0; n]).unwrap();
        let mj = DMatrix::from_diagonal(&DVector::from_vec(ops.mass.clone())) * &c.jacobian;
        assert_eq!(c.matrix, mj);
        // translation-x column (parameter index 3) equals lumped masses in the x block
        for i in 0..n {
            assert_eq!(c.matrix[(i, 3)], ops.weight_mass[i]);
            assert_eq!(c.matrix[(n + i, 3)], 0.0);
        }

        let leak: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let c = complementarity_matrix(&rig, &mesh, &ops, &leak).unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_vec(c.leak_diagonal()));
        assert!(crate::linalg::max_abs(&(d * mj - &c.matrix)) < 1e-15);
    }

    #[test]
    fn animation_validation() {
        let a = Animation::from_json(r#"{"dt":0.01,"frames":[[0,0],[1,2]]}"#, 2).unwrap();
        assert_eq!(a.frames.len(), 2);
        assert!(Animation::from_json(r#"{"dt":0.01,"frames":[[0]]}"#, 2).is_err());
        assert!(Animation::from_json(r#"{"dt":0,"frames":[]}"#, 2).is_err());
    }
}
