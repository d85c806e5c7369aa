//! End-to-end orchestration: precompute (operators, leak field, eigenmodes,
//! clustering) and a stepping session built on its result.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clusters::{cluster_tets, Clustering};
use crate::error::{Error, Result};
use crate::mesh::{assemble_operators_with, write_tet, FullSpaceOperators, HessianKind, MaterialField, TetMesh};
use crate::par::Execution;
use crate::rig::{complementarity_matrix, momentum_leak_field, ComplementarityData, LinearRig};
use crate::solver::{precompute_reduced_operators, project_full, ReducedOperators, SimState, SolverConfig, StepReport};
use crate::subspace::{build_skinning_subspace, complementarity_residual, SkinningSubspace, SubspaceReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputeConfig {
    pub modes: usize,
    pub clusters: usize,
    pub seed: u64,
    pub hessian: HessianKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak_field: Option<Vec<f64>>,
    pub execution: Execution,
}

impl Default for PrecomputeConfig {
    fn default() -> Self {
        PrecomputeConfig {
            modes: 8,
            clusters: 16,
            seed: 0,
            hessian: HessianKind::Arap,
            leak_field: None,
            execution: Execution::default(),
        }
    }
}

/// Everything the solver needs that does not depend on the timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Precomputed {
    pub mesh: TetMesh,
    pub material: MaterialField,
    pub rig: LinearRig,
    pub hessian: HessianKind,
    pub leak: Vec<f64>,
    pub subspace: SkinningSubspace,
    pub labels: Vec<usize>,
    pub input_hash: [u8; 32],
}

impl Precomputed {
    pub fn clustering(&self) -> Result<Clustering> {
        Clustering::from_labels(self.labels.clone(), &self.mesh.tet_volumes())
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// SHA-256 over the canonical text form of the mesh followed by the rig JSON.
pub fn input_hash(mesh: &TetMesh, rig: &LinearRig) -> [u8; 32] {
    let mut text = Vec::new();
    write_tet(mesh, &mut text).expect("writing to memory");
    let mut hasher = Sha256::new();
    hasher.update(&text);
    hasher.update(rig.to_json().as_bytes());
    hasher.finalize().into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Subspace construction followed by clustering.
pub fn precompute(
    mesh: &TetMesh,
    material: &MaterialField,
    rig: &LinearRig,
    config: &PrecomputeConfig,
) -> Result<(Precomputed, SubspaceReport)> {
    if rig.n_vertices() != mesh.n_vertices() {
        return Err(Error::Dimension(format!(
            "rig has {} vertices, mesh has {}",
            rig.n_vertices(),
            mesh.n_vertices()
        )));
    }
    let ops = assemble_operators_with(mesh, material, config.hessian, config.execution)?;
    let leak = momentum_leak_field(mesh, config.leak_field.as_deref())?;
    let comp = complementarity_matrix(rig, mesh, &ops, &leak)?;
    let (subspace, report) = build_skinning_subspace(mesh, &ops, &comp, config.modes)?;
    log::info!(
        "{} modes, {} constraint rows, weight residual {:.3e}",
        subspace.n_modes(),
        report.constraint_rows,
        report.weight_residual
    );
    let clustering = cluster_tets(
        &subspace.weights,
        &subspace.eigenvalues,
        mesh,
        config.clusters,
        config.seed,
        config.execution,
    )?;
    log::info!("{} clusters after splitting", clustering.n_clusters);
    Ok((
        Precomputed {
            mesh: mesh.clone(),
            material: material.clone(),
            rig: rig.clone(),
            hessian: config.hessian,
            leak,
            subspace,
            labels: clustering.labels,
            input_hash: input_hash(mesh, rig),
        },
        report,
    ))
}

/// A running simulation over a precomputed subspace.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub ops: FullSpaceOperators,
    pub comp: ComplementarityData,
    pub reduced: ReducedOperators,
    pub config: SolverConfig,
    pub state: SimState,
    rest: Vec<f64>,
    basis: nalgebra::DMatrix<f64>,
}

impl Simulation {
    pub fn new(pre: &Precomputed, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let ops = assemble_operators_with(&pre.mesh, &pre.material, pre.hessian, config.execution)?;
        let comp = complementarity_matrix(&pre.rig, &pre.mesh, &ops, &pre.leak)?;
        let clustering = pre.clustering()?;
        let reduced = precompute_reduced_operators(
            &pre.mesh,
            &ops,
            &pre.material,
            &comp.jacobian,
            &pre.subspace.basis,
            &clustering,
            config.h,
        )?;
        let state = SimState::at_rest(reduced.dim(), reduced.p_dim());
        Ok(Simulation {
            ops,
            comp,
            reduced,
            config,
            state,
            rest: pre.mesh.rest_positions(),
            basis: pre.subspace.basis.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.reduced.dim()
    }

    pub fn p_dim(&self) -> usize {
        self.reduced.p_dim()
    }

    pub fn step(&mut self, p: &[f64]) -> Result<StepReport> {
        if p.len() != self.p_dim() {
            return Err(Error::Dimension(format!("got {} rig parameters, expected {}", p.len(), self.p_dim())));
        }
        self.reduced.step(&mut self.state, &DVector::from_column_slice(p), &self.config)
    }

    /// Sets the reduced external force (`12m`).
    pub fn set_force(&mut self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::Dimension(format!("got {} force entries, expected {}", f.len(), self.dim())));
        }
        self.state.f_ext = DVector::from_column_slice(f);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.state.reset();
    }

    pub fn positions(&self) -> Vec<f64> {
        project_full(&self.rest, &self.basis, &self.comp.jacobian, &self.state.z, &self.state.p)
    }

    /// Scaled `max |cJ^T B z|` of the current state.
    pub fn complementarity_residual(&self) -> f64 {
        if self.p_dim() == 0 {
            return 0.0;
        }
        let bz = &self.basis * &self.state.z;
        let scale = crate::linalg::max_abs(&self.comp.matrix) * bz.amax().max(f64::MIN_POSITIVE);
        self.comp.matrix.tr_mul(&bz).amax() / scale
    }

    /// Scaled `max |cJ^T B|` of the subspace itself.
    pub fn basis_complementarity(&self) -> f64 {
        complementarity_residual(&self.comp.matrix, &self.basis)
    }
}
