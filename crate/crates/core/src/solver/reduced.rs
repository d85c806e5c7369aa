use nalgebra::{DMatrix, DVector, Matrix3};

use super::{polar_rotation_checked, ElasticEnergy, SimState, SolverConfig, StepReport};
use crate::clusters::Clustering;
use crate::error::{Error, Result};
use crate::linalg::{spmm, spmv, SystemSolver};
use crate::mesh::{FullSpaceOperators, MaterialField, TetMesh};
use crate::par::{map_indexed, Execution};

/// Cached products for the reduced solver. Everything except the system
/// matrix and its factorization is independent of the timestep.
#[derive(Debug, Clone)]
pub struct ReducedOperators {
    pub grad_basis: DMatrix<f64>,
    pub grad_rig: DMatrix<f64>,
    /// Rest cluster deformation gradients `G9 K x0`.
    pub rest_grad: DVector<f64>,
    pub basis_stiffness: DMatrix<f64>,
    pub coupled_stiffness: DMatrix<f64>,
    pub basis_mass: DMatrix<f64>,
    pub coupled_mass: DMatrix<f64>,
    /// `B^T L x0`; nonzero only when `B` does not annihilate the rest offset.
    pub basis_rest_force: DVector<f64>,
    // z-independent pieces, kept so the energy is an exact total
    pub rig_stiffness: DMatrix<f64>,
    pub rig_mass: DMatrix<f64>,
    pub rig_rest_force: DVector<f64>,
    pub rest_stiffness_energy: f64,
    pub cluster_mass: Vec<f64>,
    pub cluster_mu: Vec<f64>,
    pub cluster_lambda: Vec<f64>,
    pub bbox_diagonal: f64,
    pub n_vertices: usize,
    pub h: f64,
    pub system: DMatrix<f64>,
    pub solver: SystemSolver,
}

/// Builds the cached products for subspace `basis` (`3n x 12m`), rig
/// Jacobian `jac` (`3n x p`) and clustering, with system matrix for step `h`.
pub fn precompute_reduced_operators(
    mesh: &TetMesh,
    ops: &FullSpaceOperators,
    mat: &MaterialField,
    jac: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    clustering: &Clustering,
    h: f64,
) -> Result<ReducedOperators> {
    let n3 = 3 * mesh.n_vertices();
    if basis.nrows() != n3 || jac.nrows() != n3 || clustering.labels.len() != mesh.n_tets() {
        return Err(Error::Dimension("subspace, rig or clustering does not match the mesh".into()));
    }
    mat.validate(mesh.n_tets())?;
    let x0 = DVector::from_vec(mesh.rest_positions());
    let g9k = &clustering.group9 * &ops.grad;
    let grad_basis = spmm(&g9k, basis);
    let grad_rig = spmm(&g9k, jac);
    let rest_grad = DVector::from_vec(spmv(&g9k, x0.as_slice()));

    let lb = spmm(&ops.laplacian, basis);
    let lj = spmm(&ops.laplacian, jac);
    let lx0 = DVector::from_vec(spmv(&ops.laplacian, x0.as_slice()));
    let mass = DVector::from_vec(ops.mass.clone());
    let mb = DMatrix::from_fn(n3, basis.ncols(), |r, c| basis[(r, c)] * mass[r]);
    let mj = DMatrix::from_fn(n3, jac.ncols(), |r, c| jac[(r, c)] * mass[r]);

    let group = &clustering.group;
    let cluster_mass = {
        let mut m = vec![0.0; group.nrows()];
        for (&l, v) in clustering.labels.iter().zip(&ops.volumes) {
            m[l] += v;
        }
        m
    };
    let cluster_mu = spmv(group, &mat.mu);
    let cluster_lambda = spmv(group, &mat.lambda);

    let basis_stiffness = basis.tr_mul(&lb);
    let basis_mass = basis.tr_mul(&mb);
    let mut red = ReducedOperators {
        grad_basis,
        grad_rig,
        rest_grad,
        coupled_stiffness: basis.tr_mul(&lj),
        coupled_mass: basis.tr_mul(&mj),
        basis_rest_force: basis.tr_mul(&lx0),
        rig_stiffness: jac.tr_mul(&lj),
        rig_mass: jac.tr_mul(&mj),
        rig_rest_force: jac.tr_mul(&lx0),
        rest_stiffness_energy: x0.dot(&lx0),
        basis_stiffness: symmetrize(basis_stiffness),
        basis_mass: symmetrize(basis_mass),
        cluster_mass,
        cluster_mu,
        cluster_lambda,
        bbox_diagonal: mesh.bbox_diagonal(),
        n_vertices: mesh.n_vertices(),
        h,
        system: DMatrix::zeros(0, 0),
        solver: SystemSolver::Cholesky(nalgebra::Cholesky::new(DMatrix::<f64>::identity(0, 0)).expect("empty")),
    };
    red.set_timestep(h)?;
    Ok(red)
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

impl ReducedOperators {
    pub fn dim(&self) -> usize {
        self.basis_stiffness.nrows()
    }

    pub fn p_dim(&self) -> usize {
        self.coupled_stiffness.ncols()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_mass.len()
    }

    /// Rebuilds `A = B^T L B + B^T M B / h^2` and its factorization. A basis
    /// with more columns than degrees of freedom makes `A` singular; it is
    /// then solved in the minimum-norm sense.
    pub fn set_timestep(&mut self, h: f64) -> Result<()> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("timestep must be positive, got {h}")));
        }
        let system = &self.basis_stiffness + &self.basis_mass / (h * h);
        self.solver = if self.dim() <= 3 * self.n_vertices {
            match SystemSolver::cholesky(&system) {
                Ok(s) => s,
                Err(_) => {
                    log::warn!("reduced system matrix is singular; using a pseudo-inverse");
                    SystemSolver::pseudo_inverse(&system, 1e-10)?
                }
            }
        } else {
            SystemSolver::pseudo_inverse(&system, 1e-10)?
        };
        self.system = system;
        self.h = h;
        Ok(())
    }

    /// Cluster deformation gradients `G9 K B z + G9 K J p + rest_grad`.
    pub fn cluster_gradients(&self, z: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        let mut f = &self.grad_basis * z + &self.rest_grad;
        if self.p_dim() > 0 {
            f += &self.grad_rig * p;
        }
        f
    }

    /// Local step: per-cluster polar rotations and the derivative of the
    /// rotation-dependent energy with respect to each cluster's `F`,
    /// `-m mu R` (+ `m lambda/2 R tr(R^T F - I)` for corot), flattened row-major.
    pub fn local_step(&self, z: &DVector<f64>, p: &DVector<f64>, energy: ElasticEnergy, exec: Execution) -> Result<DVector<f64>> {
        let f = self.cluster_gradients(z, p);
        if !f.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("cluster deformation gradient"));
        }
        let blocks = map_indexed(exec, self.n_clusters(), |c| {
            let fc = Matrix3::from_row_slice(&f.as_slice()[9 * c..9 * c + 9]);
            let (r, _) = polar_rotation_checked(&fc);
            let (m, mu) = (self.cluster_mass[c], self.cluster_mu[c]);
            let mut g = r * (-m * mu);
            if energy == ElasticEnergy::Corot {
                let s = (r.transpose() * fc).trace();
                g += r * (m * self.cluster_lambda[c] / 2.0 * (s - 3.0));
            }
            g
        });
        let mut out = DVector::zeros(9 * self.n_clusters());
        for (c, g) in blocks.iter().enumerate() {
            for r in 0..3 {
                for k in 0..3 {
                    out[9 * c + 3 * r + k] = g[(r, k)];
                }
            }
        }
        Ok(out)
    }

    /// Total reduced energy at `(z, p)` given the step's history point.
    pub fn energy(&self, z: &DVector<f64>, p: &DVector<f64>, hist: &History, energy: ElasticEnergy) -> f64 {
        let f = self.cluster_gradients(z, p);
        let mut rotational = 0.0;
        for c in 0..self.n_clusters() {
            let fc = Matrix3::from_row_slice(&f.as_slice()[9 * c..9 * c + 9]);
            let (r, _) = polar_rotation_checked(&fc);
            let s = (r.transpose() * fc).trace();
            let (m, mu) = (self.cluster_mass[c], self.cluster_mu[c]);
            rotational += m * mu * (1.5 - s);
            if energy == ElasticEnergy::Corot {
                rotational += m * self.cluster_lambda[c] / 4.0 * (s - 3.0).powi(2);
            }
        }
        let mut quad = z.dot(&(&self.basis_stiffness * z)) + 2.0 * z.dot(&self.basis_rest_force) + self.rest_stiffness_energy;
        let dz = z - &hist.z;
        let mut kin = dz.dot(&(&self.basis_mass * &dz));
        if self.p_dim() > 0 {
            quad += 2.0 * z.dot(&(&self.coupled_stiffness * p)) + p.dot(&(&self.rig_stiffness * p)) + 2.0 * p.dot(&self.rig_rest_force);
            let dp = p - &hist.p;
            kin += 2.0 * dz.dot(&(&self.coupled_mass * &dp)) + dp.dot(&(&self.rig_mass * &dp));
        }
        0.5 * quad + rotational + kin / (2.0 * self.h * self.h) - hist.f_ext.dot(z)
    }

    /// Gradient of [`Self::energy`] in `z` given the local-step output.
    pub fn gradient(&self, z: &DVector<f64>, p: &DVector<f64>, hist: &History, rotational_grad: &DVector<f64>) -> DVector<f64> {
        let h2 = self.h * self.h;
        let dz = z - &hist.z;
        let mut g = &self.basis_stiffness * z + &self.basis_rest_force + self.grad_basis.tr_mul(rotational_grad) + (&self.basis_mass * dz) / h2 - &hist.f_ext;
        if self.p_dim() > 0 {
            g += &self.coupled_stiffness * p + (&self.coupled_mass * (p - &hist.p)) / h2;
        }
        g
    }

    /// Global step from `z`: the prefactorized solve `A dz = -g`, taken in
    /// full for ARAP and with Armijo backtracking for corot. Returns the new
    /// iterate and whether the line search failed (in which case `z` is
    /// returned unchanged).
    pub fn global_step(
        &self,
        z: &DVector<f64>,
        p: &DVector<f64>,
        hist: &History,
        rotational_grad: &DVector<f64>,
        config: &SolverConfig,
    ) -> (DVector<f64>, bool) {
        let g = self.gradient(z, p, hist, rotational_grad);
        let dz = -self.solver.solve(&g);
        match config.energy {
            ElasticEnergy::Arap => (z + dz, false),
            ElasticEnergy::Corot => {
                let e0 = self.energy(z, p, hist, config.energy);
                let slope = g.dot(&dz);
                if slope >= 0.0 {
                    return (z.clone(), slope > 0.0);
                }
                let mut alpha = 1.0;
                for _ in 0..=config.ls_max {
                    let trial = z + &dz * alpha;
                    if self.energy(&trial, p, hist, config.energy) <= e0 + config.ls_c * alpha * slope {
                        return (trial, false);
                    }
                    alpha *= config.ls_beta;
                }
                log::debug!("line search failed after {} halvings", config.ls_max);
                (z.clone(), true)
            }
        }
    }

    /// One simulation step to rig parameters `p_new`: local-global iterations
    /// from the warm start, then the history roll.
    pub fn step(&self, state: &mut SimState, p_new: &DVector<f64>, config: &SolverConfig) -> Result<StepReport> {
        if p_new.len() != self.p_dim() || state.z.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "state has {} / {} entries, operators expect {} / {}",
                state.z.len(),
                p_new.len(),
                self.dim(),
                self.p_dim()
            )));
        }
        let hist = History {
            z: state.z_hist(),
            p: state.p_hist(),
            f_ext: state.f_ext.clone(),
        };
        let mut z = if config.warm_start_previous {
            state.z.clone()
        } else {
            DVector::zeros(self.dim())
        };
        let mut energies = vec![self.energy(&z, p_new, &hist, config.energy)];
        let mut iterations = 0;
        let mut converged = false;
        let mut failures = 0;
        let tol = config.tol * self.bbox_diagonal;
        while iterations < config.max_iters {
            let rotational_grad = self.local_step(&z, p_new, config.energy, config.execution)?;
            let (next, failed) = self.global_step(&z, p_new, &hist, &rotational_grad, config);
            failures += usize::from(failed);
            iterations += 1;
            let change = (&next - &z).amax();
            z = next;
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("reduced coordinates"));
            }
            energies.push(self.energy(&z, p_new, &hist, config.energy));
            if change < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            log::debug!("step {} stopped after {iterations} iterations", state.step);
        }
        state.z_prev = std::mem::replace(&mut state.z, z);
        state.p_prev = std::mem::replace(&mut state.p, p_new.clone());
        state.step += 1;
        Ok(StepReport {
            iterations,
            converged,
            energy: *energies.last().expect("initial energy"),
            energies,
            line_search_failures: failures,
        })
    }
}

/// History point and external force of a step.
#[derive(Debug, Clone)]
pub struct History {
    pub z: DVector<f64>,
    pub p: DVector<f64>,
    pub f_ext: DVector<f64>,
}

impl History {
    pub fn from_state(state: &SimState) -> Self {
        History {
            z: state.z_hist(),
            p: state.p_hist(),
            f_ext: state.f_ext.clone(),
        }
    }
}

/// Deformed positions `x0 + J p + B z` (axis-major).
pub fn project_full(rest: &[f64], basis: &DMatrix<f64>, jac: &DMatrix<f64>, z: &DVector<f64>, p: &DVector<f64>) -> Vec<f64> {
    let mut x = DVector::from_column_slice(rest);
    if basis.ncols() > 0 {
        x += basis * z;
    }
    if jac.ncols() > 0 {
        x += jac * p;
    }
    x.data.into()
}
