//! Full-space local-global solver over every vertex, with the complementarity
//! constraint enforced through a KKT global step. Dense, so only for small
//! meshes; it exists to check the reduced solver.

use nalgebra::{DMatrix, DVector, Matrix3};

use super::{polar_rotation, ElasticEnergy, SolverConfig, StepReport};
use crate::error::{Error, Result};
use crate::linalg::{independent_rows, spmv, to_dense, Sparse};
use crate::mesh::{FullSpaceOperators, MaterialField, TetMesh};

/// Largest `3n` accepted by [`FullSpaceProblem::new`].
pub const MAX_REFERENCE_DOFS: usize = 3000;

#[derive(Debug, Clone)]
pub struct FullSpaceProblem {
    rest: DVector<f64>,
    laplacian: DMatrix<f64>,
    mass: DVector<f64>,
    grad: Sparse,
    volumes: Vec<f64>,
    mu: Vec<f64>,
    lambda: Vec<f64>,
    jac: DMatrix<f64>,
    /// Independent columns of the complementarity matrix.
    constraint: DMatrix<f64>,
    h: f64,
    kkt: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    bbox_diagonal: f64,
}

/// Full-space complementary displacement `u` with histories.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub u: DVector<f64>,
    pub u_prev: DVector<f64>,
    pub p: DVector<f64>,
    pub p_prev: DVector<f64>,
    pub f_ext: DVector<f64>,
}

impl FullState {
    pub fn at_rest(n3: usize, p_dim: usize) -> Self {
        FullState {
            u: DVector::zeros(n3),
            u_prev: DVector::zeros(n3),
            p: DVector::zeros(p_dim),
            p_prev: DVector::zeros(p_dim),
            f_ext: DVector::zeros(n3),
        }
    }
}

struct FullHistory {
    u: DVector<f64>,
    p: DVector<f64>,
}

impl FullSpaceProblem {
    pub fn new(
        mesh: &TetMesh,
        ops: &FullSpaceOperators,
        mat: &MaterialField,
        jac: &DMatrix<f64>,
        complementarity: &DMatrix<f64>,
        h: f64,
    ) -> Result<Self> {
        let n3 = 3 * mesh.n_vertices();
        if n3 > MAX_REFERENCE_DOFS {
            return Err(Error::Config(format!(
                "reference solver is limited to {MAX_REFERENCE_DOFS} degrees of freedom, mesh has {n3}"
            )));
        }
        if !(h > 0.0) {
            return Err(Error::Config(format!("timestep must be positive, got {h}")));
        }
        mat.validate(mesh.n_tets())?;
        let constraint = independent_rows(&complementarity.transpose(), 1e-10).transpose();
        let c = if complementarity.ncols() == 0 { 0 } else { constraint.ncols() };
        let laplacian = to_dense(&ops.laplacian);
        let mass = DVector::from_vec(ops.mass.clone());
        let mut kkt = DMatrix::zeros(n3 + c, n3 + c);
        kkt.view_mut((0, 0), (n3, n3)).copy_from(&(&laplacian + DMatrix::from_diagonal(&mass) / (h * h)));
        if c > 0 {
            kkt.view_mut((0, n3), (n3, c)).copy_from(&constraint);
            kkt.view_mut((n3, 0), (c, n3)).copy_from(&constraint.transpose());
        }
        Ok(FullSpaceProblem {
            rest: DVector::from_vec(mesh.rest_positions()),
            laplacian,
            mass,
            grad: ops.grad.clone(),
            volumes: ops.volumes.clone(),
            mu: mat.mu.clone(),
            lambda: mat.lambda.clone(),
            jac: jac.clone(),
            constraint: if c > 0 { constraint } else { DMatrix::zeros(n3, 0) },
            h,
            kkt: kkt.lu(),
            bbox_diagonal: mesh.bbox_diagonal(),
        })
    }

    fn positions(&self, u: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        let mut x = &self.rest + u;
        if self.jac.ncols() > 0 {
            x += &self.jac * p;
        }
        x
    }

    fn tet_gradients(&self, x: &DVector<f64>) -> Vec<Matrix3<f64>> {
        let f = spmv(&self.grad, x.as_slice());
        f.chunks_exact(9).map(Matrix3::from_row_slice).collect()
    }

    fn energy(&self, u: &DVector<f64>, p: &DVector<f64>, hist: &FullHistory, f_ext: &DVector<f64>, kind: ElasticEnergy) -> f64 {
        let x = self.positions(u, p);
        let mut e = 0.5 * x.dot(&(&self.laplacian * &x));
        for (t, f) in self.tet_gradients(&x).iter().enumerate() {
            let s = (polar_rotation(f).transpose() * f).trace();
            e += self.volumes[t] * self.mu[t] * (1.5 - s);
            if kind == ElasticEnergy::Corot {
                e += self.volumes[t] * self.lambda[t] / 4.0 * (s - 3.0).powi(2);
            }
        }
        let mut d = u - &hist.u;
        if self.jac.ncols() > 0 {
            d += &self.jac * (p - &hist.p);
        }
        e + d.dot(&d.component_mul(&self.mass)) / (2.0 * self.h * self.h) - f_ext.dot(u)
    }

    fn gradient(&self, u: &DVector<f64>, p: &DVector<f64>, hist: &FullHistory, f_ext: &DVector<f64>, kind: ElasticEnergy) -> DVector<f64> {
        let x = self.positions(u, p);
        let mut df = vec![0.0; 9 * self.volumes.len()];
        for (t, f) in self.tet_gradients(&x).iter().enumerate() {
            let r = polar_rotation(f);
            let mut g = r * (-self.volumes[t] * self.mu[t]);
            if kind == ElasticEnergy::Corot {
                let s = (r.transpose() * f).trace();
                g += r * (self.volumes[t] * self.lambda[t] / 2.0 * (s - 3.0));
            }
            for a in 0..3 {
                for b in 0..3 {
                    df[9 * t + 3 * a + b] = g[(a, b)];
                }
            }
        }
        let kt = DVector::from_vec(spmv(&self.grad.transpose(), &df));
        let mut d = u - &hist.u;
        if self.jac.ncols() > 0 {
            d += &self.jac * (p - &hist.p);
        }
        &self.laplacian * x + kt + d.component_mul(&self.mass) / (self.h * self.h) - f_ext
    }

    /// Energy of complementary displacement `u` at rig parameters `p_new`
    /// for a step taken from `state`.
    pub fn total_energy(&self, u: &DVector<f64>, p_new: &DVector<f64>, state: &FullState, kind: ElasticEnergy) -> f64 {
        let hist = FullHistory {
            u: &state.u * 2.0 - &state.u_prev,
            p: &state.p * 2.0 - &state.p_prev,
        };
        self.energy(u, p_new, &hist, &state.f_ext, kind)
    }

    /// One step of the full-space solver to rig parameters `p_new`, from a
    /// zero warm start, with the same iteration and convergence rules as the
    /// reduced solver.
    pub fn step(&self, state: &mut FullState, p_new: &DVector<f64>, config: &SolverConfig) -> Result<StepReport> {
        let n3 = self.rest.len();
        let hist = FullHistory {
            u: &state.u * 2.0 - &state.u_prev,
            p: &state.p * 2.0 - &state.p_prev,
        };
        let c = self.constraint.ncols();
        let mut u = DVector::zeros(n3);
        let mut energies = vec![self.energy(&u, p_new, &hist, &state.f_ext, config.energy)];
        let mut iterations = 0;
        let mut converged = false;
        let mut failures = 0;
        while iterations < config.max_iters {
            let g = self.gradient(&u, p_new, &hist, &state.f_ext, config.energy);
            let mut rhs = DVector::zeros(n3 + c);
            rhs.rows_mut(0, n3).copy_from(&(-&g));
            if c > 0 {
                rhs.rows_mut(n3, c).copy_from(&(-self.constraint.tr_mul(&u)));
            }
            let sol = self.kkt.solve(&rhs).ok_or_else(|| Error::Eigen("KKT system is singular".into()))?;
            let du = sol.rows(0, n3).clone_owned();
            let next = match config.energy {
                ElasticEnergy::Arap => &u + &du,
                ElasticEnergy::Corot => {
                    let e0 = *energies.last().expect("energy");
                    let slope = g.dot(&du);
                    let mut alpha = 1.0;
                    let mut accepted = None;
                    if slope < 0.0 {
                        for _ in 0..=config.ls_max {
                            let trial = &u + &du * alpha;
                            if self.energy(&trial, p_new, &hist, &state.f_ext, config.energy) <= e0 + config.ls_c * alpha * slope {
                                accepted = Some(trial);
                                break;
                            }
                            alpha *= config.ls_beta;
                        }
                    }
                    accepted.unwrap_or_else(|| {
                        failures += 1;
                        u.clone()
                    })
                }
            };
            iterations += 1;
            let change = (&next - &u).amax();
            u = next;
            energies.push(self.energy(&u, p_new, &hist, &state.f_ext, config.energy));
            if change < config.tol * self.bbox_diagonal {
                converged = true;
                break;
            }
        }
        state.u_prev = std::mem::replace(&mut state.u, u);
        state.p_prev = std::mem::replace(&mut state.p, p_new.clone());
        Ok(StepReport {
            iterations,
            converged,
            energy: *energies.last().expect("energy"),
            energies,
            line_search_failures: failures,
        })
    }

    /// `max |C^T u|` over the independent constraint columns.
    pub fn constraint_residual(&self, u: &DVector<f64>) -> f64 {
        if self.constraint.ncols() == 0 {
            return 0.0;
        }
        self.constraint.tr_mul(u).amax()
    }
}
