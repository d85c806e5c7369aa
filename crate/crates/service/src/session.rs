//! The simulation side of a live session, independent of any transport.

use eigenskin::pipeline::{Precomputed, Simulation};
use eigenskin::solver::SolverConfig;
use eigenskin::Error;

use crate::protocol::{Frame, Setup, PROTOCOL_VERSION};
use crate::Result;

pub struct Session {
    sim: Simulation,
    p: Vec<f64>,
    next_t: u64,
}

/// What one tick produced: the frame to broadcast and, if the solver
/// diverged and the session was reset, a warning for the clients.
pub struct Tick {
    pub frame: Frame,
    pub warning: Option<String>,
}

impl Session {
    pub fn new(pre: &Precomputed, config: SolverConfig) -> Result<Self> {
        let sim = Simulation::new(pre, config)?;
        let p = vec![0.0; sim.p_dim()];
        Ok(Session { sim, p, next_t: 0 })
    }

    pub fn p_dim(&self) -> usize {
        self.sim.p_dim()
    }

    pub fn dim(&self) -> usize {
        self.sim.dim()
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    /// Rig parameters used by every following step until replaced.
    pub fn set_params(&mut self, p: Vec<f64>) -> Result<()> {
        if p.len() != self.p_dim() {
            return Err(Error::Dimension(format!("got {} rig parameters, expected {}", p.len(), self.p_dim())).into());
        }
        self.p = p;
        Ok(())
    }

    pub fn set_force(&mut self, f: &[f64]) -> Result<()> {
        Ok(self.sim.set_force(f)?)
    }

    /// Back to rest: zero coordinates, histories, rig parameters and force.
    /// The step counter keeps increasing.
    pub fn reset(&mut self) {
        self.sim.reset();
        self.sim.state.f_ext.fill(0.0);
        self.p.fill(0.0);
    }

    pub fn tick(&mut self) -> Tick {
        let mut warning = None;
        match self.sim.step(&self.p) {
            Ok(_) if self.sim.state.is_finite() => {}
            Ok(_) | Err(Error::NonFinite(_)) => {
                warning = Some(format!("simulation diverged at step {}; state reset", self.next_t));
                log::warn!("simulation diverged at step {}; resetting", self.next_t);
                self.reset();
            }
            Err(e) => {
                warning = Some(format!("step {} failed: {e}; state reset", self.next_t));
                log::error!("step {} failed: {e}", self.next_t);
                self.reset();
            }
        }
        let frame = Frame {
            t: self.next_t,
            z: self.sim.state.z.iter().map(|&v| v as f32).collect(),
            p: self.p.iter().map(|&v| v as f32).collect(),
        };
        self.next_t += 1;
        Tick { frame, warning }
    }
}

/// Surface geometry and weights for a viewer.
pub fn setup_for(pre: &Precomputed) -> Setup {
    let mesh = &pre.mesh;
    let surface = mesh.surface_vertices();
    let mut remap = vec![u32::MAX; mesh.n_vertices()];
    for (k, &v) in surface.iter().enumerate() {
        remap[v] = k as u32;
    }
    let triangles = mesh.surface_tris().iter().flat_map(|t| t.map(|v| remap[v])).collect();
    let verts = mesh.vertices();
    let w = &pre.subspace.weights;
    let rw = pre.rig.weights();
    Setup {
        version: PROTOCOL_VERSION,
        n_vertices: mesh.n_vertices() as u32,
        n_modes: pre.subspace.n_modes() as u32,
        p_dim: pre.rig.p_dim() as u32,
        surface_vertices: surface.iter().map(|&v| v as u32).collect(),
        triangles,
        rest: surface.iter().flat_map(|&v| [verts[v].x as f32, verts[v].y as f32, verts[v].z as f32]).collect(),
        weights: surface.iter().flat_map(|&v| (0..w.ncols()).map(move |k| w[(v, k)] as f32)).collect(),
        rig_weights: surface
            .iter()
            .flat_map(|&v| (0..pre.rig.n_bones()).map(move |b| rw[(v, b)] as f32))
            .collect(),
    }
}
