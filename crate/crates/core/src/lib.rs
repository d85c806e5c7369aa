//! Reduced-order complementary dynamics for rigged tetrahedral meshes.
//!
//! Precompute builds rig-complementary skinning eigenmodes and a clustering of
//! the tetrahedra; the solver then steps a local-global elastodynamics problem
//! whose per-step cost depends only on the mode and cluster counts.

pub mod cache;
pub mod clusters;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod par;
pub mod pipeline;
pub mod rig;
pub mod solver;
pub mod subspace;

pub use error::{Error, Result};
pub use par::Execution;
