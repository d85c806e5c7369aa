use eigenskin::cache::encode;
use eigenskin::mesh::{assemble_operators, primitives, HessianKind, MaterialField};
use eigenskin::pipeline::{precompute, PrecomputeConfig, Simulation};
use eigenskin::rig::{chain_weights, complementarity_matrix, momentum_leak_field, LinearRig};
use eigenskin::subspace::{weight_space_constraint, weight_space_skinning_jacobians};
use eigenskin::solver::SolverConfig;
use eigenskin::{Error, Execution};

#[test]
fn unit_tet_null_rig_single_mode_is_constant() {
    let mesh = primitives::unit_tet();
    let mat = MaterialField::homogeneous(1, 1.0, 0.0, 1.0);
    let cfg = PrecomputeConfig {
        modes: 1,
        clusters: 1,
        ..Default::default()
    };
    let (pre, _) = precompute(&mesh, &mat, &LinearRig::null_rig(4), &cfg).unwrap();
    let w = pre.subspace.weights.column(0);
    assert!(pre.subspace.eigenvalues[0].abs() < 1e-10);
    for v in w.iter() {
        assert!((v - w[0]).abs() < 1e-12 && w[0] > 0.0);
    }
}

#[test]
fn too_many_modes_names_the_bound() {
    let mesh = primitives::box_grid([2, 1, 1], [2.0, 1.0, 1.0]).unwrap();
    let n = mesh.n_vertices();
    let mat = MaterialField::homogeneous(mesh.n_tets(), 1.0, 0.0, 1.0);
    let cfg = PrecomputeConfig {
        modes: n,
        clusters: 1,
        ..Default::default()
    };
    // bound from an independent SVD rank of the weight-space constraint
    let ops = assemble_operators(&mesh, &mat, HessianKind::Arap).unwrap();
    let leak = momentum_leak_field(&mesh, None).unwrap();
    let comp = complementarity_matrix(&LinearRig::affine_handle(n), &mesh, &ops, &leak).unwrap();
    let weight_constraint = weight_space_constraint(&comp.matrix, &weight_space_skinning_jacobians(&mesh)).unwrap();
    let sv = weight_constraint.clone().svd(false, false).singular_values;
    let rank = sv.iter().filter(|&&s| s > 1e-10 * sv[0]).count();
    let bound = n - rank;
    let err = precompute(&mesh, &mat, &LinearRig::affine_handle(n), &cfg).unwrap_err();
    match err {
        Error::TooManyModes { requested, available } => {
            assert_eq!(requested, n);
            assert_eq!(available, bound);
            assert!(err.to_string().contains(&format!("{}", bound)));
        }
        e => panic!("unexpected {e}"),
    }
    assert!(precompute(&mesh, &mat, &LinearRig::affine_handle(n), &PrecomputeConfig { modes: bound, ..cfg }).is_ok());
}

#[test]
fn rerun_is_byte_identical_across_execution_policies() {
    let mesh = primitives::jittered(&primitives::box_grid([5, 2, 2], [2.5, 1.0, 1.0]).unwrap(), 0.04, 5).unwrap();
    let rig = LinearRig::lbs_skeleton(chain_weights(&mesh, 2, 0)).unwrap();
    let mat = MaterialField::homogeneous(mesh.n_tets(), 2.0, 4.0, 1.0);
    let run = |execution| {
        let cfg = PrecomputeConfig {
            modes: 4,
            clusters: 6,
            seed: 17,
            execution,
            ..Default::default()
        };
        encode(&precompute(&mesh, &mat, &rig, &cfg).unwrap().0)
    };
    let a = run(Execution::Parallel);
    assert_eq!(a, run(Execution::Parallel));
    assert_eq!(a, run(Execution::Sequential));
}

#[test]
fn zero_animation_stays_at_rest() {
    let mesh = primitives::box_grid([4, 2, 2], [2.0, 1.0, 1.0]).unwrap();
    let rig = LinearRig::lbs_skeleton(chain_weights(&mesh, 2, 0)).unwrap();
    let mat = MaterialField::homogeneous(mesh.n_tets(), 1.0, 1.0, 1.0);
    let cfg = PrecomputeConfig {
        modes: 3,
        clusters: 4,
        ..Default::default()
    };
    let (pre, _) = precompute(&mesh, &mat, &rig, &cfg).unwrap();
    let mut sim = Simulation::new(&pre, SolverConfig::default()).unwrap();
    for _ in 0..5 {
        sim.step(&vec![0.0; sim.p_dim()]).unwrap();
        assert!(sim.state.z.amax() < 1e-12);
    }
    let rest = mesh.rest_positions();
    for (a, b) in sim.positions().iter().zip(&rest) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(sim.step(&[0.0]).is_err());
    assert!(sim.set_force(&[0.0]).is_err());
}

#[test]
fn rig_vertex_count_must_match() {
    let mesh = primitives::unit_tet();
    let mat = MaterialField::homogeneous(1, 1.0, 0.0, 1.0);
    let err = precompute(&mesh, &mat, &LinearRig::null_rig(5), &PrecomputeConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}
