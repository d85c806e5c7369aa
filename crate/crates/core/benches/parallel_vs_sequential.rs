use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eigenskin::clusters::{cluster_features, kmeans_pp, Clustering};
use eigenskin::mesh::{assemble_operators_with, primitives, HessianKind, MaterialField, TetMesh};
use eigenskin::rig::{rig_jacobian, LinearRig};
use eigenskin::solver::{precompute_reduced_operators, ElasticEnergy};
use eigenskin::Execution;

const POLICIES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn mesh() -> TetMesh {
    primitives::box_with_tets(20_000, [4.0, 1.0, 1.0]).unwrap()
}

fn smooth_weights(mesh: &TetMesh, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(mesh.n_vertices(), m, |v, k| {
        let p = mesh.vertices()[v];
        (1.0 + k as f64 * 0.3 * p.x).cos() + 0.1 * k as f64 * p.y * p.z
    })
}

fn assembly(c: &mut Criterion) {
    let mesh = mesh();
    let mat = MaterialField::homogeneous(mesh.n_tets(), 1.0, 5.0, 1.0);
    let mut group = c.benchmark_group("assembly");
    group.sample_size(10);
    for exec in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| assemble_operators_with(&mesh, &mat, HessianKind::Corotational, exec).unwrap())
        });
    }
    group.finish();
}

fn kmeans(c: &mut Criterion) {
    let mesh = mesh();
    let w = smooth_weights(&mesh, 8);
    let eig: Vec<f64> = (0..8).map(|k| k as f64 + 1.0).collect();
    let features = cluster_features(&w, &eig, &mesh);
    let mut group = c.benchmark_group("kmeans");
    group.sample_size(10);
    for exec in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| kmeans_pp(&features, 64, 1, exec).unwrap())
        });
    }
    group.finish();
}

fn local_step(c: &mut Criterion) {
    let mesh = mesh();
    let mat = MaterialField::homogeneous(mesh.n_tets(), 1.0, 5.0, 1.0);
    let ops = assemble_operators_with(&mesh, &mat, HessianKind::Arap, Execution::default()).unwrap();
    let rig = LinearRig::affine_handle(mesh.n_vertices());
    let jac = rig_jacobian(&rig, &mesh).unwrap();
    let m = 8;
    let w = smooth_weights(&mesh, m);
    let basis = eigenskin::subspace::SkinningSubspace::new(w, vec![1.0; m], &mesh).basis;
    // one cluster per tet stresses the per-cluster polar decompositions
    let clustering = Clustering::from_labels((0..mesh.n_tets()).collect(), &mesh.tet_volumes()).unwrap();
    let red = precompute_reduced_operators(&mesh, &ops, &mat, &jac, &basis, &clustering, 1.0 / 60.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = DVector::from_fn(red.dim(), |_, _| rng.random_range(-0.1..0.1));
    let p = DVector::from_fn(red.p_dim(), |_, _| rng.random_range(-0.1..0.1));
    let mut group = c.benchmark_group("local_step");
    for exec in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| red.local_step(&z, &p, ElasticEnergy::Corot, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, assembly, kmeans, local_step);
criterion_main!(benches);
