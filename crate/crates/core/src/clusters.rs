//! Clustering of tetrahedra from eigenvalue-scaled subspace features and the
//! volume-weighted grouping operators `G` / `G9`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{csr_from_triplets, Sparse};
use crate::mesh::TetMesh;
use crate::par::{map_indexed, Execution};

pub const LLOYD_MAX_ITERS: usize = 100;

/// Tet-averaged weights, each mode scaled by `1 / (lambda^2 + delta)` with
/// `delta = (1e-6 * max(Lambda, 1e-30))^2`.
pub fn cluster_features(weights: &DMatrix<f64>, eigenvalues: &[f64], mesh: &TetMesh) -> DMatrix<f64> {
    let m = weights.ncols();
    assert_eq!(eigenvalues.len(), m);
    let lam_max = eigenvalues.iter().copied().fold(1e-30, f64::max);
    let delta = (1e-6 * lam_max).powi(2);
    let scale: Vec<f64> = eigenvalues.iter().map(|l| 1.0 / (l * l + delta)).collect();
    DMatrix::from_fn(mesh.n_tets(), m, |j, k| {
        let t = mesh.tets()[j];
        let avg = t.iter().map(|&v| weights[(v, k)]).sum::<f64>() / 4.0;
        avg * scale[k]
    })
}

fn sq_dist(features: &DMatrix<f64>, row: usize, center: &[f64]) -> f64 {
    center.iter().enumerate().map(|(k, c)| (features[(row, k)] - c).powi(2)).sum()
}

fn centroid_of(features: &DMatrix<f64>, row: usize) -> Vec<f64> {
    features.row(row).iter().copied().collect()
}

/// Sum of squared distances of each row to the mean of its cluster.
pub fn kmeans_objective(features: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let r = labels.iter().copied().max().map_or(0, |m| m + 1);
    let centers = centroids(features, labels, r);
    (0..features.nrows()).map(|i| sq_dist(features, i, &centers[labels[i]])).sum()
}

fn centroids(features: &DMatrix<f64>, labels: &[usize], r: usize) -> Vec<Vec<f64>> {
    let d = features.ncols();
    let mut sums = vec![vec![0.0; d]; r];
    let mut counts = vec![0usize; r];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for k in 0..d {
            sums[l][k] += features[(i, k)];
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

/// k-means++ seeding followed by Lloyd iterations (capped at
/// [`LLOYD_MAX_ITERS`], stopping when no label changes). Returns `r` non-empty
/// clusters; deterministic for a fixed seed.
pub fn kmeans_pp(features: &DMatrix<f64>, r: usize, seed: u64, exec: Execution) -> Result<Vec<usize>> {
    let t = features.nrows();
    if r == 0 || r > t {
        return Err(Error::TooManyClusters { requested: r, available: t });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = vec![centroid_of(features, rng.random_range(0..t))];
    let mut best: Vec<f64> = (0..t).map(|i| sq_dist(features, i, &centers[0])).collect();
    while centers.len() < r {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = t - 1;
            for (i, d) in best.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..t)
        };
        let c = centroid_of(features, pick);
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(features, i, &c));
        }
        centers.push(c);
    }

    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        map_indexed(exec, t, |i| {
            let mut best = (f64::INFINITY, 0);
            for (k, c) in centers.iter().enumerate() {
                let d = sq_dist(features, i, c);
                if d < best.0 {
                    best = (d, k);
                }
            }
            best.1
        })
    };

    let mut labels = assign(&centers);
    for _ in 0..LLOYD_MAX_ITERS {
        centers = centroids(features, &labels, r);
        repair_empty(features, &mut labels, &mut centers);
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    repair_empty(features, &mut labels, &mut centers);
    Ok(labels)
}

/// Reseeds each empty cluster at the point farthest from its own centroid.
fn repair_empty(features: &DMatrix<f64>, labels: &mut [usize], centers: &mut [Vec<f64>]) {
    let r = centers.len();
    loop {
        let mut counts = vec![0usize; r];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .map(|i| (sq_dist(features, i, &centers[labels[i]]), i))
            .fold((-1.0, usize::MAX), |a, b| if b.0 > a.0 { b } else { a })
            .1;
        if far == usize::MAX {
            return;
        }
        labels[far] = empty;
        centers[empty] = centroid_of(features, far);
    }
}

/// Splits every cluster into its face-connected components and relabels
/// compactly in order of first appearance.
pub fn split_cluster_components(labels: &[usize], mesh: &TetMesh) -> Vec<usize> {
    let t = labels.len();
    let mut parent: Vec<usize> = (0..t).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in mesh.face_adjacency() {
        if labels[a] == labels[b] {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut ids = std::collections::HashMap::new();
    (0..t)
        .map(|j| {
            let root = find(&mut parent, j);
            let next = ids.len();
            *ids.entry(root).or_insert(next)
        })
        .collect()
}

/// Per-tet labels and the grouping operators built from them.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    /// `r x t` volume-weighted averaging.
    pub group: Sparse,
    /// `9r x 9t`, the same averaging applied to each flattened component.
    pub group9: Sparse,
}

impl Clustering {
    pub fn from_labels(labels: Vec<usize>, volumes: &[f64]) -> Result<Self> {
        let (group, group9) = grouping_matrices(&labels, volumes)?;
        Ok(Clustering {
            n_clusters: group.nrows(),
            labels,
            group,
            group9,
        })
    }
}

pub fn grouping_matrices(labels: &[usize], volumes: &[f64]) -> Result<(Sparse, Sparse)> {
    let t = labels.len();
    if volumes.len() != t {
        return Err(Error::Dimension(format!("{t} labels for {} volumes", volumes.len())));
    }
    let r = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut totals = vec![0.0; r];
    for (&l, &v) in labels.iter().zip(volumes) {
        totals[l] += v;
    }
    if let Some(c) = totals.iter().position(|&v| v == 0.0) {
        return Err(Error::Config(format!("cluster {c} is empty")));
    }
    let weights: Vec<f64> = labels.iter().zip(volumes).map(|(&l, &v)| v / totals[l]).collect();
    let g = csr_from_triplets(r, t, (0..t).map(|j| (labels[j], j, weights[j])));
    let g9 = csr_from_triplets(
        9 * r,
        9 * t,
        (0..t).flat_map(|j| (0..9).map(move |k| (9 * labels[j] + k, 9 * j + k))).map(|(a, b)| (a, b, weights[b / 9])),
    );
    Ok((g, g9))
}

/// Features, k-means++ and component splitting.
pub fn cluster_tets(
    weights: &DMatrix<f64>,
    eigenvalues: &[f64],
    mesh: &TetMesh,
    r: usize,
    seed: u64,
    exec: Execution,
) -> Result<Clustering> {
    let features = cluster_features(weights, eigenvalues, mesh);
    let labels = kmeans_pp(&features, r, seed, exec)?;
    let labels = split_cluster_components(&labels, mesh);
    Clustering::from_labels(labels, &mesh.tet_volumes())
}
