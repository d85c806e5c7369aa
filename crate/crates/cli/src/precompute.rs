use anyhow::{bail, Context, Result};

use eigenskin::cache::write_cache;
use eigenskin::mesh::{load_material, load_tet_mesh};
use eigenskin::pipeline::{hex, precompute, PrecomputeConfig};
use eigenskin::rig::load_rig;

use crate::output::write_manifest;
use crate::{execution, PrecomputeArgs};

pub fn run(args: &PrecomputeArgs) -> Result<()> {
    if args.modes == 0 {
        bail!("--modes must be at least 1");
    }
    if args.clusters == 0 {
        bail!("--clusters must be at least 1");
    }
    for path in [&args.mesh, &args.material, &args.rig].into_iter().chain(&args.leak) {
        if !path.is_file() {
            bail!("input {} does not exist", path.display());
        }
    }

    let mesh = load_tet_mesh(&args.mesh).with_context(|| format!("loading mesh {}", args.mesh.display()))?;
    let material = load_material(&args.material, mesh.n_tets())
        .with_context(|| format!("loading material {}", args.material.display()))?;
    let rig = load_rig(&args.rig, mesh.n_vertices()).with_context(|| format!("loading rig {}", args.rig.display()))?;
    let leak_field = match &args.leak {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str::<Vec<f64>>(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };
    let config = PrecomputeConfig {
        modes: args.modes,
        clusters: args.clusters,
        seed: args.seed,
        hessian: args.hessian.into(),
        leak_field,
        execution: execution(args.sequential),
    };
    let (pre, report) = precompute(&mesh, &material, &rig, &config).context("precompute failed")?;
    write_cache(&pre, &args.out).with_context(|| format!("writing {}", args.out.display()))?;

    let eigenvalues = &pre.subspace.eigenvalues;
    println!(
        "n = {}, t = {}, bones = {}",
        mesh.n_vertices(),
        mesh.n_tets(),
        rig.n_bones()
    );
    println!("m = {}, r_eff = {}", pre.subspace.n_modes(), pre.n_clusters());
    println!(
        "eigenvalues: {}",
        eigenvalues.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(" ")
    );
    println!(
        "constraint rows {}, weight residual {:.3e}, complementarity residual {:.3e}",
        report.constraint_rows, report.weight_residual, report.complementarity_residual
    );
    println!("wrote {}", args.out.display());

    let manifest = args.out.with_extension("manifest.json");
    write_manifest(
        &manifest,
        "precompute",
        args,
        serde_json::json!({
            "n_vertices": mesh.n_vertices(),
            "n_tets": mesh.n_tets(),
            "modes": pre.subspace.n_modes(),
            "clusters": pre.n_clusters(),
            "eigenvalues": eigenvalues,
            "constraint_rows": report.constraint_rows,
            "weight_residual": report.weight_residual,
            "complementarity_residual": report.complementarity_residual,
            "input_hash": hex(&pre.input_hash),
        }),
    )
}
