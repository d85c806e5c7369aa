use anyhow::{bail, Context, Result};
use nalgebra::DVector;

use eigenskin::cache::read_cache;
use eigenskin::mesh::load_tet_mesh;
use eigenskin::pipeline::{hex, input_hash, Simulation};
use eigenskin::rig::{load_rig, Animation};
use eigenskin::solver::{FullSpaceProblem, FullState};

use crate::output::{create, create_dir, csv_row, write_manifest, write_obj, write_tet_positions};
use crate::SimulateArgs;

use std::io::Write;

pub fn run(args: &SimulateArgs) -> Result<()> {
    let pre = read_cache(&args.cache).with_context(|| format!("loading cache {}", args.cache.display()))?;
    if let (Some(mesh_path), Some(rig_path)) = (&args.mesh, &args.rig) {
        let mesh = load_tet_mesh(mesh_path).with_context(|| format!("loading mesh {}", mesh_path.display()))?;
        let rig = load_rig(rig_path, mesh.n_vertices()).with_context(|| format!("loading rig {}", rig_path.display()))?;
        if input_hash(&mesh, &rig) != pre.input_hash {
            bail!(
                "cache {} was not built from {} and {}",
                args.cache.display(),
                mesh_path.display(),
                rig_path.display()
            );
        }
    }
    if args.gravity.as_ref().is_some_and(|g| g.len() != 3) {
        bail!("--gravity takes three comma-separated components");
    }
    let anim = Animation::load(&args.anim, pre.rig.p_dim()).with_context(|| format!("loading {}", args.anim.display()))?;
    let config = args.solver.config(anim.dt)?;
    create_dir(&args.out)?;

    let mut sim = Simulation::new(&pre, config)?;
    let mut oracle = if args.oracle {
        let full = FullSpaceProblem::new(&pre.mesh, &sim.ops, &pre.material, &sim.comp.jacobian, &sim.comp.matrix, config.h)
            .context("the oracle needs a small mesh")?;
        Some((full, FullState::at_rest(3 * pre.mesh.n_vertices(), pre.rig.p_dim())))
    } else {
        None
    };
    let mesh = &pre.mesh;
    let basis = &pre.subspace.basis;
    if let Some(g) = &args.gravity {
        let n = mesh.n_vertices();
        let f = DVector::from_fn(3 * n, |i, _| sim.ops.mass[i] * g[i / n]);
        sim.set_force(basis.tr_mul(&f).as_slice())?;
        if let Some((_, state)) = oracle.as_mut() {
            state.f_ext = f;
        }
    }

    let mut z_out = create(&args.out.join("z.csv"))?;
    writeln!(z_out, "{}", csv_row(std::iter::once("frame".to_string()).chain((0..sim.dim()).map(|i| format!("z{i}")))))?;
    let mut diag = create(&args.out.join("diagnostics.csv"))?;
    let mut header = "frame,iterations,converged,energy,line_search_failures,complementarity".to_string();
    if oracle.is_some() {
        header.push_str(",oracle_rel_err");
    }
    writeln!(diag, "{header}")?;
    if args.obj || args.tets {
        create_dir(&args.out.join("frames"))?;
    }

    let (mut worst_comp, mut worst_oracle, mut unconverged) = (0.0f64, 0.0f64, 0);
    for (k, p) in anim.frames.iter().enumerate() {
        let report = sim.step(p).with_context(|| format!("frame {k}"))?;
        unconverged += usize::from(!report.converged);
        let comp = sim.complementarity_residual();
        worst_comp = worst_comp.max(comp);
        writeln!(
            z_out,
            "{}",
            csv_row(std::iter::once(k.to_string()).chain(sim.state.z.iter().map(|v| format!("{v:?}"))))
        )?;
        let mut row = vec![
            k.to_string(),
            report.iterations.to_string(),
            report.converged.to_string(),
            format!("{:?}", report.energy),
            report.line_search_failures.to_string(),
            format!("{comp:e}"),
        ];
        if let Some((full, state)) = oracle.as_mut() {
            full.step(state, &DVector::from_column_slice(p), &config)
                .with_context(|| format!("oracle frame {k}"))?;
            let reduced = basis * &sim.state.z;
            let scale = state.u.norm().max(reduced.norm());
            let err = if scale > 0.0 { (&reduced - &state.u).norm() / scale } else { 0.0 };
            worst_oracle = worst_oracle.max(err);
            row.push(format!("{err:e}"));
        }
        writeln!(diag, "{}", row.join(","))?;
        if args.obj || args.tets {
            let x = sim.positions();
            if args.obj {
                write_obj(mesh, &x, &args.out.join(format!("frames/frame_{k:05}.obj")))?;
            }
            if args.tets {
                write_tet_positions(mesh, &x, &args.out.join(format!("frames/frame_{k:05}.tet")))?;
            }
        }
    }
    z_out.flush()?;
    diag.flush()?;

    println!(
        "{} frames, {} unconverged, worst complementarity {worst_comp:.3e}",
        anim.frames.len(),
        unconverged
    );
    if oracle.is_some() {
        println!("worst oracle relative error {worst_oracle:.3e}");
    }
    let mut results = serde_json::json!({
        "frames": anim.frames.len(),
        "h": config.h,
        "unconverged_frames": unconverged,
        "worst_complementarity": worst_comp,
        "cache_input_hash": hex(&pre.input_hash),
    });
    if oracle.is_some() {
        results["worst_oracle_rel_err"] = worst_oracle.into();
    }
    write_manifest(&args.out.join("manifest.json"), "simulate", args, results)
}
