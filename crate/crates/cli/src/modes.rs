use anyhow::{bail, Context, Result};
use nalgebra::DVector;

use eigenskin::cache::read_cache;
use eigenskin::solver::project_full;

use crate::output::{create_dir, write_manifest, write_obj};
use crate::ModesArgs;

const AXES: [char; 3] = ['x', 'y', 'z'];
const SOURCES: [char; 4] = ['x', 'y', 'z', 't'];

/// File stem for mode `b`, parameter `a*4 + j`: output axis `a` driven by
/// rest coordinate `j` (or translation).
pub fn mode_file_stem(b: usize, k: usize) -> String {
    format!("mode{b:02}_{}{}", AXES[k / 4], SOURCES[k % 4])
}

pub fn run(args: &ModesArgs) -> Result<()> {
    if !(args.amplitude >= 0.0 && args.amplitude.is_finite()) {
        bail!("--amplitude must be non-negative, got {}", args.amplitude);
    }
    let pre = read_cache(&args.cache).with_context(|| format!("loading cache {}", args.cache.display()))?;
    create_dir(&args.out)?;
    let mesh = &pre.mesh;
    let n = mesh.n_vertices();
    let rest = mesh.rest_positions();
    let basis = &pre.subspace.basis;
    let no_rig = nalgebra::DMatrix::zeros(3 * n, 0);
    let target = args.amplitude * mesh.bbox_diagonal();
    let mut files = 0;
    for col in 0..basis.ncols() {
        let c = basis.column(col);
        let peak = (0..n)
            .map(|v| (c[v].powi(2) + c[n + v].powi(2) + c[2 * n + v].powi(2)).sqrt())
            .fold(0.0, f64::max);
        let scale = if peak > 0.0 { target / peak } else { 0.0 };
        let mut z = DVector::zeros(basis.ncols());
        z[col] = scale;
        let x = project_full(&rest, basis, &no_rig, &z, &DVector::zeros(0));
        write_obj(mesh, &x, &args.out.join(format!("{}.obj", mode_file_stem(col / 12, col % 12))))?;
        files += 1;
    }
    println!("wrote {files} meshes to {}", args.out.display());
    write_manifest(
        &args.out.join("manifest.json"),
        "modes",
        args,
        serde_json::json!({ "modes": pre.subspace.n_modes(), "files": files, "max_displacement": target }),
    )
}
