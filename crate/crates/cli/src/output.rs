use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use eigenskin::mesh::TetMesh;

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

/// Records the command, its flags and anything else worth keeping with the outputs.
pub fn write_manifest(path: &Path, command: &str, args: &impl Serialize, extra: serde_json::Value) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "results": extra,
    });
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_obj(mesh: &TetMesh, positions: &[f64], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    eigenskin::mesh::write_obj(mesh, positions, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Tet-file dump of a deformed mesh; axis-major positions.
pub fn write_tet_positions(mesh: &TetMesh, positions: &[f64], path: &Path) -> Result<()> {
    let n = mesh.n_vertices();
    let mut w = create(path)?;
    writeln!(w, "tet {} {}", n, mesh.n_tets())?;
    for v in 0..n {
        writeln!(w, "v {:?} {:?} {:?}", positions[v], positions[n + v], positions[2 * n + v])?;
    }
    for t in mesh.tets() {
        writeln!(w, "t {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_row(values: impl IntoIterator<Item = String>) -> String {
    values.into_iter().collect::<Vec<_>>().join(",")
}
