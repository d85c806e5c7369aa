use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::Deserialize;

use super::{MaterialField, TetMesh};
use crate::error::{Error, Result};

/// Loads a `.tet` or Gmsh 2.2 ASCII `.msh` file; the format is chosen by
/// extension, falling back to content sniffing.
pub fn load_tet_mesh(path: impl AsRef<Path>) -> Result<TetMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_msh = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("msh"))
        || text.trim_start().starts_with("$MeshFormat");
    if is_msh {
        parse_msh(&text)
    } else {
        parse_tet(&text)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

/// Plain ASCII format: `tet <n> <t>`, then `v x y z` lines, then `t i j k l`
/// lines with zero-based indices. Blank lines and `#` comments are ignored.
pub fn parse_tet(text: &str) -> Result<TetMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("tet") {
        return Err(parse_err(hl, "expected header 'tet <n> <t>'"));
    }
    let n: usize = parse_num(tok.next(), hl, "vertex count")?;
    let t: usize = parse_num(tok.next(), hl, "tet count")?;
    let mut vertices = Vec::with_capacity(n);
    let mut tets = Vec::with_capacity(t);
    for (ln, line) in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                if vertices.len() == n {
                    return Err(parse_err(ln, format!("more than {n} vertices")));
                }
                let x = parse_num(tok.next(), ln, "x")?;
                let y = parse_num(tok.next(), ln, "y")?;
                let z = parse_num(tok.next(), ln, "z")?;
                vertices.push(Vector3::new(x, y, z));
            }
            Some("t") => {
                if tets.len() == t {
                    return Err(parse_err(ln, format!("more than {t} tets")));
                }
                let mut idx = [0usize; 4];
                for (k, slot) in idx.iter_mut().enumerate() {
                    *slot = parse_num(tok.next(), ln, &format!("index {k}"))?;
                    if *slot >= n {
                        return Err(parse_err(ln, format!("index {} out of range", *slot)));
                    }
                }
                tets.push(idx);
            }
            Some(other) => return Err(parse_err(ln, format!("unknown record '{other}'"))),
            None => {}
        }
    }
    if vertices.len() != n || tets.len() != t {
        return Err(parse_err(
            text.lines().count(),
            format!("expected {n} vertices and {t} tets, found {} and {}", vertices.len(), tets.len()),
        ));
    }
    TetMesh::new(vertices, tets)
}

/// Gmsh MSH 2.2 ASCII. Only nodes and 4-node tetrahedra (type 4) are read.
pub fn parse_msh(text: &str) -> Result<TetMesh> {
    let lines: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).collect();
    let mut i = 0;
    let mut node_ids = std::collections::HashMap::new();
    let mut vertices = Vec::new();
    let mut tets = Vec::new();
    let mut saw_format = false;
    while i < lines.len() {
        let (ln, l) = lines[i];
        match l {
            "$MeshFormat" => {
                let (fl, f) = *lines.get(i + 1).ok_or_else(|| parse_err(ln, "truncated $MeshFormat"))?;
                let mut tok = f.split_whitespace();
                let version: f64 = parse_num(tok.next(), fl, "format version")?;
                let file_type: u32 = parse_num(tok.next(), fl, "file type")?;
                if !(2.0..3.0).contains(&version) || file_type != 0 {
                    return Err(parse_err(fl, "only ASCII MSH 2.x is supported"));
                }
                saw_format = true;
                i += 2;
            }
            "$Nodes" => {
                let (cl, c) = *lines.get(i + 1).ok_or_else(|| parse_err(ln, "truncated $Nodes"))?;
                let count: usize = parse_num(Some(c), cl, "node count")?;
                for k in 0..count {
                    let (nl, nline) = *lines
                        .get(i + 2 + k)
                        .ok_or_else(|| parse_err(cl, "truncated node list"))?;
                    let mut tok = nline.split_whitespace();
                    let id: usize = parse_num(tok.next(), nl, "node id")?;
                    let x = parse_num(tok.next(), nl, "x")?;
                    let y = parse_num(tok.next(), nl, "y")?;
                    let z = parse_num(tok.next(), nl, "z")?;
                    node_ids.insert(id, vertices.len());
                    vertices.push(Vector3::new(x, y, z));
                }
                i += 2 + count;
            }
            "$Elements" => {
                let (cl, c) = *lines.get(i + 1).ok_or_else(|| parse_err(ln, "truncated $Elements"))?;
                let count: usize = parse_num(Some(c), cl, "element count")?;
                for k in 0..count {
                    let (el, eline) = *lines
                        .get(i + 2 + k)
                        .ok_or_else(|| parse_err(cl, "truncated element list"))?;
                    let tok: Vec<&str> = eline.split_whitespace().collect();
                    let ty: u32 = parse_num(tok.get(1).copied(), el, "element type")?;
                    if ty != 4 {
                        continue;
                    }
                    let ntags: usize = parse_num(tok.get(2).copied(), el, "tag count")?;
                    let mut idx = [0usize; 4];
                    for (q, slot) in idx.iter_mut().enumerate() {
                        let id: usize = parse_num(tok.get(3 + ntags + q).copied(), el, "node reference")?;
                        *slot = *node_ids
                            .get(&id)
                            .ok_or_else(|| parse_err(el, format!("unknown node {id}")))?;
                    }
                    tets.push(idx);
                }
                i += 2 + count;
            }
            _ => i += 1,
        }
    }
    if !saw_format {
        return Err(parse_err(1, "missing $MeshFormat"));
    }
    TetMesh::new(vertices, tets)
}

pub fn write_tet(mesh: &TetMesh, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "tet {} {}", mesh.n_vertices(), mesh.n_tets())?;
    for v in mesh.vertices() {
        writeln!(w, "v {:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for t in mesh.tets() {
        writeln!(w, "t {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    Ok(())
}

/// Writes the boundary surface with the given per-vertex positions
/// (axis-major `3n`). Vertices are renumbered to the surface set.
pub fn write_obj(mesh: &TetMesh, positions: &[f64], mut w: impl Write) -> std::io::Result<()> {
    let n = mesh.n_vertices();
    assert_eq!(positions.len(), 3 * n);
    let surf = mesh.surface_vertices();
    let mut remap = vec![usize::MAX; n];
    for (k, &v) in surf.iter().enumerate() {
        remap[v] = k + 1;
        writeln!(w, "v {} {} {}", positions[v], positions[n + v], positions[2 * n + v])?;
    }
    for f in mesh.surface_tris() {
        writeln!(w, "f {} {} {}", remap[f[0]], remap[f[1]], remap[f[2]])?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScalarOrArray {
    Scalar(f64),
    Array(Vec<f64>),
}

impl ScalarOrArray {
    fn expand(self, t: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrArray::Scalar(v) => Ok(vec![v; t]),
            ScalarOrArray::Array(a) if a.len() == t => Ok(a),
            ScalarOrArray::Array(a) => Err(Error::Dimension(format!(
                "material field '{name}' has {} entries for {t} tets",
                a.len()
            ))),
        }
    }
}

#[derive(Deserialize)]
struct MaterialJson {
    mu: ScalarOrArray,
    lambda: ScalarOrArray,
    density: ScalarOrArray,
}

/// Parses the material JSON sidecar `{mu, lambda, density}`, each either a
/// scalar (homogeneous) or a per-tet array.
pub fn parse_material(json: &str, n_tets: usize) -> Result<MaterialField> {
    let m: MaterialJson = serde_json::from_str(json)?;
    let field = MaterialField {
        mu: m.mu.expand(n_tets, "mu")?,
        lambda: m.lambda.expand(n_tets, "lambda")?,
        density: m.density.expand(n_tets, "density")?,
    };
    field.validate(n_tets)?;
    Ok(field)
}

pub fn load_material(path: impl AsRef<Path>, n_tets: usize) -> Result<MaterialField> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_material(&text, n_tets)
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: &str = "tet 4 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nt 0 1 2 3\n";

    #[test]
    fn parses_unit_tet() {
        let m = parse_tet(UNIT).unwrap();
        assert_eq!((m.n_vertices(), m.n_tets()), (4, 1));
        let inverted = parse_tet(&UNIT.replace("t 0 1 2 3", "t 0 2 1 3")).unwrap();
        assert_eq!(inverted, m);
        assert!((inverted.tet_volumes()[0] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = UNIT.replace("v 0 1 0", "v 0 x 0");
        match parse_tet(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let coplanar = UNIT.replace("v 0 0 1", "v 0.5 0.5 0");
        assert!(matches!(parse_tet(&coplanar), Err(Error::DegenerateTets { .. })));
    }

    #[test]
    fn parses_gmsh_22() {
        let msh = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n4\n10 0 0 0\n11 1 0 0\n12 0 1 0\n13 0 0 1\n$EndNodes\n\
                   $Elements\n2\n1 2 2 0 1 10 11 12\n2 4 2 0 1 10 12 11 13\n$EndElements\n";
        let m = parse_msh(msh).unwrap();
        assert_eq!((m.n_vertices(), m.n_tets()), (4, 1));
        assert!((m.tet_volumes()[0] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn tet_round_trip() {
        let m = super::super::primitives::box_grid([2, 1, 1], [1.0, 0.5, 0.5]).unwrap();
        let mut buf = Vec::new();
        write_tet(&m, &mut buf).unwrap();
        let back = parse_tet(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn material_scalar_and_array_forms() {
        let m = parse_material(r#"{"mu": 2.0, "lambda": [0.0, 1.0], "density": 3.0}"#, 2).unwrap();
        assert_eq!(m.mu, vec![2.0, 2.0]);
        assert_eq!(m.lambda, vec![0.0, 1.0]);
        assert!(parse_material(r#"{"mu": 2.0, "lambda": [0.0], "density": 3.0}"#, 2).is_err());
        assert!(parse_material(r#"{"mu": -2.0, "lambda": 0.0, "density": 3.0}"#, 2).is_err());
    }
}
