//! Binary cache of precomputed data.
//!
//! Layout (little-endian): magic `CDSK`, format version `u32`, dimensions
//! `n, t, m, r, p` as `u64`, Hessian kind `u32`, rig kind `u32`, the 32-byte
//! input hash, then `f64` / `u64` sections (vertices, tets, material, rig
//! weights, leak field, eigenvalues, weights, labels) and a trailing SHA-256
//! of everything before it. Timestep-dependent matrices are not stored.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::{HessianKind, MaterialField, TetMesh};
use crate::pipeline::{input_hash, Precomputed};
use crate::rig::{LinearRig, RigKind};
use crate::subspace::SkinningSubspace;

pub const MAGIC: &[u8; 4] = b"CDSK";
pub const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Cache(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Cache("dimension overflows usize".into()))
    }
    fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| Error::Cache("section too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn hessian_code(kind: HessianKind) -> u32 {
    match kind {
        HessianKind::Arap => 0,
        HessianKind::Corotational => 1,
    }
}

fn rig_code(kind: RigKind) -> u32 {
    match kind {
        RigKind::AffineHandle => 0,
        RigKind::LbsSkeleton => 1,
        RigKind::NullRig => 2,
    }
}

pub fn encode(pre: &Precomputed) -> Vec<u8> {
    let mesh = &pre.mesh;
    let (n, t, m) = (mesh.n_vertices(), mesh.n_tets(), pre.subspace.n_modes());
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    for d in [n, t, m, pre.n_clusters(), pre.rig.p_dim()] {
        w.u64(d as u64);
    }
    w.u32(hessian_code(pre.hessian));
    w.u32(rig_code(pre.rig.kind()));
    w.0.extend_from_slice(&pre.input_hash);
    w.f64s(mesh.vertices().iter().flat_map(|v| [v.x, v.y, v.z]));
    for tet in mesh.tets() {
        for &i in tet {
            w.u64(i as u64);
        }
    }
    w.f64s(pre.material.mu.iter().copied());
    w.f64s(pre.material.lambda.iter().copied());
    w.f64s(pre.material.density.iter().copied());
    w.f64s(pre.rig.weights().iter().copied());
    w.f64s(pre.leak.iter().copied());
    w.f64s(pre.subspace.eigenvalues.iter().copied());
    w.f64s(pre.subspace.weights.iter().copied());
    for &l in &pre.labels {
        w.u64(l as u64);
    }
    let digest: [u8; 32] = Sha256::digest(&w.0).into();
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Precomputed> {
    if bytes.len() < 4 + 4 + 32 || &bytes[..4] != MAGIC {
        return Err(Error::Cache("not a cache file (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Cache(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let expect: [u8; 32] = Sha256::digest(body).into();
    if expect.as_slice() != digest {
        return Err(Error::Cache("payload checksum mismatch".into()));
    }
    let n = r.usize()?;
    let t = r.usize()?;
    let m = r.usize()?;
    let n_clusters = r.usize()?;
    let p = r.usize()?;
    let hessian = match r.u32()? {
        0 => HessianKind::Arap,
        1 => HessianKind::Corotational,
        k => return Err(Error::Cache(format!("unknown Hessian kind {k}"))),
    };
    let rig_kind = r.u32()?;
    let stored_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");

    let coords = r.f64s(3 * n)?;
    let vertices = coords.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
    let mut tets = Vec::with_capacity(t);
    for _ in 0..t {
        tets.push([r.usize()?, r.usize()?, r.usize()?, r.usize()?]);
    }
    let mesh = TetMesh::new(vertices, tets)?;
    let material = MaterialField {
        mu: r.f64s(t)?,
        lambda: r.f64s(t)?,
        density: r.f64s(t)?,
    };
    material.validate(t)?;
    if p % 12 != 0 {
        return Err(Error::Cache(format!("rig parameter count {p} is not a multiple of 12")));
    }
    let b = p / 12;
    let rig_weights = DMatrix::from_vec(n, b, r.f64s(n * b)?);
    let rig = match rig_kind {
        0 => LinearRig::affine_handle(n),
        1 => LinearRig::lbs_skeleton(rig_weights)?,
        2 => LinearRig::null_rig(n),
        k => return Err(Error::Cache(format!("unknown rig kind {k}"))),
    };
    if rig.p_dim() != p {
        return Err(Error::Cache("rig kind disagrees with the stored parameter count".into()));
    }
    let leak = r.f64s(n)?;
    let eigenvalues = r.f64s(m)?;
    let weights = DMatrix::from_vec(n, m, r.f64s(n * m)?);
    let mut labels = Vec::with_capacity(t);
    for _ in 0..t {
        let l = r.usize()?;
        if l >= n_clusters {
            return Err(Error::Cache(format!("label {l} out of range for {n_clusters} clusters")));
        }
        labels.push(l);
    }
    if r.pos != body.len() {
        return Err(Error::Cache(format!("{} trailing bytes", body.len() - r.pos)));
    }
    if input_hash(&mesh, &rig) != stored_hash {
        return Err(Error::Cache("stored input hash does not match the cached mesh and rig".into()));
    }
    let subspace = SkinningSubspace::new(weights, eigenvalues, &mesh);
    Ok(Precomputed {
        mesh,
        material,
        rig,
        hessian,
        leak,
        subspace,
        labels,
        input_hash: stored_hash,
    })
}

pub fn write_cache(pre: &Precomputed, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(pre)).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Precomputed> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
