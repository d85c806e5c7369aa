//! Wire format.
//!
//! Control messages are JSON text frames tagged by `type`. Bulk data goes in
//! binary frames: a `u32` kind (1 = setup, 2 = frame) followed by fixed
//! fields and length-prefixed arrays. Every integer is little-endian; arrays
//! are a `u32` element count followed by `f32` or `u32` elements.

use serde::{Deserialize, Serialize};

use crate::{Result, ServiceError};

pub const PROTOCOL_VERSION: u32 = 1;
pub const KIND_SETUP: u32 = 1;
pub const KIND_FRAME: u32 = 2;

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    SetParams { p: Vec<f64> },
    SetForce { f: Vec<f64> },
    Reset {},
}

impl ClientMessage {
    /// Parses and checks array lengths against the session dimensions.
    pub fn parse(text: &str, p_dim: usize, dim: usize) -> Result<Self> {
        let msg: ClientMessage =
            serde_json::from_str(text).map_err(|e| ServiceError::Protocol(format!("bad message: {e}")))?;
        let (values, expect, name) = match &msg {
            ClientMessage::SetParams { p } => (p, p_dim, "p"),
            ClientMessage::SetForce { f } => (f, dim, "f"),
            ClientMessage::Reset {} => return Ok(msg),
        };
        if values.len() != expect {
            return Err(ServiceError::Protocol(format!(
                "{name} has {} entries, expected {expect}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(ServiceError::Protocol(format!("{name} contains non-finite values")));
        }
        Ok(msg)
    }
}

/// Server to client JSON notices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerNotice {
    Error { message: String },
    Warning { message: String },
}

impl ServerNotice {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("notice serializes")
    }
}

/// Everything a viewer needs to skin the surface on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub version: u32,
    pub n_vertices: u32,
    pub n_modes: u32,
    pub p_dim: u32,
    /// Mesh vertex index of each surface vertex.
    pub surface_vertices: Vec<u32>,
    /// Triangles indexing into `surface_vertices`.
    pub triangles: Vec<u32>,
    /// Rest positions, xyz per surface vertex.
    pub rest: Vec<f32>,
    /// Secondary weights, `n_modes` per surface vertex.
    pub weights: Vec<f32>,
    /// Rig weights, one per bone per surface vertex.
    pub rig_weights: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: u64,
    pub z: Vec<f32>,
    pub p: Vec<f32>,
}

struct Out(Vec<u8>);

impl Out {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32s(&mut self, vs: &[u32]) {
        self.u32(vs.len() as u32);
        vs.iter().for_each(|v| self.0.extend_from_slice(&v.to_le_bytes()));
    }
    fn f32s(&mut self, vs: &[f32]) {
        self.u32(vs.len() as u32);
        vs.iter().for_each(|v| self.0.extend_from_slice(&v.to_le_bytes()));
    }
}

struct In<'a>(&'a [u8]);

impl In<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.0.len() < N {
            return Err(ServiceError::Protocol("truncated binary message".into()));
        }
        let (head, tail) = self.0.split_at(N);
        self.0 = tail;
        Ok(head.try_into().expect("length checked"))
    }
    fn u32(&mut self) -> Result<u32> {
        self.bytes::<4>().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64> {
        self.bytes::<8>().map(u64::from_le_bytes)
    }
    fn u32s(&mut self) -> Result<Vec<u32>> {
        let len = self.u32()?;
        (0..len).map(|_| self.u32()).collect()
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let len = self.u32()?;
        (0..len).map(|_| self.bytes::<4>().map(f32::from_le_bytes)).collect()
    }
    fn finish(self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ServiceError::Protocol(format!("{} trailing bytes", self.0.len())))
        }
    }
}

fn expect_kind(r: &mut In, kind: u32) -> Result<()> {
    let got = r.u32()?;
    if got != kind {
        return Err(ServiceError::Protocol(format!("message kind {got}, expected {kind}")));
    }
    Ok(())
}

impl Setup {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Out(Vec::new());
        w.u32(KIND_SETUP);
        for v in [self.version, self.n_vertices, self.n_modes, self.p_dim] {
            w.u32(v);
        }
        w.u32s(&self.surface_vertices);
        w.u32s(&self.triangles);
        w.f32s(&self.rest);
        w.f32s(&self.weights);
        w.f32s(&self.rig_weights);
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = In(bytes);
        expect_kind(&mut r, KIND_SETUP)?;
        let setup = Setup {
            version: r.u32()?,
            n_vertices: r.u32()?,
            n_modes: r.u32()?,
            p_dim: r.u32()?,
            surface_vertices: r.u32s()?,
            triangles: r.u32s()?,
            rest: r.f32s()?,
            weights: r.f32s()?,
            rig_weights: r.f32s()?,
        };
        r.finish()?;
        let s = setup.surface_vertices.len();
        let bones = setup.p_dim as usize / 12;
        if setup.rest.len() != 3 * s
            || setup.weights.len() != s * setup.n_modes as usize
            || setup.rig_weights.len() != s * bones
            || !setup.triangles.len().is_multiple_of(3)
        {
            return Err(ServiceError::Protocol("setup array lengths disagree with the header".into()));
        }
        Ok(setup)
    }
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Out(Vec::new());
        w.u32(KIND_FRAME);
        w.0.extend_from_slice(&self.t.to_le_bytes());
        w.f32s(&self.z);
        w.f32s(&self.p);
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = In(bytes);
        expect_kind(&mut r, KIND_FRAME)?;
        let frame = Frame {
            t: r.u64()?,
            z: r.f32s()?,
            p: r.f32s()?,
        };
        r.finish()?;
        Ok(frame)
    }
}

/// Kind tag of a binary message, if it has one.
pub fn binary_kind(bytes: &[u8]) -> Option<u32> {
    bytes.get(..4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
}
