use eigenskin::cache::{decode, encode, read_cache, write_cache, FORMAT_VERSION, MAGIC};
use eigenskin::mesh::{primitives, MaterialField};
use eigenskin::pipeline::{precompute, PrecomputeConfig, Precomputed};
use eigenskin::rig::{chain_weights, LinearRig};
use eigenskin::Error;
use sha2::{Digest, Sha256};

fn sample() -> Precomputed {
    let mesh = primitives::jittered(&primitives::box_grid([4, 2, 2], [2.0, 1.0, 1.0]).unwrap(), 0.05, 9).unwrap();
    let rig = LinearRig::lbs_skeleton(chain_weights(&mesh, 2, 0)).unwrap();
    let mat = MaterialField::homogeneous(mesh.n_tets(), 3.0, 1.0, 1.2);
    let cfg = PrecomputeConfig {
        modes: 3,
        clusters: 5,
        seed: 2,
        ..Default::default()
    };
    precompute(&mesh, &mat, &rig, &cfg).unwrap().0
}

/// Rewrites the trailing checksum so only the targeted field is wrong.
fn reseal(bytes: &mut [u8]) {
    let body_len = bytes.len() - 32;
    let digest: [u8; 32] = Sha256::digest(&bytes[..body_len]).into();
    bytes[body_len..].copy_from_slice(&digest);
}

#[test]
fn round_trip_is_bit_exact() {
    let pre = sample();
    let bytes = encode(&pre);
    let back = decode(&bytes).unwrap();
    assert_eq!(back, pre);
    assert_eq!(encode(&back), bytes);
    let w_bits: Vec<u64> = pre.subspace.weights.iter().map(|v| v.to_bits()).collect();
    let back_bits: Vec<u64> = back.subspace.weights.iter().map(|v| v.to_bits()).collect();
    assert_eq!(w_bits, back_bits);
}

#[test]
fn header_layout() {
    let pre = sample();
    let bytes = encode(&pre);
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
    let dim = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap()) as usize;
    assert_eq!(dim(0), pre.mesh.n_vertices());
    assert_eq!(dim(1), pre.mesh.n_tets());
    assert_eq!(dim(2), 3);
    assert_eq!(dim(3), pre.n_clusters());
    assert_eq!(dim(4), 24);
}

#[test]
fn version_mismatch_rejected() {
    let mut bytes = encode(&sample());
    bytes[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    reseal(&mut bytes);
    let err = decode(&bytes).unwrap_err();
    assert!(matches!(err, Error::Cache(ref m) if m.contains("version")), "{err}");
}

#[test]
fn corruption_rejected() {
    let bytes = encode(&sample());
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(decode(&flipped), Err(Error::Cache(m)) if m.contains("checksum")));

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(decode(&bad_magic).is_err());

    assert!(decode(&bytes[..bytes.len() - 40]).is_err());
    assert!(decode(&[]).is_err());
}

#[test]
fn input_hash_mismatch_rejected() {
    let mut bytes = encode(&sample());
    // the hash sits after magic, version, five dimensions and two kind codes
    let at = 4 + 4 + 5 * 8 + 4 + 4;
    bytes[at] ^= 0xff;
    reseal(&mut bytes);
    assert!(matches!(decode(&bytes), Err(Error::Cache(m)) if m.contains("hash")));
}

#[test]
fn file_round_trip() {
    let pre = sample();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.cdsk");
    write_cache(&pre, &path).unwrap();
    assert_eq!(read_cache(&path).unwrap(), pre);
    assert!(matches!(read_cache(dir.path().join("missing.cdsk")), Err(Error::Io { .. })));
}
