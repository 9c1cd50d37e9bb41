//! `SPEC1` binary container for precomputed eigensystems.
//!
//! Layout, all little-endian:
//!
//! | field        | type            |
//! |--------------|-----------------|
//! | magic        | `b"SPEC1"`      |
//! | hash length  | `u32`           |
//! | mesh hash    | ASCII hex bytes |
//! | vertex count | `u64`           |
//! | k            | `u64`           |
//! | tolerance    | `f64`           |
//! | eigenvalues  | `k x f64`       |
//! | phi          | `|V| * k x f64`, row-major |
//! | mass         | `|V| x f64`     |

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::Spectrum;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"SPEC1";

pub fn encode(spec: &Spectrum) -> Vec<u8> {
    let (n, k) = (spec.vertex_count(), spec.k());
    let hash = spec.mesh_hash().as_bytes();
    let mut out = Vec::with_capacity(64 + hash.len() + 8 * (k + n * k + n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(hash.len() as u32).to_le_bytes());
    out.extend_from_slice(hash);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(k as u64).to_le_bytes());
    out.extend_from_slice(&spec.tolerance().to_le_bytes());
    for l in spec.eigenvalues() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for i in 0..n {
        for j in 0..k {
            out.extend_from_slice(&spec.phi()[(i, j)].to_le_bytes());
        }
    }
    for m in spec.mass() {
        out.extend_from_slice(&m.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.data.len() {
            return Err(Error::Format("truncated SPEC1 container".into()));
        }
        let s = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Spectrum> {
    let mut c = Cursor { data: bytes, pos: 0 };
    if c.take(5)? != MAGIC {
        return Err(Error::Format("missing SPEC1 magic".into()));
    }
    let hash_len = c.u32()? as usize;
    let hash =
        std::str::from_utf8(c.take(hash_len)?).map_err(|_| Error::Format("mesh hash is not ASCII".into()))?.to_string();
    let n = c.u64()? as usize;
    let k = c.u64()? as usize;
    let expected = 8usize
        .checked_mul(k.saturating_add(n.saturating_mul(k)).saturating_add(n))
        .ok_or_else(|| Error::Format("SPEC1 dimensions overflow".into()))?;
    if bytes.len() - c.pos < expected + 8 {
        return Err(Error::Format("truncated SPEC1 container".into()));
    }
    let tolerance = c.f64()?;
    let eigenvalues = (0..k).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let mut phi = DMatrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            phi[(i, j)] = c.f64()?;
        }
    }
    let mass = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after SPEC1 payload".into()));
    }
    Spectrum::from_parts(phi, eigenvalues, mass, tolerance, hash)
}

pub fn write_spectrum(spec: &Spectrum, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(spec))?;
    Ok(())
}

pub fn read_spectrum(path: impl AsRef<Path>) -> Result<Spectrum> {
    decode(&fs::read(path)?)
}

/// Cache file name keyed by mesh hash and truncation order.
pub fn cache_path(dir: impl AsRef<Path>, mesh_hash: &str, k: usize) -> PathBuf {
    let short = &mesh_hash[..mesh_hash.len().min(16)];
    dir.as_ref().join(format!("{short}-k{k}.spec"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_operators, shapes};
    use crate::spectral::eigendecompose;

    #[test]
    fn round_trip_is_bit_exact() {
        let mesh = shapes::icosphere(1).unwrap();
        let spec = eigendecompose(&build_operators(&mesh).unwrap(), 9).unwrap().with_mesh_hash(mesh.content_hash());
        let bytes = encode(&spec);
        assert_eq!(&bytes[..5], b"SPEC1");
        let back = decode(&bytes).unwrap();
        assert_eq!(back, spec);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_corrupt_input() {
        let mesh = shapes::icosphere(0).unwrap();
        let spec = eigendecompose(&build_operators(&mesh).unwrap(), 4).unwrap();
        let bytes = encode(&spec);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long).is_err());
    }
}
