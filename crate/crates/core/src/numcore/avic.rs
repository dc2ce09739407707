//! AVIC tensor files: `"AVIC"`, u32 version (1), u32 ndim, ndim × u32
//! extents, then row-major little-endian `f32` payload. All integers are
//! little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 4] = b"AVIC";
pub const VERSION: u32 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.ndim() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |reason: &str| Error::format(path, reason);
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| bad("truncated header"))
    };
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing AVIC magic"));
    }
    let version = word(4)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let ndim = word(8)? as usize;
    if ndim == 0 {
        return Err(bad("zero-dimensional tensor"));
    }
    let shape = (0..ndim)
        .map(|i| word(12 + 4 * i).map(|e| e as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 12 + 4 * ndim;
    let count: usize = shape.iter().product();
    if bytes.len() != header + 4 * count {
        return Err(bad(&format!(
            "payload is {} bytes, shape {shape:?} needs {}",
            bytes.len() - header,
            4 * count
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -0.5]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"AVIC");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..20], &1u32.to_le_bytes());
        assert_eq!(&b[20..24], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 28);
    }

    #[test]
    fn rejects_corrupt_files() {
        let p = Path::new("x.avic");
        let good = encode(&Tensor::zeros(&[3]));
        assert!(decode(&good[..good.len() - 1], p).is_err());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic, p).is_err());
        let mut bad_version = good;
        bad_version[4] = 2;
        assert!(decode(&bad_version, p).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_exact_on_f32_values(
            shape in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let mut rng = crate::numcore::seeded_rng(seed);
            let data = (0..n).map(|_| rng.draw_normal() as f32 as f64).collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = decode(&encode(&t), Path::new("mem")).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
