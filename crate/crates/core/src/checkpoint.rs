//! Self-describing parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "BFCK"
//! version    u32      = 1
//! meta_len   u32      length of the metadata block
//! meta       bytes    UTF-8 text, one `key = value` per line
//! count      u32      number of entries
//! entry * count, in lexicographic name order:
//!   name_len u32
//!   name     bytes    UTF-8
//!   dtype    u8       0 = f32, 1 = f64
//!   ndim     u8
//!   dims     u64 * ndim
//!   payload  prod(dims) * sizeof(dtype) bytes, little-endian floats
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"BFCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<T: Real>(params: &ParamStore<T>, metadata: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.code());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<String> {
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

/// Decode a container into `(metadata, params)`. Payloads stored in another
/// float width are converted to `T`.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(String, ParamStore<T>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta = r.utf8(meta_len, "metadata")?;
    let count = r.u32("entry count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = r.utf8(name_len, "name")?;
        let code = r.u8("dtype")?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::Checkpoint(format!("`{name}`: unknown dtype code {code}")))?;
        let ndim = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n * dtype.size(), "payload")?;
        let data: Vec<T> = match dtype {
            d if d == T::DTYPE => payload.chunks_exact(d.size()).map(T::read_le).collect(),
            DType::F32 => payload.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
            DType::F64 => payload.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        };
        params.insert(&name, Tensor::new(&shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut p = ParamStore::<f32>::new();
        p.insert("w", Tensor::new(&[2], alloc::vec![1.0, -0.5]).unwrap()).unwrap();
        let b = encode(&p, "k = v\n");
        assert_eq!(&b[0..4], b"BFCK");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &6u32.to_le_bytes());
        assert_eq!(&b[12..18], b"k = v\n");
        assert_eq!(&b[18..22], &1u32.to_le_bytes());
        // name_len, name, dtype, ndim, dim, payload
        assert_eq!(b.len(), 22 + 4 + 1 + 1 + 1 + 8 + 8);
        assert_eq!(&b[b.len() - 4..], &(-0.5f32).to_le_bytes());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let mut p = ParamStore::<f64>::new();
        p.insert("a", Tensor::zeros(&[3])).unwrap();
        let b = encode(&p, "");
        assert!(decode::<f64>(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(decode::<f64>(&extra).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode::<f64>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(proptest::num::f32::ANY, 1..40),
            other in proptest::collection::vec(-1e6f32..1e6, 1..10),
        ) {
            let mut p = ParamStore::<f32>::new();
            p.insert("layer.weight", Tensor::new(&[values.len()], values.clone()).unwrap()).unwrap();
            p.insert("layer.bias", Tensor::new(&[other.len(), 1], other.clone()).unwrap()).unwrap();
            let bytes = encode(&p, "model = 6\n");
            let (meta, back) = decode::<f32>(&bytes).unwrap();
            prop_assert_eq!(meta, "model = 6\n");
            for (name, t) in p.iter() {
                let u = back.get(name).unwrap();
                prop_assert_eq!(t.shape(), u.shape());
                let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u32> = u.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
            prop_assert_eq!(encode(&back, "model = 6\n"), bytes);
        }
    }
}
