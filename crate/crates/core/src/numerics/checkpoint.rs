//! Flat binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NACF" | version: u32 | record*
//! record = name_len: u32 | name: UTF-8 | rank: u32 | dims: u64 * rank | values: f32 * prod(dims)
//! ```
//!
//! Records run to the end of the file.

use std::path::Path;

use super::params::ParameterStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NACF";
pub const VERSION: u32 = 1;

pub fn encode<F: Real>(store: &ParameterStore<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + store.num_elements() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        records.push((name, t));
    }
    Ok(records)
}

pub fn save<F: Real>(store: &ParameterStore<F>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40), cols in 1usize..5) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let data = values[..rows * cols].to_vec();
            let mut store = ParameterStore::<f32>::new();
            store.add("w.ü", Tensor::matrix(rows, cols, data.clone()).unwrap(), true).unwrap();
            store.add("b", Tensor::from_vec(vec![1.5, -0.0]), false).unwrap();
            let bytes = encode(&store);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(back.len(), 2);
            prop_assert_eq!(&back[0].0, "w.ü");
            let bits: Vec<u32> = back[0].1.data().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, want);
            let mut again = ParameterStore::<f32>::new();
            again.add("w.ü", Tensor::zeros(&[rows, cols]), true).unwrap();
            again.add("b", Tensor::zeros(&[2]), false).unwrap();
            again.assign_named(back).unwrap();
            prop_assert_eq!(encode(&again), bytes);
        }
    }

    #[test]
    fn header_and_truncation() {
        let mut store = ParameterStore::<f32>::new();
        store.add("x", Tensor::from_vec(vec![1.0, 2.0]), false).unwrap();
        let bytes = encode(&store);
        assert_eq!(&bytes[..4], b"NACF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn shape_mismatch_on_assign() {
        let mut store = ParameterStore::<f32>::new();
        store.add("x", Tensor::from_vec(vec![1.0, 2.0]), false).unwrap();
        let err = store.assign_named(vec![("x".into(), Tensor::from_vec(vec![1.0]))]);
        assert!(err.is_err());
    }
}
