//! Named parameter store and its binary codec.
//!
//! A `ParamStore` is the serialization boundary: a sorted map from parameter
//! name to tensor, plus the seed the parameters were initialized from.
//! Collecting from a model enforces name uniqueness; loading back enforces
//! that every model parameter is present with the right shape and that no
//! stored entry goes unused.
//!
//! Wire format (all integers little-endian):
//!
//! ```text
//! magic "MFDP" | version u16 | init_seed u64 | count u32 | records...
//! record: name_len u16 | name utf-8 | dtype u8 | ndim u8 (= 4)
//!         | dims u32 x 4 | values (prod(dims) elements, LE)
//! ```
//!
//! Entries are written in sorted name order, so encoding is deterministic
//! and a decode/encode round trip is byte-identical. Decode errors carry the
//! byte offset where parsing failed.

use crate::error::{Error, Result};
use crate::nn::ParamOwner;
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

pub const MAGIC: &[u8; 4] = b"MFDP";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    pub init_seed: u64,
    entries: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new(init_seed: u64) -> Self {
        ParamStore {
            init_seed,
            entries: BTreeMap::new(),
        }
    }

    /// Snapshot every parameter of a model. Fails if two parameters share a
    /// name — each parameter must be owned by exactly one block.
    pub fn from_model(model: &mut dyn ParamOwner<F>, init_seed: u64) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut duplicate: Option<String> = None;
        model.visit_params(&mut |p| {
            if entries.insert(p.name.clone(), p.v.clone()).is_some() && duplicate.is_none() {
                duplicate = Some(p.name.clone());
            }
        });
        if let Some(name) = duplicate {
            return Err(Error::structure(format!(
                "parameter name {name:?} is owned by more than one block"
            )));
        }
        Ok(ParamStore {
            init_seed,
            entries,
        })
    }

    /// Write every stored tensor into the matching model parameter.
    /// Every model parameter must be present with an identical shape, and
    /// every stored entry must be consumed.
    pub fn load_into(&self, model: &mut dyn ParamOwner<F>) -> Result<()> {
        let mut missing: Option<String> = None;
        let mut mismatched: Option<(String, (usize, usize, usize, usize), (usize, usize, usize, usize))> =
            None;
        let mut used = 0usize;
        model.visit_params(&mut |p| {
            match self.entries.get(&p.name) {
                None => {
                    if missing.is_none() {
                        missing = Some(p.name.clone());
                    }
                }
                Some(t) => {
                    if t.shape() != p.v.shape() {
                        if mismatched.is_none() {
                            mismatched = Some((p.name.clone(), p.v.shape(), t.shape()));
                        }
                    } else {
                        p.v = t.clone();
                        used += 1;
                    }
                }
            }
        });
        if let Some(name) = missing {
            return Err(Error::structure(format!(
                "model parameter {name:?} missing from store"
            )));
        }
        if let Some((name, want, got)) = mismatched {
            return Err(Error::structure(format!(
                "parameter {name:?} has shape {got:?} in store, model expects {want:?}"
            )));
        }
        if used != self.entries.len() {
            // Name one unused entry in the error.
            let mut seen: Vec<String> = Vec::new();
            model.visit_params(&mut |p| seen.push(p.name.clone()));
            let unused = self
                .entries
                .keys()
                .find(|n| !seen.iter().any(|s| s == *n))
                .map(|s| s.as_str())
                .unwrap_or("?");
            return Err(Error::structure(format!(
                "store entry {unused:?} does not correspond to any model parameter"
            )));
        }
        Ok(())
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar elements across all entries.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.entries.iter()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.init_seed.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(F::DTYPE);
            out.push(4u8);
            let (n, c, h, w) = t.shape();
            for d in [n, c, h, w] {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, "bad magic, not a parameter store"));
        }
        let version = r.u16("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let init_seed = r.u64("init seed")?;
        let count = r.u32("entry count")? as usize;
        let mut entries = BTreeMap::new();
        for i in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name_off = r.pos;
            let name_bytes = r.take(name_len, "name")?;
            let name = core::str::from_utf8(name_bytes)
                .map_err(|_| Error::format(name_off, "parameter name is not valid UTF-8"))?
                .to_string();
            let dtype_off = r.pos;
            let dtype = r.u8("dtype tag")?;
            if dtype != F::DTYPE {
                return Err(Error::format(
                    dtype_off,
                    format!("dtype tag {dtype} does not match requested element type {}", F::DTYPE),
                ));
            }
            let ndim = r.u8("rank")?;
            if ndim != 4 {
                return Err(Error::format(r.pos - 1, format!("rank {ndim}, expected 4")));
            }
            let mut dims = [0usize; 4];
            for d in dims.iter_mut() {
                *d = r.u32("dimension")? as usize;
            }
            let numel = dims.iter().product::<usize>();
            let raw = r.take(numel * F::BYTE_WIDTH, "tensor values")?;
            let mut data = Vec::with_capacity(numel);
            for j in 0..numel {
                data.push(F::read_le(&raw[j * F::BYTE_WIDTH..]));
            }
            let t = Tensor::from_vec(dims[0], dims[1], dims[2], dims[3], data)
                .map_err(|_| Error::format(dtype_off, "inconsistent tensor record"))?;
            if entries.insert(name, t).is_some() {
                return Err(Error::format(
                    name_off,
                    format!("duplicate parameter name in record {i}"),
                ));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, "trailing bytes after last record"));
        }
        Ok(ParamStore {
            init_seed,
            entries,
        })
    }
}

/// Checked little-endian reader; errors carry the failing byte offset.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn exhausted(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.pos,
                format!("truncated while reading {what} ({n} bytes needed, {} left)",
                    self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::TransformerBlock;

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new(77);
        let mut a = Tensor::<f32>::zeros(2, 3, 1, 1);
        for (i, v) in a.data_mut().iter_mut().enumerate() {
            *v = i as f32 * 0.25 - 0.5;
        }
        s.insert("block.conv.weight", a);
        s.insert("block.conv.bias", Tensor::<f32>::filled(3, 1, 1, 1, 0.125));
        s
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let s = sample_store();
        let bytes = s.to_bytes();
        let back = ParamStore::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn f64_round_trip_preserves_exact_bits() {
        let mut s = ParamStore::<f64>::new(0);
        let mut t = Tensor::<f64>::zeros(1, 1, 1, 4);
        t.data_mut().copy_from_slice(&[1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -0.0]);
        s.insert("t", t.clone());
        let back = ParamStore::<f64>::from_bytes(&s.to_bytes()).unwrap();
        for (a, b) in back.get("t").unwrap().data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncation_reports_the_failing_offset() {
        let bytes = sample_store().to_bytes();
        for cut in [0, 3, 5, 10, 17, bytes.len() - 1] {
            match ParamStore::<f32>::from_bytes(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => {
                    assert!(offset <= cut, "offset {offset} beyond cut {cut}")
                }
                other => panic!("cut at {cut}: expected format error, got {other:?}"),
            }
        }
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let mut bytes = sample_store().to_bytes();
        bytes[4] = 9; // bump version field
        assert!(matches!(
            ParamStore::<f32>::from_bytes(&bytes),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let bytes = sample_store().to_bytes();
        assert!(matches!(
            ParamStore::<f64>::from_bytes(&bytes),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn collect_and_load_round_trip_through_a_block() {
        let mut blk = TransformerBlock::<f32>::new("b", 8, 2, 2, 3);
        let store = ParamStore::from_model(&mut blk, 3).unwrap();
        assert_eq!(store.scalar_count(), crate::nn::param_count(&mut blk));
        // A different seed gives different weights; loading restores them.
        let mut blk2 = TransformerBlock::<f32>::new("b", 8, 2, 2, 999);
        store.load_into(&mut blk2).unwrap();
        let store2 = ParamStore::from_model(&mut blk2, 3).unwrap();
        assert_eq!(store2.to_bytes(), store.to_bytes());
    }

    #[test]
    fn load_rejects_missing_and_mismatched_parameters() {
        let mut blk = TransformerBlock::<f32>::new("b", 8, 2, 2, 3);
        let store = ParamStore::from_model(&mut blk, 3).unwrap();
        // Wrong width: shapes disagree.
        let mut wrong = TransformerBlock::<f32>::new("b", 4, 2, 2, 3);
        assert!(matches!(store.load_into(&mut wrong), Err(Error::Structure(_))));
        // Wrong name prefix: everything missing.
        let mut renamed = TransformerBlock::<f32>::new("other", 8, 2, 2, 3);
        assert!(matches!(store.load_into(&mut renamed), Err(Error::Structure(_))));
    }
}
