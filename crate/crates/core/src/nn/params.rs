//! Named parameter tensors with gradient and Adam-moment slots, and the
//! binary checkpoint container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic    b"DRPS"
//! version  u32 (= 1)
//! count    u32
//! count × { name_len u32 | name utf-8 | ndim u32 | dims u64×ndim | dtype u8 | payload }
//! crc32    u32 over every preceding byte
//! ```
//!
//! `dtype` is 1 for f32 and 2 for f64; payload values are little-endian.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DRPS";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[default]
    #[serde(rename = "64")]
    F64,
}

impl Precision {
    fn dtype(self) -> u8 {
        match self {
            Precision::F32 => 1,
            Precision::F64 => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    pub(crate) step: u64,
    pub precision: Precision,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor. Names must be unique.
    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<f64>) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        if value.len() != n {
            return Err(Error::param(format!("parameter `{name}`: shape {shape:?} needs {n} values, got {}", value.len())));
        }
        if self.index.contains_key(name) {
            return Err(Error::param(format!("duplicate parameter `{name}`")));
        }
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_owned(),
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            value,
        });
        self.index.insert(name.to_owned(), id);
        Ok(ParamId(id))
    }

    /// Fan-in scaled uniform init, bounds `±sqrt(6 / fan_in)`.
    pub fn add_he_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<ParamId> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let value = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, shape, value)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn set_all(&mut self, value: f64) {
        for p in &mut self.params {
            p.value.iter_mut().for_each(|v| *v = value);
        }
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length");
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Round every value to the store's precision.
    pub fn quantize(&mut self) {
        if self.precision == Precision::F32 {
            for p in &mut self.params {
                p.value.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.push(self.precision.dtype());
            match self.precision {
                Precision::F32 => p.value.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
                Precision::F64 => p.value.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Decode a container. `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &std::path::Path) -> Result<Self> {
        let fail = |offset: usize, msg: &str| Error::format(origin, Some(offset as u64), msg);
        if bytes.len() < 16 {
            return Err(fail(0, "truncated parameter container"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(fail(body.len(), "CRC mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4).ok_or_else(|| fail(0, "truncated"))? != MAGIC {
            return Err(fail(0, "bad magic bytes"));
        }
        let version = r.u32().ok_or_else(|| fail(r.pos, "truncated"))?;
        if version != CONTAINER_VERSION {
            return Err(fail(4, &format!("unsupported container version {version}")));
        }
        let count = r.u32().ok_or_else(|| fail(r.pos, "truncated"))?;
        let mut store = ParamStore::new();
        let mut precision = Precision::F64;
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u32().ok_or_else(|| fail(r.pos, "truncated name length"))? as usize;
            let name = r.take(name_len).ok_or_else(|| fail(r.pos, "truncated name"))?;
            let name = std::str::from_utf8(name).map_err(|_| fail(at, "tensor name is not utf-8"))?.to_owned();
            let ndim = r.u32().ok_or_else(|| fail(r.pos, "truncated ndim"))? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64().ok_or_else(|| fail(r.pos, "truncated dims"))? as usize);
            }
            let n: usize = shape.iter().product();
            let dtype_at = r.pos;
            let dtype = r.take(1).ok_or_else(|| fail(r.pos, "truncated dtype"))?[0];
            let value: Vec<f64> = match dtype {
                1 => {
                    precision = Precision::F32;
                    let raw = r.take(n * 4).ok_or_else(|| fail(r.pos, "truncated payload"))?;
                    raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
                }
                2 => {
                    let raw = r.take(n * 8).ok_or_else(|| fail(r.pos, "truncated payload"))?;
                    raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
                }
                other => return Err(fail(dtype_at, &format!("unknown dtype {other}"))),
            };
            store.add(&name, &shape, value).map_err(|e| fail(at, &e.to_string()))?;
        }
        if r.pos != body.len() {
            return Err(fail(r.pos, "trailing bytes before CRC"));
        }
        store.precision = precision;
        Ok(store)
    }

    /// Copy values from `other` for every tensor with a matching name and shape.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .id(&p.name)
                .map(|id| other.param(id))
                .ok_or_else(|| Error::param(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if src.shape != p.shape {
                return Err(Error::param(format!(
                    "parameter `{}`: checkpoint shape {:?}, model shape {:?}",
                    p.name, src.shape, p.shape
                )));
            }
            p.value.copy_from_slice(&src.value);
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::path::Path;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("conv.weight", &[2, 1, 3, 3], (0..18).map(|i| i as f64 * 0.25 - 1.0).collect()).unwrap();
        s.add("conv.bias", &[2], vec![0.5, -0.5]).unwrap();
        s
    }

    #[test]
    fn container_round_trip_f64() {
        let s = sample_store();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], MAGIC);
        let back = ParamStore::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.flat_values(), s.flat_values());
        assert_eq!(back.param(back.id("conv.weight").unwrap()).shape, vec![2, 1, 3, 3]);
    }

    #[test]
    fn corrupted_container_is_rejected() {
        let mut bytes = sample_store().to_bytes();
        bytes[20] ^= 0xff;
        let err = ParamStore::from_bytes(&bytes, Path::new("x.bin")).unwrap_err();
        assert!(err.to_string().contains("CRC"), "{err}");
        assert!(ParamStore::from_bytes(b"DRPS", Path::new("x")).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = sample_store();
        assert!(s.add("conv.bias", &[1], vec![0.0]).is_err());
        assert!(s.add("bad", &[2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn f32_container_round_trips_quantized_values(vals in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let mut s = ParamStore::new();
            s.precision = Precision::F32;
            s.add("t", &[vals.len()], vals).unwrap();
            s.quantize();
            let back = ParamStore::from_bytes(&s.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.precision, Precision::F32);
            prop_assert_eq!(back.flat_values(), s.flat_values());
        }
    }
}
