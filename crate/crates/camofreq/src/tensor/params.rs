//! Named parameter store with deterministic seeded initialization and a
//! self-describing binary serialization.
//!
//! File layout: magic bytes `CFRQ1`, then one record per parameter in
//! lexicographic name order — name length (u32 LE), UTF-8 name, rank
//! (u32 LE), each dimension (u32 LE), then the row-major float64 payload
//! (LE). Records run to end of file; truncation is a format error.

use super::Tensor;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const PARAM_MAGIC: &[u8; 5] = b"CFRQ1";

/// Map from parameter name to a `requires_grad` leaf tensor.
///
/// Initialization draws from a ChaCha stream seeded once at construction, so
/// an identical seed and an identical sequence of `add_*` calls produce
/// bit-identical parameters on any platform.
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    rng: ChaCha8Rng,
    /// Seed recorded at initialization (0 for stores loaded from disk).
    pub rng_seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> ParamStore {
        ParamStore {
            params: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            rng_seed: seed,
        }
    }

    fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    /// Add a parameter drawn i.i.d. from U(−limit, limit).
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], limit: f64) -> Result<()> {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|_| self.rng.random::<f64>() * 2.0 * limit - limit)
            .collect();
        self.insert(name, Tensor::new_param(shape, data)?)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        let numel: usize = shape.iter().product();
        self.insert(name, Tensor::new_param(shape, vec![0.0; numel])?)
    }

    /// Add a parameter holding a copy of `source`'s current values.
    pub fn add_copy(&mut self, name: &str, source: &Tensor) -> Result<()> {
        self.insert(
            name,
            Tensor::new_param(source.shape(), source.data().to_vec())?,
        )
    }

    /// Add a frozen (non-trainable) copy of `source`'s current values.
    /// Backpropagation prunes everything behind a frozen parameter.
    pub fn add_frozen(&mut self, name: &str, source: &Tensor) -> Result<()> {
        self.insert(name, Tensor::new(source.shape(), source.data().to_vec())?)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Replace a parameter's values (shape must match); the replacement is a
    /// fresh leaf, so graphs recorded against the old value are unaffected.
    pub fn set(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let old = self.get(name)?;
        if old.numel() != data.len() {
            return Err(Error::Dimension(format!(
                "parameter '{name}' has {} elements, replacement has {}",
                old.numel(),
                data.len()
            )));
        }
        let shape = old.shape().to_vec();
        self.params
            .insert(name.to_string(), Tensor::new_param(&shape, data)?);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(PARAM_MAGIC);
        for (name, tensor) in &self.params {
            let name_bytes = name.as_bytes();
            buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
            buf.extend_from_slice(name_bytes);
            buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
            for &d in tensor.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ParamStore> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize, what: &str| -> Result<std::ops::Range<usize>> {
            if *cursor + n > bytes.len() {
                return Err(Error::Format(format!(
                    "truncated parameter file: expected {n} bytes for {what} at offset {cursor}"
                )));
            }
            let range = *cursor..*cursor + n;
            *cursor += n;
            Ok(range)
        };
        let magic = take(&mut cursor, PARAM_MAGIC.len(), "magic")?;
        if &bytes[magic] != PARAM_MAGIC {
            return Err(Error::Format(
                "bad magic bytes: not a parameter file".to_string(),
            ));
        }
        let mut store = ParamStore::new(0);
        store.rng_seed = 0;
        while cursor < bytes.len() {
            let r = take(&mut cursor, 4, "name length")?;
            let name_len = u32::from_le_bytes(bytes[r].try_into().unwrap()) as usize;
            let r = take(&mut cursor, name_len, "name")?;
            let name = std::str::from_utf8(&bytes[r])
                .map_err(|_| Error::Format("parameter name is not valid UTF-8".to_string()))?
                .to_string();
            let r = take(&mut cursor, 4, "rank")?;
            let rank = u32::from_le_bytes(bytes[r].try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let r = take(&mut cursor, 4, "dimension")?;
                shape.push(u32::from_le_bytes(bytes[r].try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let r = take(&mut cursor, numel * 8, "payload")?;
            let data: Vec<f64> = bytes[r]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new_param(&shape, data)?;
            store.insert(&name, tensor)?;
        }
        Ok(store)
    }
}
