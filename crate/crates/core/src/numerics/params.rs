//! Named parameters with gradient slots and a versioned binary container.
//!
//! Container layout (all integers little-endian `u32`):
//! `b"M3PS"`, format version, entry count, then per entry: name length,
//! UTF-8 name bytes, rank, extents, and the values as little-endian `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"M3PS";
pub const FORMAT_VERSION: u32 = 1;

/// Parameters whose name starts with this prefix hold fixed statistics and are
/// never touched by the optimizer.
pub const STATS_PREFIX: &str = "stats.";

#[derive(Debug, Clone)]
struct Entry<T> {
    value: Tensor<T>,
    grad: Tensor<T>,
}

/// Name-ordered parameter map. Each parameter has a zero-initialised gradient
/// slot of the same shape.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name, Entry { value, grad });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    /// Adds `delta` into the gradient slot of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor<T>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))?;
        if entry.grad.shape() != delta.shape() {
            return Err(Error::Dimension {
                op: "accumulate_grad",
                lhs: entry.grad.shape().to_vec(),
                rhs: delta.shape().to_vec(),
            });
        }
        for (g, &d) in entry.grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    /// Mutable access to `(name, value, grad)` for optimizers.
    pub fn iter_with_grad_mut(
        &mut self,
    ) -> impl Iterator<Item = (&str, &mut Tensor<T>, &Tensor<T>)> {
        self.entries
            .iter_mut()
            .map(|(k, e)| (k.as_str(), &mut e.value, &e.grad))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        Entry {
                            value: e.value.cast(),
                            grad: e.grad.cast(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Copies values from `other` for every shared name; errors on shape mismatch.
    pub fn load_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (name, entry) in self.entries.iter_mut() {
            if let Some(src) = other.entries.get(name) {
                if src.value.shape() != entry.value.shape() {
                    return Err(Error::Dimension {
                        op: "load_values_from",
                        lhs: entry.value.shape().to_vec(),
                        rhs: src.value.shape().to_vec(),
                    });
                }
                entry.value = src.value.clone();
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, e) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(e.value.shape().len() as u32).to_le_bytes())?;
            for &d in e.value.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in e.value.data() {
                w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("bad magic".into());
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let count = read_u32(&mut r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > r.len() {
                return Err("truncated name".into());
            }
            let name = std::str::from_utf8(&r[..name_len])
                .map_err(|e| e.to_string())?
                .to_owned();
            r = &r[name_len..];
            let rank = read_u32(&mut r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(|e| e.to_string())?;
                data.push(T::from_f64(f32::from_le_bytes(b) as f64));
            }
            let value = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
            store.insert(name, value).map_err(|e| e.to_string())?;
        }
        if !r.is_empty() {
            return Err(format!("{} trailing bytes", r.len()));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}

fn read_u32(r: &mut &[u8]) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u32::from_le_bytes(b))
}
