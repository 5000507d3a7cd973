//! `AFLAB` checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      b"AFLAB"
//! version    u32
//! header     u32 byte length, then UTF-8 `key=value` lines
//! count      u32 number of parameters
//! per param  u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor2D};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"AFLAB";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub params: Vec<(String, Tensor2D)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, prefixes: &[&str]) -> Self {
        let params = store
            .iter()
            .filter(|(_, n, _)| prefixes.is_empty() || prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(_, n, p)| (n.to_string(), p.value.clone()))
            .collect();
        Self { header: BTreeMap::new(), params }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2D> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn header_value(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("header is missing `{key}`")))
    }

    /// Overwrites values in `store` for every parameter of this checkpoint
    /// under `prefix`. Every such parameter must already exist with the same shape.
    pub fn load_into(&self, store: &mut ParamStore, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, t) in self.params.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let id = store.id(name)?;
            let p = store.get_mut(id);
            if p.value.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?} in checkpoint but {:?} in model",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
            n += 1;
        }
        Ok(n)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let mut header = String::new();
        for (k, v) in &self.header {
            if k.contains('=') || k.contains('\n') || v.contains('\n') {
                return Err(Error::Checkpoint(format!("header entry `{k}` is not a single key=value line")));
            }
            header.push_str(&format!("{k}={v}\n"));
        }
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("truncated magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not an AFLAB checkpoint".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::CheckpointVersion { found: version, expected: VERSION });
        }
        let hlen = read_u32(r)? as usize;
        let mut hbytes = vec![0u8; hlen];
        r.read_exact(&mut hbytes)?;
        let htext = String::from_utf8(hbytes).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let mut header = BTreeMap::new();
        for line in htext.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let count = read_u32(r)? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = read_u32(r)? as usize;
            let mut nbytes = vec![0u8; nlen];
            r.read_exact(&mut nbytes)?;
            let name = String::from_utf8(nbytes).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            params.push((name, Tensor2D::new(rows, cols, data)?));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated".into()))?;
    Ok(u64::from_le_bytes(b))
}
