//! Binary checkpoint container: a JSON config block plus named `f64` arrays.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "ECPECKPT" | u32 version | u64 config_len | config JSON
//! u32 n_tensors | n x (u32 name_len | name | u32 ndim | ndim x u64 | numel x f64)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use super::params::Params;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ECPECKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(config: Value) -> Self {
        Self {
            config,
            tensors: Vec::new(),
        }
    }

    pub fn add_params<P: Params>(&mut self, prefix: &str, params: &P) {
        params.visit(prefix, &mut |p| {
            self.tensors.push(NamedTensor {
                name: p.name.to_string(),
                shape: p.shape.to_vec(),
                data: p.data.to_vec(),
            })
        });
    }

    pub fn add_raw(&mut self, name: impl Into<String>, data: Vec<f64>) {
        let shape = vec![data.len()];
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Overwrites every parameter of `params` from the tensor of the same
    /// name. Missing names and size mismatches are errors.
    pub fn load_into<P: Params>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let mut err = None;
        params.visit_mut(prefix, &mut |name, data| {
            if err.is_some() {
                return;
            }
            match self.tensor(name) {
                Some(t) if t.data.len() == data.len() => data.copy_from_slice(&t.data),
                Some(t) => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor `{name}` has {} entries, model expects {}",
                        t.data.len(),
                        data.len()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("tensor `{name}` missing"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("json value serialization");
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let cfg_len = read_u64(&mut r)? as usize;
        let cfg = take(&mut r, cfg_len)?;
        let config: Value = serde_json::from_slice(cfg).map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
        let n = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(take(&mut r, name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = take(&mut r, numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    buf.copy_from_slice(take(r, buf.len())?);
    Ok(())
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BiLstm, Dense};
    use rand::SeedableRng;
    use serde_json::json;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = crate::nn::TrainRng::seed_from_u64(3);
        let net = BiLstm::init(3, 2, 2, 0.3, &mut rng);
        let mut head = Dense::init(4, 7, &mut rng);
        head.bias[0] = f64::MIN_POSITIVE / 3.0;
        let mut ck = Checkpoint::new(json!({"stage": "emotion", "hidden": 2}));
        ck.add_params("enc", &net);
        ck.add_params("head", &head);

        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let mut net2 = BiLstm::zeros(3, 2, 2, 0.3);
        let mut head2 = Dense::zeros(4, 7);
        back.load_into("enc", &mut net2).unwrap();
        back.load_into("head", &mut head2).unwrap();
        assert_eq!(net2, net);
        assert_eq!(head2.bias[0].to_bits(), head.bias[0].to_bits());
    }

    #[test]
    fn missing_and_mismatched_tensors() {
        let mut ck = Checkpoint::new(json!({}));
        ck.add_params("head", &Dense::zeros(2, 2));
        assert!(ck.load_into("other", &mut Dense::zeros(2, 2)).is_err());
        assert!(ck.load_into("head", &mut Dense::zeros(3, 2)).is_err());
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }
}
