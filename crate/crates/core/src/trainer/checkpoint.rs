//! Binary checkpoint format.
//!
//! ```text
//! "CINW1\n"
//! u32 tensor count
//! per tensor: u32 name length, name, u8 dtype (0 = f32, 1 = f64),
//!             u32 rank, rank × u32 dims, raw data
//! u32 metadata length, metadata (UTF-8 `key=value` lines)
//! ```
//!
//! All integers and scalars are little-endian. Optimizer velocity is stored
//! as ordinary tensors under the `velocity.` prefix.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::activations::SlotActivation;
use crate::error::{Error, Result};
use crate::network::{Architecture, Network};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"CINW1\n";
pub const FORMAT_VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity.";

/// A tensor of either element type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => AnyTensor::F32(t.cast()),
            DType::F64 => AnyTensor::F64(t.cast()),
        }
    }

    /// Converts to `T`; exact when `T` is the stored type.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }
}

/// Network state, optimizer velocity and the training cursor.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub slots: Vec<(String, SlotActivation)>,
    pub params: BTreeMap<String, AnyTensor>,
    pub velocity: BTreeMap<String, AnyTensor>,
    pub fingerprint: String,
    /// Every random stream in a run derives from this seed and the epoch
    /// index, so seed plus cursor is the complete RNG state.
    pub rng_seed: u64,
    pub epochs_done: usize,
    pub phase: u8,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        Checkpoint {
            architecture: net.architecture(),
            slots: net.slots().iter().map(|s| (s.site.clone(), s.current.clone())).collect(),
            params: net
                .params()
                .iter()
                .map(|(k, v)| (k.clone(), AnyTensor::from_tensor(v)))
                .collect(),
            velocity: BTreeMap::new(),
            fingerprint: String::new(),
            rng_seed: 0,
            epochs_done: 0,
            phase: 0,
        }
    }

    pub fn network<T: Scalar>(&self) -> Result<Network<T>> {
        let params = self.params.iter().map(|(k, v)| (k.clone(), v.to_tensor())).collect();
        Network::from_parts(self.architecture, &self.slots, params)
    }

    pub fn velocity_tensors<T: Scalar>(&self) -> BTreeMap<String, Tensor<T>> {
        self.velocity.iter().map(|(k, v)| (k.clone(), v.to_tensor())).collect()
    }

    fn metadata(&self) -> String {
        let mut m = format!("format={FORMAT_VERSION}\narchitecture={}\n", self.architecture);
        for (site, act) in &self.slots {
            m.push_str(&format!("slot.{site}={act}\n"));
        }
        m.push_str(&format!(
            "fingerprint={}\nrng.seed={}\ncursor.epochs_done={}\ncursor.phase={}\n",
            self.fingerprint, self.rng_seed, self.epochs_done, self.phase
        ));
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let entries: Vec<(String, &AnyTensor)> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v))
            .chain(self.velocity.iter().map(|(k, v)| (format!("{VELOCITY_PREFIX}{k}"), v)))
            .collect();
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, t) in entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype().code());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match t {
                AnyTensor::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                AnyTensor::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        let meta = self.metadata();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(CHECKPOINT_MAGIC.len())?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let count = r.u32()? as usize;
        let mut params = BTreeMap::new();
        let mut velocity = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            let dtype = DType::from_code(dtype)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` has unknown dtype code {dtype}")))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.size())?;
            let bad_shape = |e: Error| Error::Checkpoint(format!("tensor `{name}`: {e}"));
            let t = match dtype {
                DType::F32 => AnyTensor::F32(
                    Tensor::from_vec(shape, raw.chunks_exact(4).map(f32::read_le).collect()).map_err(bad_shape)?,
                ),
                DType::F64 => AnyTensor::F64(
                    Tensor::from_vec(shape, raw.chunks_exact(8).map(f64::read_le).collect()).map_err(bad_shape)?,
                ),
            };
            match name.strip_prefix(VELOCITY_PREFIX) {
                Some(p) => velocity.insert(p.to_string(), t),
                None => params.insert(name, t),
            };
        }
        let len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }

        let mut fields = BTreeMap::new();
        let mut slots = Vec::new();
        for line in meta.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed metadata line `{line}`")))?;
            match k.strip_prefix("slot.") {
                Some(site) => slots.push((site.to_string(), SlotActivation::from_str(v)?)),
                None => {
                    fields.insert(k, v);
                }
            }
        }
        let field = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks `{k}`")))
        };
        let number = |k: &str| -> Result<u64> {
            field(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata `{k}` is not an integer")))
        };
        if number("format")? != u64::from(FORMAT_VERSION) {
            return Err(Error::Checkpoint(format!("unsupported format version {}", field("format")?)));
        }
        Ok(Checkpoint {
            architecture: field("architecture")?.parse()?,
            slots,
            params,
            velocity,
            fingerprint: field("fingerprint")?.to_string(),
            rng_seed: number("rng.seed")?,
            epochs_done: number("cursor.epochs_done")? as usize,
            phase: number("cursor.phase")? as u8,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
