//! Binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SYNR" | u32 version | u64 seed | u64 step | u64 epoch | u32 networks
//! per network: str role | str kind tag | u32 tensors
//!   per tensor: str name | u8 dtype (0 = f32) | u8 trainable | u32 ndim | u32 dims… | f32 payload
//! [u8; 32] SHA-256 of every preceding byte
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{build_from_kind, NetKind, Network};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"SYNR";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub seed: u64,
    pub step: u64,
    pub epoch: u64,
}

#[derive(Clone, Debug)]
pub struct StoredTensor {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct StoredNetwork {
    pub role: String,
    pub kind: NetKind,
    pub tensors: Vec<StoredTensor>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub counters: Counters,
    pub networks: Vec<StoredNetwork>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes networks (cast to f32) with their roles.
pub fn encode<T: Real>(networks: &[(&str, &Network<T>)], counters: Counters) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [counters.seed, counters.step, counters.epoch] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(networks.len() as u32).to_le_bytes());
    for (role, net) in networks {
        put_str(&mut out, role);
        put_str(&mut out, &net.kind().to_string());
        out.extend_from_slice(&(net.params().len() as u32).to_le_bytes());
        for p in net.params() {
            put_str(&mut out, &p.name);
            out.push(DTYPE_F32);
            out.push(p.trainable as u8);
            out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_f32().to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint(format!("invalid UTF-8 at byte {at}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic or too short)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch (corrupted or truncated file)".into()));
    }
    let mut r = Reader { b: body, pos: 8 };
    let counters = Counters {
        seed: r.u64()?,
        step: r.u64()?,
        epoch: r.u64()?,
    };
    let n_nets = r.u32()?;
    let mut networks = Vec::new();
    for _ in 0..n_nets {
        let role = r.str()?;
        let kind: NetKind = r.str()?.parse()?;
        let n_t = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n_t {
            let name = r.str()?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Checkpoint(format!("tensor `{name}` has unknown dtype {dtype}")));
            }
            let trainable = r.u8()? != 0;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(StoredTensor {
                name,
                trainable,
                value: Tensor::new(&shape, data)?,
            });
        }
        networks.push(StoredNetwork { role, kind, tensors });
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} unexpected trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint { counters, networks })
}

/// Writes to a temporary sibling and renames it over `path`, so a partial
/// write never leaves a loadable file.
pub fn save_checkpoint<T: Real>(path: &Path, networks: &[(&str, &Network<T>)], counters: Counters) -> Result<()> {
    let bytes = encode(networks, counters);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl StoredNetwork {
    /// Copies the stored values into `net` after checking the kind tag and
    /// every name and shape. `net` is untouched on any error.
    pub fn apply_to<T: Real>(&self, net: &mut Network<T>) -> Result<()> {
        if net.kind() != &self.kind {
            return Err(Error::Checkpoint(format!(
                "network kind mismatch: checkpoint has `{}`, target is `{}`",
                self.kind,
                net.kind()
            )));
        }
        if net.params().len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "tensor count mismatch: {} stored, {} expected",
                self.tensors.len(),
                net.params().len()
            )));
        }
        for (p, t) in net.params().iter().zip(&self.tensors) {
            if p.name != t.name || p.value.shape() != t.value.shape() || p.trainable != t.trainable {
                return Err(Error::Checkpoint(format!("tensor `{}` does not match `{}`", t.name, p.name)));
            }
        }
        for (p, t) in net.params_mut().iter_mut().zip(&self.tensors) {
            p.value = t.value.cast();
        }
        Ok(())
    }

    /// Builds the network named by the kind tag and loads the values.
    pub fn rebuild<T: Real>(&self) -> Result<Network<T>> {
        let mut net = build_from_kind(&self.kind, 0)?;
        self.apply_to(&mut net)?;
        Ok(net)
    }
}

impl Checkpoint {
    pub fn network(&self, role: &str) -> Result<&StoredNetwork> {
        self.networks.iter().find(|n| n.role == role).ok_or_else(|| Error::Lookup {
            kind: "checkpoint network",
            name: role.to_string(),
        })
    }
}

/// Loads the network stored under `role` into `net`. Nothing is mutated
/// unless the whole file validates.
pub fn load_checkpoint_into<T: Real>(path: &Path, role: &str, net: &mut Network<T>) -> Result<Counters> {
    let ck = read_checkpoint(path)?;
    ck.network(role)?.apply_to(net)?;
    Ok(ck.counters)
}
