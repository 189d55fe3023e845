//! Binary checkpoints for networks and policies.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "EPO-NET\0"
//! version      u32      FORMAT_VERSION
//! kind         u8       0 = bare MLP, 1 = Gaussian policy
//! activation   u8       1 = tanh hidden / identity output
//! n_sizes      u32
//! layer_sizes  n_sizes x u64
//! n_intervals  u32      (policy only, else 0)
//! intervals    n_intervals x (f64 lo, f64 hi)
//! n_params     u64
//! params       n_params x f64   flatten order (policy: net params then log_std)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::mlp::Mlp;
use super::policy::{ActionInterval, GaussianPolicy};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EPO-NET\0";
pub const FORMAT_VERSION: u32 = 1;
const ACTIVATION_TANH: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Mlp = 0,
    Policy = 1,
}

fn encode(kind: Kind, sizes: &[usize], intervals: &[ActionInterval], params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind as u8);
    out.push(ACTIVATION_TANH);
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    out.extend_from_slice(&(intervals.len() as u32).to_le_bytes());
    for iv in intervals {
        out.extend_from_slice(&iv.lo.to_le_bytes());
        out.extend_from_slice(&iv.hi.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Decoded {
    kind: Kind,
    sizes: Vec<usize>,
    intervals: Vec<ActionInterval>,
    params: Vec<f64>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a network checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let kind = match r.u8()? {
        0 => Kind::Mlp,
        1 => Kind::Policy,
        k => return Err(Error::Checkpoint(format!("unknown checkpoint kind {k}"))),
    };
    let activation = r.u8()?;
    if activation != ACTIVATION_TANH {
        return Err(Error::Checkpoint(format!("unknown activation tag {activation}")));
    }
    let n_sizes = r.u32()? as usize;
    let sizes = (0..n_sizes).map(|_| r.u64().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
    let n_intervals = r.u32()? as usize;
    let mut intervals = Vec::with_capacity(n_intervals);
    for _ in 0..n_intervals {
        let (lo, hi) = (r.f64()?, r.f64()?);
        intervals.push(ActionInterval::new(lo, hi).map_err(|e| Error::Checkpoint(e.to_string()))?);
    }
    let n_params = r.u64()? as usize;
    let params = (0..n_params).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Decoded {
        kind,
        sizes,
        intervals,
        params,
    })
}

pub fn encode_mlp(net: &Mlp) -> Vec<u8> {
    encode(Kind::Mlp, net.layer_sizes(), &[], net.params())
}

pub fn encode_policy(policy: &GaussianPolicy) -> Vec<u8> {
    encode(
        Kind::Policy,
        policy.mean_net().layer_sizes(),
        policy.intervals(),
        &policy.flat_params(),
    )
}

pub fn decode_mlp(bytes: &[u8]) -> Result<Mlp> {
    let d = decode(bytes)?;
    if d.kind != Kind::Mlp {
        return Err(Error::Checkpoint("checkpoint holds a policy, not a bare network".into()));
    }
    let mut net = Mlp::zeros(&d.sizes)?;
    net.set_params(&d.params)
        .map_err(|_| Error::Checkpoint(format!("parameter count does not match layer_sizes {:?}", d.sizes)))?;
    Ok(net)
}

pub fn decode_policy(bytes: &[u8]) -> Result<GaussianPolicy> {
    let d = decode(bytes)?;
    if d.kind != Kind::Policy {
        return Err(Error::Checkpoint("checkpoint holds a bare network, not a policy".into()));
    }
    let net = Mlp::zeros(&d.sizes)?;
    let mut policy = GaussianPolicy::from_parts(net, vec![0.0; d.intervals.len()], d.intervals)
        .map_err(|e| Error::Checkpoint(format!("layer_sizes {:?}: {e}", d.sizes)))?;
    policy
        .set_flat_params(&d.params)
        .map_err(|_| Error::Checkpoint(format!("parameter count does not match layer_sizes {:?}", d.sizes)))?;
    Ok(policy)
}

pub fn save_policy(policy: &GaussianPolicy, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_policy(policy))?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<GaussianPolicy> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_policy(&bytes)
}

/// Loads a policy and checks it has the expected architecture.
pub fn load_policy_expecting(path: &Path, layer_sizes: &[usize]) -> Result<GaussianPolicy> {
    let policy = load_policy(path)?;
    if policy.mean_net().layer_sizes() != layer_sizes {
        return Err(Error::Checkpoint(format!(
            "architecture mismatch: checkpoint layer_sizes {:?}, config expects {:?}",
            policy.mean_net().layer_sizes(),
            layer_sizes
        )));
    }
    Ok(policy)
}
