//! Binary checkpoint: `RPCCKPT1`, latent dim, variant code and tensor count
//! (u32 LE each), then per tensor the name length (u32), UTF-8 name, rank
//! (u32), shape (u32 each) and values (f64 LE each).

use std::path::Path;

use super::{AgentParams, Architecture, VariantKind};
use crate::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"RPCCKPT1";
const LOG_LAMBDA: &str = "log_lambda";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
    #[error("shape mismatch for `{name}`: checkpoint {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("io: {0}")]
    Io(String),
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(params: &AgentParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, params.latent_dim());
    put_u32(&mut out, params.variant.code() as usize);
    put_u32(&mut out, params.store.len() + 1);
    let lam = Tensor::scalar(params.log_lambda);
    let items = params
        .store
        .iter()
        .map(|(n, t)| (n.as_str(), t))
        .chain(std::iter::once((LOG_LAMBDA, &lam)));
    for (name, t) in items {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Decode and infer the architecture from tensor shapes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<AgentParams, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let latent_dim = r.u32()?;
    let code = r.u32()?;
    let variant = VariantKind::from_code(code as u32)
        .ok_or_else(|| CheckpointError::Malformed(format!("variant code {code}")))?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    let mut log_lambda = None;
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        if n > bytes.len() / 8 {
            return Err(CheckpointError::Truncated);
        }
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if name == LOG_LAMBDA {
            log_lambda = Some(t.item());
        } else {
            store.insert(name, t);
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    let log_lambda = log_lambda.ok_or_else(|| CheckpointError::Malformed("no log_lambda".into()))?;
    let arch = infer_arch(&store, latent_dim)?;
    check_shapes(&store, &arch)?;
    Ok(AgentParams::from_parts(arch, variant, store, log_lambda))
}

fn infer_arch(store: &ParamStore, latent_dim: usize) -> Result<Architecture, CheckpointError> {
    let missing = |n: &str| CheckpointError::Malformed(format!("missing tensor `{n}`"));
    let mut hidden = Vec::new();
    let mut layer = 0;
    let obs_dim = store.get("enc.l0.w").ok_or_else(|| missing("enc.l0.w"))?.shape()[0];
    while let Some(w) = store.get(&format!("enc.l{}.w", layer + 1)) {
        hidden.push(w.shape()[0]);
        layer += 1;
    }
    let last = format!("pi.l{layer}.b");
    let act_dim = store.get(&last).ok_or_else(|| missing(&last))?.len() / 2;
    Ok(Architecture {
        obs_dim,
        act_dim,
        latent_dim,
        hidden,
    })
}

fn check_shapes(store: &ParamStore, arch: &Architecture) -> Result<(), CheckpointError> {
    let expected = AgentParams::init(arch.clone(), VariantKind::Rpc, 0).store;
    if expected.len() != store.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} tensors, expected {}",
            store.len(),
            expected.len()
        )));
    }
    for (name, t) in expected.iter() {
        let found = store
            .get(name)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor `{name}`")))?;
        if found.shape() != t.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: t.shape().to_vec(),
                found: found.shape().to_vec(),
            });
        }
    }
    Ok(())
}

pub fn save_checkpoint(params: &AgentParams, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(params))
        .map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<AgentParams, CheckpointError> {
    let bytes =
        std::fs::read(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

/// Load and require the stored networks to match `arch` exactly.
pub fn load_checkpoint_for(path: &Path, arch: &Architecture) -> Result<AgentParams, CheckpointError> {
    let params = load_checkpoint(path)?;
    check_shapes(&params.store, arch)?;
    Ok(params)
}
