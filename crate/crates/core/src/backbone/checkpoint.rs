//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CMTADCK1"
//! version    u32      currently 1
//! config     u64 length + UTF-8 JSON of ModelConfig
//! rng_seed   u64
//! n_params   u64
//! per parameter, in model order:
//!   name     u32 length + UTF-8 bytes
//!   ndim     u32
//!   dims     ndim x u64
//!   payload  prod(dims) x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelState};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CMTADCK1";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(state: &ModelState, mut w: W) -> Result<()> {
    let cfg = serde_json::to_vec(&state.config)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(cfg.len() as u64).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&state.rng_seed.to_le_bytes())?;
    w.write_all(&(state.params().len() as u64).to_le_bytes())?;
    for (name, p) in state.names().iter().zip(state.params()) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(p.shape().len() as u32).to_le_bytes())?;
        for &d in p.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.numel() * 8);
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<R> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.r
            .read_exact(&mut b)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, limit: u64, what: &str) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(Error::Checkpoint(format!("implausible {what} length {n}")));
        }
        Ok(n as usize)
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<ModelState> {
    let mut rd = Reader { r };
    if rd.bytes(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = rd.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = rd.len(1 << 24, "config")?;
    let config: ModelConfig = serde_json::from_slice(&rd.bytes(cfg_len)?)?;
    config.validate()?;
    let seed = rd.u64()?;
    let n = rd.len(1 << 20, "parameter list")?;
    let mut names = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = rd.u32()? as usize;
        let name = String::from_utf8(rd.bytes(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = rd.u32()? as usize;
        let dims = (0..ndim)
            .map(|_| rd.len(1 << 32, "dimension"))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let raw = rd.bytes(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(Tensor::new(dims, data)?.requiring_grad());
        names.push(name);
    }
    ModelState::assemble(config, seed, names, params)
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(state, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
