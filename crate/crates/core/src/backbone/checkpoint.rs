//! Checkpoint serialization. Layout, all integers little-endian:
//!
//! ```text
//! magic   b"ALTS"
//! version u32
//! config  P, S, D, n_layers, n_heads, max_positions   (u32 each)
//! records name_len u32 | name utf-8 | rank u32 | dims u32 each | payload f64
//! ```
//!
//! Records are written in state order, so save -> load -> save is
//! bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::{BackboneState, ModelConfig, NamedTensor};

const MAGIC: &[u8; 4] = b"ALTS";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Defaults for the float hyperparameters the binary config block does not
/// carry; callers overwrite them from the run configuration.
const DEFAULT_LN_EPS: f64 = 1e-5;

pub fn save_checkpoint(state: &BackboneState, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    let c = &state.config;
    for v in [
        c.patch_len,
        c.stride,
        c.hidden_dim,
        c.n_layers,
        c.n_heads,
        c.max_positions,
    ] {
        write_u32(&mut w, v as u32)?;
    }
    for (name, tensor) in state.iter() {
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(&mut w, tensor.shape.len() as u32)?;
        for &d in &tensor.shape {
            write_u32(&mut w, d as u32)?;
        }
        for &v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<BackboneState> {
    let file = File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, not a checkpoint file"
        )));
    }
    let version = read_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let patch_len = read_u32(&mut r, "patch_len")? as usize;
    let stride = read_u32(&mut r, "stride")? as usize;
    let hidden_dim = read_u32(&mut r, "hidden_dim")? as usize;
    let n_layers = read_u32(&mut r, "n_layers")? as usize;
    let n_heads = read_u32(&mut r, "n_heads")? as usize;
    let max_positions = read_u32(&mut r, "max_positions")? as usize;
    let config = ModelConfig {
        hidden_dim,
        n_layers,
        n_heads,
        patch_len,
        stride,
        max_positions,
        dropout: 0.0,
        ln_eps: DEFAULT_LN_EPS,
    };
    config.validate()?;

    let mut tensors: IndexMap<String, NamedTensor> = IndexMap::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.read(&mut len_buf)? {
            0 => break,
            4 => {}
            n => {
                // A partial length prefix means the file was cut off.
                let mut rest = Vec::new();
                r.read_to_end(&mut rest)?;
                return Err(Error::Checkpoint(format!(
                    "truncated record header ({n} bytes)"
                )));
            }
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact(&mut r, &mut name_buf, "tensor name")?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".to_string()))?;
        let rank = read_u32(&mut r, &format!("rank of {name}"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, &format!("dims of {name}"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0; numel];
        for v in data.iter_mut() {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b, &format!("payload of {name}"))?;
            *v = f64::from_le_bytes(b);
        }
        if tensors.insert(name.clone(), NamedTensor { shape, data }).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }

    // Every core tensor must exist with the shape the config dictates.
    for (name, expect) in config.param_specs() {
        match tensors.get(&name) {
            None => {
                return Err(Error::Checkpoint(format!("tensor {name} missing from checkpoint")))
            }
            Some(t) if t.shape != expect => {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?} but config implies {:?}",
                    t.shape, expect
                )))
            }
            _ => {}
        }
    }
    Ok(BackboneState::from_parts(config, tensors))
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file while reading {what}: {e}")))
}
