//! Denoiser checkpoints.
//!
//! Layout (little endian): magic `TDNS`, `u16` version, ten `u32` config
//! fields in declaration order (flags as 0 or 1), a `u32` parameter count,
//! then per parameter a `u32` name length, the UTF-8 name, a `u32` rank,
//! the `u32` dims and the `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use super::denoiser::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::triplane::io::{read_exact, read_f32s, read_u16, read_u32};

pub const DENOISER_MAGIC: &[u8; 4] = b"TDNS";
pub const DENOISER_VERSION: u16 = 1;

fn bad(field: &'static str, msg: impl Into<String>) -> Error {
    Error::Checkpoint { field, msg: msg.into() }
}

pub fn write_denoiser<W: Write>(w: &mut W, model: &Denoiser) -> Result<()> {
    let c = &model.cfg;
    w.write_all(DENOISER_MAGIC)?;
    w.write_all(&DENOISER_VERSION.to_le_bytes())?;
    let header = [
        c.res,
        c.channels,
        c.width,
        c.levels,
        c.oa as usize,
        c.adapters as usize,
        c.text_dim,
        c.d_k,
        c.time_dim,
        c.cross_line_index,
    ];
    for v in header {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&(model.store.len() as u32).to_le_bytes())?;
    let mut buf = Vec::new();
    for e in model.store.entries() {
        buf.clear();
        buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.extend_from_slice(&(e.value.rank() as u32).to_le_bytes());
        for &d in e.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.value.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_denoiser<R: Read>(r: &mut R) -> Result<Denoiser> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "denoiser_magic")?;
    if &magic != DENOISER_MAGIC {
        return Err(bad("denoiser_magic", format!("expected TDNS, found {magic:?}")));
    }
    let version = read_u16(r, "denoiser_version")?;
    if version != DENOISER_VERSION {
        return Err(bad("denoiser_version", format!("unsupported version {version}")));
    }
    let mut h = [0usize; 10];
    for v in h.iter_mut() {
        *v = read_u32(r, "config")? as usize;
        if *v > 1 << 16 {
            return Err(bad("config", format!("implausible value {v}")));
        }
    }
    let flag = |v: usize| match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(bad("config", format!("flag must be 0 or 1, found {v}"))),
    };
    let cfg = DenoiserConfig {
        res: h[0],
        channels: h[1],
        width: h[2],
        levels: h[3],
        oa: flag(h[4])?,
        adapters: flag(h[5])?,
        text_dim: h[6],
        d_k: h[7],
        time_dim: h[8],
        cross_line_index: h[9],
    };
    let mut model = Denoiser::new(cfg, 0).map_err(|e| bad("config", e.to_string()))?;
    let count = read_u32(r, "param_count")? as usize;
    if count != model.store.len() {
        return Err(bad("param_count", format!("expected {}, found {count}", model.store.len())));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let len = read_u32(r, "param_name")? as usize;
        if len > 256 {
            return Err(bad("param_name", format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        read_exact(r, &mut name, "param_name")?;
        let name = String::from_utf8(name).map_err(|_| bad("param_name", "not UTF-8"))?;
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| bad("param_name", format!("unknown parameter `{name}`")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(bad("param_name", format!("duplicate parameter `{name}`")));
        }
        let rank = read_u32(r, "param_dims")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank.min(8) {
            dims.push(read_u32(r, "param_dims")? as usize);
        }
        if dims != model.store.get(id).shape() {
            return Err(bad(
                "param_dims",
                format!("`{name}` has dims {dims:?}, expected {:?}", model.store.get(id).shape()),
            ));
        }
        let n = model.store.get(id).len();
        let vals = read_f32s(r, n, "param_values")?;
        model.store.get_mut(id).data_mut().copy_from_slice(&vals);
    }
    Ok(model)
}

pub fn save_denoiser(path: &Path, model: &Denoiser) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_denoiser(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_denoiser(path: &Path) -> Result<Denoiser> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_denoiser(&mut r)
}
