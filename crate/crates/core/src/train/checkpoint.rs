//! Checkpoints of fitted fields: a triplane section followed by a heads
//! section.
//!
//! Heads layout (little endian): magic `HEDS`, `u16` version, `u32`
//! frequency bands, then the density and the color head, each as a `u32`
//! layer count followed per layer by `u32` fan-in, `u32` fan-out, the
//! `f32` weights (row-major, fan-in rows) and the `f32` biases.

use std::io::{Read, Write};
use std::path::Path;

use super::fit::FittedField;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::numerics::{ParamStore, Tensor};
use crate::triplane::io::{read_exact, read_f32s, read_u16, read_u32};
use crate::triplane::{read_triplane, write_triplane};

pub const HEADS_MAGIC: &[u8; 4] = b"HEDS";
pub const HEADS_VERSION: u16 = 1;

fn write_f32s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(4 * vals.len());
    for &v in vals {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn write_mlp<W: Write>(w: &mut W, store: &ParamStore, mlp: &Mlp) -> Result<()> {
    w.write_all(&(mlp.layers.len() as u32).to_le_bytes())?;
    for l in &mlp.layers {
        w.write_all(&(l.fan_in as u32).to_le_bytes())?;
        w.write_all(&(l.fan_out as u32).to_le_bytes())?;
        write_f32s(w, store.get(l.w).data())?;
        match l.b {
            Some(b) => write_f32s(w, store.get(b).data())?,
            None => write_f32s(w, &vec![0.0; l.fan_out])?,
        }
    }
    Ok(())
}

type Layers = (Vec<Tensor>, Vec<Tensor>);

fn read_mlp<R: Read>(r: &mut R) -> Result<Layers> {
    let n = read_u32(r, "layer_count")? as usize;
    if n == 0 || n > 64 {
        return Err(Error::Checkpoint {
            field: "layer_count",
            msg: format!("invalid layer count {n}"),
        });
    }
    let (mut ws, mut bs) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let fan_in = read_u32(r, "fan_in")? as usize;
        let fan_out = read_u32(r, "fan_out")? as usize;
        if fan_in == 0 || fan_out == 0 || fan_in > 1 << 16 || fan_out > 1 << 16 {
            return Err(Error::Checkpoint {
                field: "layer_dims",
                msg: format!("invalid layer {fan_in}x{fan_out}"),
            });
        }
        ws.push(Tensor::new(&[fan_in, fan_out], read_f32s(r, fan_in * fan_out, "weights")?)?);
        bs.push(Tensor::new(&[fan_out], read_f32s(r, fan_out, "biases")?)?);
    }
    Ok((ws, bs))
}

pub fn write_fit_checkpoint<W: Write>(w: &mut W, field: &FittedField) -> Result<()> {
    write_triplane(w, &field.triplane())?;
    w.write_all(HEADS_MAGIC)?;
    w.write_all(&HEADS_VERSION.to_le_bytes())?;
    w.write_all(&(field.heads.frequencies as u32).to_le_bytes())?;
    write_mlp(w, &field.store, &field.heads.density)?;
    write_mlp(w, &field.store, &field.heads.color)
}

pub fn read_fit_checkpoint<R: Read>(r: &mut R) -> Result<FittedField> {
    let tri = read_triplane(r)?;
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "heads_magic")?;
    if &magic != HEADS_MAGIC {
        return Err(Error::Checkpoint {
            field: "heads_magic",
            msg: format!("expected HEDS, found {:?}", String::from_utf8_lossy(&magic)),
        });
    }
    let version = read_u16(r, "heads_version")?;
    if version != HEADS_VERSION {
        return Err(Error::Checkpoint {
            field: "heads_version",
            msg: format!("unsupported version {version}"),
        });
    }
    let freqs = read_u32(r, "frequencies")? as usize;
    if freqs > 16 {
        return Err(Error::Checkpoint {
            field: "frequencies",
            msg: format!("invalid band count {freqs}"),
        });
    }
    let density = read_mlp(r)?;
    let color = read_mlp(r)?;
    FittedField::from_parts(&tri, density, color, freqs).map_err(|e| Error::Checkpoint {
        field: "layer_dims",
        msg: e.to_string(),
    })
}

pub fn save_fit_checkpoint(path: &Path, field: &FittedField) -> Result<()> {
    let mut buf = Vec::new();
    write_fit_checkpoint(&mut buf, field)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_fit_checkpoint(path: &Path) -> Result<FittedField> {
    let bytes = std::fs::read(path)?;
    read_fit_checkpoint(&mut bytes.as_slice())
}
