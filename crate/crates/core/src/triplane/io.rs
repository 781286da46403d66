//! Binary triplane checkpoints.
//!
//! Layout (little endian): magic `TRPL`, `u16` version, `u32` resolution D,
//! `u32` channels C, then `3 * D * D * C` `f32` values ordered by plane
//! (`xy`, `xz`, `yz`), channel, `v`, `u` with `u` fastest.

use std::io::{Read, Write};

use super::{PlaneId, Triplane};
use crate::error::{Error, Result};

pub const TRIPLANE_MAGIC: &[u8; 4] = b"TRPL";
pub const TRIPLANE_VERSION: u16 = 1;

pub fn write_triplane<W: Write>(w: &mut W, tri: &Triplane) -> Result<()> {
    w.write_all(TRIPLANE_MAGIC)?;
    w.write_all(&TRIPLANE_VERSION.to_le_bytes())?;
    w.write_all(&(tri.res() as u32).to_le_bytes())?;
    w.write_all(&(tri.channels() as u32).to_le_bytes())?;
    let (d, c) = (tri.res(), tri.channels());
    let mut buf = Vec::with_capacity(tri.data().len() * 4);
    for plane in PlaneId::ALL {
        for ch in 0..c {
            for v in 0..d {
                for u in 0..d {
                    let x = tri.texel(plane, u, v)[ch] as f32;
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], field: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Checkpoint {
        field,
        msg: format!("truncated ({e})"),
    })
}

pub(crate) fn read_u16<R: Read>(r: &mut R, field: &'static str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, field)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R, field: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, field)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize, field: &'static str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    read_exact(r, &mut buf, field)?;
    let vals: Vec<f64> = buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint {
            field,
            msg: "non-finite value".into(),
        });
    }
    Ok(vals)
}

pub fn read_triplane<R: Read>(r: &mut R) -> Result<Triplane> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != TRIPLANE_MAGIC {
        return Err(Error::Checkpoint {
            field: "magic",
            msg: format!("expected TRPL, found {:?}", String::from_utf8_lossy(&magic)),
        });
    }
    let version = read_u16(r, "version")?;
    if version != TRIPLANE_VERSION {
        return Err(Error::Checkpoint {
            field: "version",
            msg: format!("unsupported version {version}"),
        });
    }
    let d = read_u32(r, "resolution")? as usize;
    let c = read_u32(r, "channels")? as usize;
    if d == 0 || d > 4096 {
        return Err(Error::Checkpoint {
            field: "resolution",
            msg: format!("invalid resolution {d}"),
        });
    }
    if c == 0 || c > 4096 {
        return Err(Error::Checkpoint {
            field: "channels",
            msg: format!("invalid channel count {c}"),
        });
    }
    let vals = read_f32s(r, 3 * d * d * c, "data")?;
    let mut tri = Triplane::zeros(d, c)?;
    let mut it = vals.into_iter();
    for plane in PlaneId::ALL {
        for ch in 0..c {
            for v in 0..d {
                for u in 0..d {
                    tri.texel_mut(plane, u, v)[ch] = it.next().unwrap_or_default();
                }
            }
        }
    }
    Ok(tri)
}
