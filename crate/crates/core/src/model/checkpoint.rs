//! Self-describing checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "FGRNCKPT"
//! version    u32      1
//! config_len u32      length of the TOML-encoded ModelConfig that follows
//! config     bytes
//! count      u32      number of tensors
//! per tensor:
//!   name_len u16, name bytes (UTF-8)
//!   dtype    u8       4 = f32, 8 = f64
//!   ndim     u8, dims u64 x ndim
//!   payload  IEEE-754 little-endian values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{FgrNetParams, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 8] = b"FGRNCKPT";
const VERSION: u32 = 1;

pub fn write_checkpoint<T: Real, W: Write>(params: &FgrNetParams<T>, mut w: W) -> std::io::Result<()> {
    let config = toml::to_string(params.config()).expect("config serialises");
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(config.as_bytes())?;
    w.write_all(&(params.tensors().len() as u32).to_le_bytes())?;
    for (spec, t) in params.specs().iter().zip(params.tensors()) {
        w.write_all(&(spec.name.len() as u16).to_le_bytes())?;
        w.write_all(spec.name.as_bytes())?;
        w.write_all(&[T::TAG, t.ndim() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * T::TAG as usize);
        for &v in t.data() {
            if T::TAG == 4 {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::format("checkpoint", format!("truncated: {e}")))?;
    Ok(b)
}

fn read_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)
        .map_err(|e| Error::format("checkpoint", format!("truncated: {e}")))?;
    Ok(b)
}

/// Reads a checkpoint, converting the stored precision to `T`.
pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<FgrNetParams<T>> {
    if &read_exact::<_, 8>(&mut r)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let text = String::from_utf8(read_vec(&mut r, len)?)
        .map_err(|_| Error::format("checkpoint", "config is not UTF-8"))?;
    let config: ModelConfig =
        toml::from_str(&text).map_err(|e| Error::format("checkpoint", format!("config: {e}")))?;
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let name = String::from_utf8(read_vec(&mut r, nlen)?)
            .map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?;
        let [dtype, ndim] = read_exact::<_, 2>(&mut r)?;
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_exact(&mut r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let data: Vec<T> = match dtype {
            4 => read_vec(&mut r, n * 4)?
                .chunks_exact(4)
                .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            8 => read_vec(&mut r, n * 8)?
                .chunks_exact(8)
                .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            other => return Err(Error::format("checkpoint", format!("{name}: unknown dtype {other}"))),
        };
        tensors.push(Tensor::new(&shape, data)?);
        names.push(name);
    }
    let params = FgrNetParams::from_tensors(&config, tensors)?;
    for (spec, name) in params.specs().iter().zip(&names) {
        if &spec.name != name {
            return Err(Error::format(
                "checkpoint",
                format!("expected tensor `{}`, found `{name}`", spec.name),
            ));
        }
    }
    Ok(params)
}

pub fn save_checkpoint<T: Real>(params: &FgrNetParams<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<FgrNetParams<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
