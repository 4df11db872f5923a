//! Binary checkpoints of parameters, buffers and optimizer state.
//!
//! Layout (little endian): magic `TNTK`, format version `u32`, entry count
//! `u32`, then per entry a `u16` name length, the UTF-8 name, a dtype byte
//! (0 = f32, 1 = f64), a rank byte, `u32` dimensions and the raw elements.
//! The step counter is a one-element f64 entry named `step`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::tensor::{DType, Scalar};

const MAGIC: &[u8; 4] = b"TNTK";
const VERSION: u32 = 1;
const STEP: &str = "step";

enum Data<'a, T> {
    Float(&'a [T]),
    Count(u64),
}

fn push_entry<T: Scalar>(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: Data<'_, T>) {
    buf.extend((name.len() as u16).to_le_bytes());
    buf.extend(name.as_bytes());
    match data {
        Data::Float(values) => {
            buf.push(T::DTYPE as u8);
            buf.push(shape.len() as u8);
            for &d in shape {
                buf.extend((d as u32).to_le_bytes());
            }
            for &v in values {
                match T::DTYPE {
                    DType::F32 => buf.extend((v.as_f64() as f32).to_le_bytes()),
                    DType::F64 => buf.extend(v.as_f64().to_le_bytes()),
                }
            }
        }
        Data::Count(n) => {
            buf.push(DType::F64 as u8);
            buf.push(1);
            buf.extend(1u32.to_le_bytes());
            buf.extend((n as f64).to_le_bytes());
        }
    }
}

/// Serializes the state to bytes.
pub fn to_bytes<T: Scalar>(store: &ParamStore<T>, adam: &Adam<T>) -> Vec<u8> {
    let mut body = Vec::new();
    let mut count = 0u32;
    for (i, (_, p)) in store.iter().enumerate() {
        let shape = p.tensor.shape();
        push_entry(&mut body, &format!("param/{}", p.name), shape, Data::Float(p.tensor.data()));
        count += 1;
        if p.trainable {
            push_entry(&mut body, &format!("adam_m/{}", p.name), shape, Data::Float(&adam.m[i]));
            push_entry(&mut body, &format!("adam_v/{}", p.name), shape, Data::Float(&adam.v[i]));
            count += 2;
        }
    }
    push_entry::<T>(&mut body, STEP, &[1], Data::Count(adam.step));
    count += 1;
    let mut buf = Vec::with_capacity(body.len() + 12);
    buf.extend(MAGIC);
    buf.extend(VERSION.to_le_bytes());
    buf.extend(count.to_le_bytes());
    buf.extend(body);
    buf
}

/// Writes atomically through a temporary sibling file.
pub fn save<T: Scalar>(path: &Path, store: &ParamStore<T>, adam: &Adam<T>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_bytes(store, adam))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

struct Loaded(Vec<usize>, Vec<f64>);

fn parse(bytes: &[u8]) -> Result<Vec<(String, Loaded)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u32()?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let dtype = r.u8()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let entry = match dtype {
            0 => Loaded(
                shape,
                r.take(numel * 4)?
                    .chunks(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            ),
            1 => Loaded(
                shape,
                r.take(numel * 8)?
                    .chunks(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            other => return Err(Error::Checkpoint(format!("unknown dtype {other} for {name}"))),
        };
        out.push((name, entry));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

/// Restores parameters, buffers and optimizer state into a freshly built
/// model of the same architecture.
pub fn load_into<T: Scalar>(path: &Path, store: &mut ParamStore<T>, adam: &mut Adam<T>) -> Result<()> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes, store, adam)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8], store: &mut ParamStore<T>, adam: &mut Adam<T>) -> Result<()> {
    let mut entries: std::collections::HashMap<String, Loaded> = parse(bytes)?.into_iter().collect();
    let mut take = |name: String, shape: &[usize]| -> Result<Vec<T>> {
        match entries.remove(&name) {
            Some(Loaded(s, data)) if s == shape => Ok(data.into_iter().map(T::from_f64).collect()),
            Some(Loaded(s, _)) => Err(Error::Checkpoint(format!(
                "{name}: stored shape {s:?}, model expects {shape:?}"
            ))),
            None => Err(Error::Checkpoint(format!("missing entry {name}"))),
        }
    };
    let mut loaded = Vec::with_capacity(store.len());
    for (i, (_, p)) in store.iter().enumerate() {
        let shape = p.tensor.shape().to_vec();
        let data = take(format!("param/{}", p.name), &shape)?;
        let moments = if p.trainable {
            Some((
                take(format!("adam_m/{}", p.name), &shape)?,
                take(format!("adam_v/{}", p.name), &shape)?,
            ))
        } else {
            None
        };
        loaded.push((i, data, moments));
    }
    let step = match entries.remove(STEP) {
        Some(Loaded(s, v)) if s == [1] && v[0] >= 0.0 && v[0].fract() == 0.0 => v[0] as u64,
        _ => return Err(Error::Checkpoint("missing or malformed step counter".into())),
    };
    if let Some(extra) = entries.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected entry {extra}")));
    }
    for ((i, data, moments), (_, p)) in loaded.into_iter().zip(store.iter_mut()) {
        p.tensor.data_mut().copy_from_slice(&data);
        if let Some((m, v)) = moments {
            adam.m[i] = m;
            adam.v[i] = v;
        }
    }
    adam.step = step;
    Ok(())
}
