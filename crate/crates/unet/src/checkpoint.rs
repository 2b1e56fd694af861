//! Binary weights: `UNW1`, width, tensor count, then per tensor its name,
//! element size (4 or 8), rank, dims and little-endian data.

use std::path::Path;

use hifreq_core::Tensor;

use crate::gemm::Real;
use crate::model::UNet;
use crate::UnetError;

const MAGIC: &[u8; 4] = b"UNW1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn write_checkpoint<T: Real>(model: &UNet<T>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, model.width);
    let params = model.params();
    put_u32(&mut out, params.len());
    let size = std::mem::size_of::<T>();
    for (name, t) in model.param_names().into_iter().zip(params) {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        out.push(size as u8);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for &v in t.data() {
            if size == 4 {
                out.extend_from_slice(&v.to_f32().expect("finite").to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_f64().expect("finite").to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], UnetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| UnetError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, UnetError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, UnetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses a checkpoint into a model of the stored width, converting precision if needed.
pub fn read_checkpoint<T: Real>(bytes: &[u8]) -> Result<UNet<T>, UnetError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(UnetError::Checkpoint("bad magic".into()));
    }
    let width = c.u32()?;
    if width == 0 || width > 4096 {
        return Err(UnetError::Checkpoint(format!("implausible width {width}")));
    }
    let mut model = UNet::<T>::zeros(width);
    let names = model.param_names();
    let count = c.u32()?;
    if count != names.len() {
        return Err(UnetError::ArchMismatch(format!(
            "{count} tensors stored, model has {}",
            names.len()
        )));
    }
    for (name, dst) in names.iter().zip(model.params_mut()) {
        let len = c.u32()?;
        let stored = String::from_utf8_lossy(c.take(len)?).into_owned();
        if &stored != name {
            return Err(UnetError::ArchMismatch(format!("expected {name}, found {stored}")));
        }
        let size = c.u8()? as usize;
        let rank = c.u8()? as usize;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
        if shape != dst.shape() {
            return Err(UnetError::ArchMismatch(format!(
                "{name}: stored {shape:?}, model {:?}",
                dst.shape()
            )));
        }
        let raw = c.take(dst.len() * size)?;
        let data: Vec<T> = match size {
            4 => raw
                .chunks_exact(4)
                .map(|b| T::from(f32::from_le_bytes(b.try_into().expect("4"))).expect("finite"))
                .collect(),
            8 => raw
                .chunks_exact(8)
                .map(|b| T::from(f64::from_le_bytes(b.try_into().expect("8"))).expect("finite"))
                .collect(),
            n => return Err(UnetError::Checkpoint(format!("element size {n}"))),
        };
        *dst = Tensor::from_vec(&shape, data)?;
    }
    if c.pos != bytes.len() {
        return Err(UnetError::Checkpoint("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &UNet<T>) -> Result<(), UnetError> {
    std::fs::write(path, write_checkpoint(model)).map_err(|source| UnetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<UNet<T>, UnetError> {
    let bytes = std::fs::read(path).map_err(|source| UnetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&bytes)
}
