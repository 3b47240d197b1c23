//! Binary tensor files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "PTNS" | version | dtype | ndim | dims[ndim] | payload (row-major, LE)
//! ```
//!
//! dtype 0 is `f64`, 1 is `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PTNS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64 = 0,
    F32 = 1,
}

impl Dtype {
    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F64),
            1 => Ok(Dtype::F32),
            t => Err(TensorError::Format(format!("unknown dtype tag {t}"))),
        }
    }
}

/// Shape plus values, detached from any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorData {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &self.shape).expect("validated at construction")
    }
}

impl From<&Tensor> for TensorData {
    fn from(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        }
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_tensor(w: &mut impl Write, t: &TensorData, dtype: Dtype) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, dtype as u32)?;
    put_u32(w, t.shape.len() as u32)?;
    for &d in &t.shape {
        let d = u32::try_from(d).map_err(|_| TensorError::Format(format!("dimension {d} exceeds u32")))?;
        put_u32(w, d)?;
    }
    match dtype {
        Dtype::F64 => {
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Dtype::F32 => {
            for v in &t.data {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<(TensorData, Dtype)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let dtype = Dtype::from_tag(get_u32(r)?)?;
    let ndim = get_u32(r)? as usize;
    let shape = (0..ndim).map(|_| get_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    match dtype {
        Dtype::F64 => {
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
        }
        Dtype::F32 => {
            let mut b = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f32::from_le_bytes(b) as f64);
            }
        }
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(TensorError::Format("trailing bytes after payload".into()));
    }
    Ok((TensorData { shape, data }, dtype))
}

pub fn save(path: &Path, t: &TensorData, dtype: Dtype) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TensorData> {
    let mut r = BufReader::new(File::open(path)?);
    Ok(read_tensor(&mut r)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = TensorData::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Dtype::F64).unwrap();
        assert_eq!(&buf[..4], b"PTNS");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &0u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 4 + 4 + 4 + 4 + 8 + 16);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_tensor(&mut &b"NOPE0000"[..]).is_err());
        let t = TensorData::new(vec![1], vec![3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Dtype::F32).unwrap();
        buf.push(0);
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }
}
