//! `DTEN` binary tensor files.
//!
//! Layout, little-endian: `b"DTEN"`, `u32` version (1), `u32` rank,
//! `rank x u64` dims, `u8` dtype (0 = f32, 1 = f64), row-major payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{check_shape, Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DTEN";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

/// A tensor read without knowing its element type in advance.
#[derive(Clone, Debug, PartialEq)]
pub enum DynTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl DynTensor {
    pub fn into_real<T: Real>(self) -> Tensor<T> {
        match self {
            DynTensor::F32(t) => t.cast(),
            DynTensor::F64(t) => t.cast(),
        }
    }
}

pub fn write_dten<T: Real, W: Write>(t: &Tensor<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&[T::DTYPE as u8])?;
    let mut buf = Vec::with_capacity(t.len() * 8);
    for &v in t.data() {
        match T::DTYPE {
            Dtype::F32 => buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            Dtype::F64 => buf.extend_from_slice(&v.as_f64().to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("DTEN truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_dten_any<R: Read>(mut r: R) -> Result<DynTensor> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad DTEN magic {magic:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported DTEN version {version}")));
    }
    let rank = read_u32(&mut r, "rank")? as usize;
    if rank == 0 || rank > 16 {
        return Err(Error::Format(format!("implausible DTEN rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        read_exact(&mut r, &mut b, "dims")?;
        shape.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("dimension overflow".into()))?);
    }
    let n = check_shape(&shape).map_err(|e| Error::Format(e.to_string()))?;
    let mut dt = [0u8; 1];
    read_exact(&mut r, &mut dt, "dtype")?;
    let width = match dt[0] {
        0 => 4,
        1 => 8,
        d => return Err(Error::Format(format!("unknown DTEN dtype {d}"))),
    };
    let bytes = n.checked_mul(width).ok_or_else(|| Error::Format("payload size overflow".into()))?;
    let mut payload = Vec::new();
    r.take(bytes as u64).read_to_end(&mut payload)?;
    if payload.len() != bytes {
        return Err(Error::Format(format!("DTEN truncated: payload has {} of {bytes} bytes", payload.len())));
    }
    Ok(if width == 4 {
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        DynTensor::F32(Tensor::from_vec(&shape, data)?)
    } else {
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        DynTensor::F64(Tensor::from_vec(&shape, data)?)
    })
}

/// Reads a DTEN stream, converting to `T` if the stored dtype differs.
pub fn read_dten<T: Real, R: Read>(r: R) -> Result<Tensor<T>> {
    Ok(read_dten_any(r)?.into_real())
}

impl<T: Real> Tensor<T> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_dten(self, BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_dten(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::from_f64(&[2, 1], &[1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_dten(&t, &mut buf).unwrap();
        let mut want = b"DTEN".to_vec();
        want.extend(1u32.to_le_bytes());
        want.extend(2u32.to_le_bytes());
        want.extend(2u64.to_le_bytes());
        want.extend(1u64.to_le_bytes());
        want.push(0);
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let t = Tensor::<f64>::uniform(&[3, 4, 5], -1.0, 1.0, 11).unwrap();
        let mut buf = Vec::new();
        write_dten(&t, &mut buf).unwrap();
        let back: Tensor<f64> = read_dten(buf.as_slice()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn truncation_and_garbage_are_format_errors() {
        let t = Tensor::<f64>::uniform(&[8], 0.0, 1.0, 1).unwrap();
        let mut buf = Vec::new();
        write_dten(&t, &mut buf).unwrap();
        for cut in [0, 3, 10, 20, buf.len() - 1] {
            assert!(matches!(read_dten::<f64, _>(&buf[..cut]), Err(Error::Format(_))), "cut at {cut}");
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_dten::<f64, _>(bad.as_slice()), Err(Error::Format(_))));
    }
}
