//! `PATK` raw field files and 8-bit PGM previews.
//!
//! Raw layout: magic `PATK`, `u32` version, `u32` ndim, `ndim × u32` dims,
//! then `f32` samples in row-major order. All integers and floats are
//! little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"PATK";
pub const RAW_VERSION: u32 = 1;

/// A decoded raw file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawField {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl RawField {
    pub fn from_array(a: &Array2<f64>) -> Self {
        Self {
            dims: vec![a.nrows(), a.ncols()],
            data: a.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        if self.dims.len() != 2 {
            return Err(Error::Format(format!("expected 2 dims, file has {}", self.dims.len())));
        }
        let v = self.data.iter().map(|&x| x as f64).collect();
        Array2::from_shape_vec((self.dims[0], self.dims[1]), v).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(RAW_MAGIC);
        out.extend_from_slice(&RAW_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| Error::Format(format!("truncated header at byte {at}")))
        };
        if bytes.len() < 4 || &bytes[..4] != RAW_MAGIC {
            return Err(Error::Format("bad magic, expected PATK".into()));
        }
        let version = word(4)?;
        if version != RAW_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let ndim = word(8)? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(Error::Format(format!("implausible ndim {ndim}")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for k in 0..ndim {
            dims.push(word(12 + 4 * k)? as usize);
        }
        let start = 12 + 4 * ndim;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("dims overflow".into()))?;
        let payload = &bytes[start..];
        if payload.len() != 4 * count {
            return Err(Error::Format(format!(
                "payload has {} bytes, dims {:?} need {}",
                payload.len(),
                dims,
                4 * count
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { dims, data })
    }
}

pub fn write_raw(path: &Path, a: &Array2<f64>) -> Result<()> {
    fs::write(path, RawField::from_array(a).encode())?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<RawField> {
    RawField::decode(&fs::read(path)?)
}

pub fn read_raw_image(path: &Path) -> Result<Array2<f64>> {
    read_raw(path)?.to_array2()
}

/// 8-bit binary PGM with min–max scaling; rows follow the first array axis.
pub fn encode_pgm(a: &Array2<f64>) -> Vec<u8> {
    let (lo, hi) = a
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n255\n", a.ncols(), a.nrows()).into_bytes();
    out.extend(a.iter().map(|&v| {
        if v.is_finite() {
            (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm(path: &Path, a: &Array2<f64>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(a))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_check() {
        let mut bytes = RAW_MAGIC.to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        let mut ok = bytes.clone();
        ok.extend_from_slice(&[0u8; 24]);
        let f = RawField::decode(&ok).unwrap();
        assert_eq!(f.dims, vec![3, 2]);
        let mut short = bytes;
        short.extend_from_slice(&[0u8; 23]);
        assert!(matches!(RawField::decode(&short), Err(Error::Format(_))));
    }

    #[test]
    fn bad_headers() {
        assert!(RawField::decode(b"PAT").is_err());
        assert!(RawField::decode(b"XATK\x01\0\0\0").is_err());
        let mut v = RAW_MAGIC.to_vec();
        v.extend_from_slice(&2u32.to_le_bytes());
        assert!(RawField::decode(&v).is_err());
    }

    #[test]
    fn pgm_header_and_scaling() {
        let a = Array2::from_shape_vec((2, 3), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let p = encode_pgm(&a);
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&p[..header.len()], header);
        assert_eq!(p[header.len()], 0);
        assert_eq!(*p.last().unwrap(), 255);
        assert_eq!(p.len(), header.len() + 6);
    }
}
