//! Named-tensor container.
//!
//! Layout (little-endian): magic `TNSR`, version `u32 = 1`, entry count
//! `u32`, then per entry: name length `u16`, UTF-8 name, dtype `u8`
//! (0 = f64, 1 = f32, 2 = u8, 3 = u32), ndim `u32`, dims `u32[ndim]`, raw data.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    fn code(&self) -> u8 {
        match self {
            TensorData::F64(_) => 0,
            TensorData::F32(_) => 1,
            TensorData::U8(_) => 2,
            TensorData::U32(_) => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        let n: usize = dims.iter().map(|&d| d as usize).product();
        if n != data.len() {
            return Err(Error::Format(format!("tensor dims {dims:?} hold {n} values but {} were given", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn f64(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::new(dims.iter().map(|&d| d as u32).collect(), TensorData::F64(data))
    }

    pub fn u8(dims: &[usize], data: Vec<u8>) -> Result<Self> {
        Self::new(dims.iter().map(|&d| d as u32).collect(), TensorData::U8(data))
    }

    pub fn u32(dims: &[usize], data: Vec<u32>) -> Result<Self> {
        Self::new(dims.iter().map(|&d| d as u32).collect(), TensorData::U32(data))
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }
}

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TnsrFile {
    entries: Vec<(String, Tensor)>,
}

impl TnsrFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::Format("tensor name too long".into()));
        }
        if self.get(&name).is_some() {
            return Err(Error::Format(format!("duplicate tensor name {name}")));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    /// f64 payload and dims of a tensor.
    pub fn f64(&self, name: &str) -> Result<(&[f64], Vec<usize>)> {
        let t = self.require(name)?;
        match &t.data {
            TensorData::F64(v) => Ok((v, t.dims_usize())),
            _ => Err(Error::Format(format!("tensor {name} is not f64"))),
        }
    }

    pub fn u8(&self, name: &str) -> Result<(&[u8], Vec<usize>)> {
        let t = self.require(name)?;
        match &t.data {
            TensorData::U8(v) => Ok((v, t.dims_usize())),
            _ => Err(Error::Format(format!("tensor {name} is not u8"))),
        }
    }

    pub fn u32(&self, name: &str) -> Result<(&[u32], Vec<usize>)> {
        let t = self.require(name)?;
        match &t.data {
            TensorData::U32(v) => Ok((v, t.dims_usize())),
            _ => Err(Error::Format(format!("tensor {name} is not u32"))),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[t.data.code()])?;
            w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
            for d in &t.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            let mut buf = Vec::new();
            match &t.data {
                TensorData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
                TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
                TensorData::U8(v) => buf.extend_from_slice(v),
                TensorData::U32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a TNSR file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported TNSR version {version}")));
        }
        let count = read_u32(r)?;
        let mut file = TnsrFile::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let mut code = [0u8; 1];
            r.read_exact(&mut code)?;
            let ndim = read_u32(r)? as usize;
            if ndim > 32 {
                return Err(Error::Format(format!("tensor {name} declares {ndim} dims")));
            }
            let dims = (0..ndim).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
            let width = match code[0] {
                0 => 8,
                1 | 3 => 4,
                2 => 1,
                c => return Err(Error::Format(format!("unknown dtype {c}"))),
            };
            let bytes_len = n.checked_mul(width).ok_or_else(|| Error::Format("tensor size overflows".into()))?;
            let mut bytes = Vec::new();
            r.take(bytes_len as u64).read_to_end(&mut bytes)?;
            if bytes.len() != bytes_len {
                return Err(Error::Format(format!("tensor {name} payload is truncated")));
            }
            let data = match code[0] {
                0 => TensorData::F64(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                1 => TensorData::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                2 => TensorData::U8(bytes),
                _ => TensorData::U32(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()),
            };
            file.insert(name, Tensor { dims, data })?;
        }
        Ok(file)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let f = Self::read_from(&mut bytes)?;
        if !bytes.is_empty() {
            return Err(Error::Format("trailing bytes after TNSR entries".into()));
        }
        Ok(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TnsrFile {
        let mut f = TnsrFile::new();
        f.insert("w", Tensor::f64(&[2, 3], vec![1.0, -2.5, 3.0, 0.0, f64::MIN_POSITIVE, 7.0]).unwrap()).unwrap();
        f.insert("m", Tensor::u8(&[4], vec![0, 1, 255, 7]).unwrap()).unwrap();
        f.insert("i", Tensor::u32(&[1, 2], vec![9, u32::MAX]).unwrap()).unwrap();
        f.insert("h", Tensor::new(vec![2], TensorData::F32(vec![0.5, -1.0])).unwrap()).unwrap();
        f.insert("s", Tensor::f64(&[], vec![42.0]).unwrap()).unwrap();
        f
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"TNSR");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        let g = TnsrFile::from_bytes(&bytes).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.f64("w").unwrap().1, vec![2, 3]);
    }

    #[test]
    fn header_layout_of_one_entry() {
        let mut f = TnsrFile::new();
        f.insert("ab", Tensor::u8(&[3], vec![1, 2, 3]).unwrap()).unwrap();
        let b = f.to_bytes();
        let want: Vec<u8> = [
            &b"TNSR"[..],
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &2u16.to_le_bytes(),
            b"ab",
            &[2u8],
            &1u32.to_le_bytes(),
            &3u32.to_le_bytes(),
            &[1, 2, 3],
        ]
        .concat();
        assert_eq!(b, want);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Tensor::f64(&[2, 2], vec![1.0]).is_err());
        let mut f = sample();
        assert!(f.insert("w", Tensor::u8(&[1], vec![1]).unwrap()).is_err());
        let bytes = sample().to_bytes();
        assert!(TnsrFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(TnsrFile::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(TnsrFile::from_bytes(&extra).is_err());
    }
}
