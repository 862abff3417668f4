//! Little-endian binary container shared by ADC cubes, radar tensors, head
//! outputs, network parameters, and point clouds.
//!
//! Layout:
//!
//! ```text
//! magic      4 bytes  b"RPCT"
//! version    u32
//! kind       u32      see [`Kind`]
//! dtype      u32      0 = f32, 1 = complex f32 (re, im interleaved)
//! ndims      u32
//! dims       u64 * ndims
//! meta_len   u32
//! meta       meta_len bytes of UTF-8 JSON
//! payload    f32 * (product(dims) * (2 if complex else 1)), row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RPCT";
pub const CONTAINER_VERSION: u32 = 1;
const MAX_ELEMENTS: u64 = 1 << 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    AdcCube = 1,
    RadarTensor = 2,
    Parameters = 3,
    PointCloud = 4,
    HeadOutput = 5,
}

impl Kind {
    fn from_u32(v: u32) -> Result<Kind> {
        Ok(match v {
            1 => Kind::AdcCube,
            2 => Kind::RadarTensor,
            3 => Kind::Parameters,
            4 => Kind::PointCloud,
            5 => Kind::HeadOutput,
            _ => return Err(Error::format(format!("unknown container kind {v}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    ComplexF32 = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: Kind,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub meta: Value,
    pub data: Vec<f32>,
}

impl Container {
    pub fn new(kind: Kind, dtype: DType, dims: Vec<usize>, meta: Value, data: Vec<f32>) -> Self {
        Container {
            kind,
            dtype,
            dims,
            meta,
            data,
        }
    }

    fn expected_len(dtype: DType, dims: &[usize]) -> u64 {
        let n: u64 = dims.iter().map(|&d| d as u64).product();
        match dtype {
            DType::F32 => n,
            DType::ComplexF32 => 2 * n,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        if Self::expected_len(self.dtype, &self.dims) != self.data.len() as u64 {
            return Err(Error::dimension("container payload does not match dims"));
        }
        w.write_all(&MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        w.write_all(&(self.kind as u32).to_le_bytes())?;
        w.write_all(&(self.dtype as u32).to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::format(e.to_string()))?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Container> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::format("bad container magic"));
        }
        let version = read_u32(&mut r)?;
        if version != CONTAINER_VERSION {
            return Err(Error::format(format!("unsupported container version {version}")));
        }
        let kind = Kind::from_u32(read_u32(&mut r)?)?;
        let dtype = match read_u32(&mut r)? {
            0 => DType::F32,
            1 => DType::ComplexF32,
            d => return Err(Error::format(format!("unknown dtype {d}"))),
        };
        let ndims = read_u32(&mut r)? as usize;
        if ndims > 16 {
            return Err(Error::format("too many dims"));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            dims.push(u64::from_le_bytes(b));
        }
        let total = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| Error::format("container dims overflow"))?;
        let dims: Vec<usize> = dims.into_iter().map(|d| d as usize).collect();
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta: Value = if meta.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&meta).map_err(|e| Error::format(e.to_string()))?
        };
        let n = match dtype {
            DType::F32 => total,
            DType::ComplexF32 => 2 * total,
        } as usize;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Container {
            kind,
            dtype,
            dims,
            meta,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Container> {
        let f = std::fs::File::open(path)?;
        Container::read_from(std::io::BufReader::new(f))
    }

    pub fn expect(&self, kind: Kind, dtype: DType, ndims: usize) -> Result<()> {
        if self.kind != kind || self.dtype != dtype || self.dims.len() != ndims {
            return Err(Error::format(format!(
                "expected {kind:?}/{dtype:?} with {ndims} dims, found {:?}/{:?} with {:?}",
                self.kind, self.dtype, self.dims
            )));
        }
        Ok(())
    }

    pub fn meta_f64s(&self, key: &str) -> Result<Vec<f64>> {
        self.meta
            .get(key)
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| Error::format(format!("container metadata missing `{key}`")))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_little_endian() {
        let c = Container::new(
            Kind::AdcCube,
            DType::ComplexF32,
            vec![1, 1, 2],
            Value::Null,
            vec![1.0, -1.0, 0.5, 2.0],
        );
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"RPCT");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &3u32.to_le_bytes());
        assert_eq!(&buf[buf.len() - 16..buf.len() - 12], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let c = Container::new(Kind::RadarTensor, DType::F32, vec![2], Value::Null, vec![1.0, 2.0]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Container::read_from(&bad[..]).is_err());
        assert!(Container::read_from(&buf[..buf.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(data in proptest::collection::vec(-1e6f32..1e6, 1..64)) {
            let meta = serde_json::json!({"origin": [1.0, 2.0, 3.0]});
            let c = Container::new(Kind::RadarTensor, DType::F32, vec![data.len()], meta, data);
            let mut buf = Vec::new();
            c.write_to(&mut buf).unwrap();
            let back = Container::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
