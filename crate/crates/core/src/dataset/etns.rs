//! `ETNS` named-tensor container.
//!
//! Layout (little-endian): magic `ETNS`, version u32 = 1, entry count u32;
//! per entry: name length u16, UTF-8 name, dtype u8 (1 = f32, 2 = f64),
//! ndim u8, dims u32 each, then the row-major payload.

use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"ETNS";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EtnsError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("entry name is not UTF-8")]
    BadName,
    #[error("{0} bytes after the last entry")]
    TrailingBytes(usize),
    #[error("tensor {name}: {values} values for dims {dims:?}")]
    ShapeMismatch { name: String, dims: Vec<usize>, values: usize },
    #[error("tensor {0}: non-finite value")]
    NonFinite(String),
    #[error("tensor {0}: {1}")]
    Unrepresentable(String, &'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
        }
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn f32(name: impl Into<String>, dims: Vec<usize>, values: Vec<f32>) -> Self {
        Self { name: name.into(), dims, data: TensorData::F32(values) }
    }

    pub fn f64(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Self {
        Self { name: name.into(), dims, data: TensorData::F64(values) }
    }
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>, EtnsError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len())
        .map_err(|_| EtnsError::Unrepresentable("<file>".into(), "too many entries"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        let bad = |what| EtnsError::Unrepresentable(t.name.clone(), what);
        let expected: usize = t.dims.iter().product();
        if expected != t.data.len() {
            return Err(EtnsError::ShapeMismatch {
                name: t.name.clone(),
                dims: t.dims.clone(),
                values: t.data.len(),
            });
        }
        let name_len = u16::try_from(t.name.len()).map_err(|_| bad("name longer than 65535 bytes"))?;
        let ndim = u8::try_from(t.dims.len()).map_err(|_| bad("more than 255 dims"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.data.code());
        out.push(ndim);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| bad("dimension exceeds u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EtnsError::NonFinite(t.name.clone()));
                }
                out.reserve(v.len() * 4);
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
            TensorData::F64(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EtnsError::NonFinite(t.name.clone()));
                }
                out.reserve(v.len() * 8);
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], EtnsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            EtnsError::Truncated(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, EtnsError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, EtnsError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, EtnsError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<NamedTensor>, EtnsError> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(EtnsError::BadMagic(magic.try_into().unwrap()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(EtnsError::UnsupportedVersion(version));
    }
    let count = cur.u32("entry count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| EtnsError::BadName)?
            .to_string();
        let code = cur.u8("dtype")?;
        if code != 1 && code != 2 {
            return Err(EtnsError::BadDtype(code));
        }
        let ndim = cur.u8("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u32("dims")? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| EtnsError::Truncated(format!("{name}: payload size overflows")))?;
        let data = if code == 1 {
            let bytes = cur.take(n.saturating_mul(4), &format!("{name} payload"))?;
            TensorData::F32(
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            )
        } else {
            let bytes = cur.take(n.saturating_mul(8), &format!("{name} payload"))?;
            TensorData::F64(
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            )
        };
        out.push(NamedTensor { name, dims, data });
    }
    if cur.pos != buf.len() {
        return Err(EtnsError::TrailingBytes(buf.len() - cur.pos));
    }
    Ok(out)
}

pub fn write_tensors(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<(), EtnsError> {
    std::fs::write(path, encode(tensors)?)?;
    Ok(())
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>, EtnsError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let bytes = encode(&[NamedTensor::f32("ab", vec![2], vec![1.0, -2.0])]).unwrap();
        let mut expect = b"ETNS".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u16.to_le_bytes());
        expect.extend_from_slice(b"ab");
        expect.extend_from_slice(&[1, 1]);
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn empty_file() {
        let bytes = encode(&[]).unwrap();
        assert_eq!(bytes.len(), 12);
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn distinct_error_kinds() {
        let good = encode(&[NamedTensor::f64("x", vec![3], vec![1.0, 2.0, 3.0])]).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(EtnsError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode(&bad), Err(EtnsError::UnsupportedVersion(2))));
        for cut in 0..good.len() {
            assert!(matches!(decode(&good[..cut]), Err(EtnsError::Truncated(_))), "cut {cut}");
        }
        let mut bad = good.clone();
        bad[12 + 2 + 1] = 7;
        assert!(matches!(decode(&bad), Err(EtnsError::BadDtype(7))));
        let mut bad = good;
        bad.push(0);
        assert!(matches!(decode(&bad), Err(EtnsError::TrailingBytes(1))));
    }

    #[test]
    fn write_rejects_bad_tensors() {
        assert!(matches!(
            encode(&[NamedTensor::f32("x", vec![2, 2], vec![0.0; 3])]),
            Err(EtnsError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            encode(&[NamedTensor::f64("x", vec![1], vec![f64::NAN])]),
            Err(EtnsError::NonFinite(_))
        ));
    }
}
