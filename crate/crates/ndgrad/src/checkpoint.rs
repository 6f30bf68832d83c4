//! `NOCK1` checkpoint format.
//!
//! Layout: magic bytes `NOCK1`, u32 tensor count, then per tensor:
//! u16 name length, UTF-8 name, u8 dtype code (0 = f32, 1 = f64), u8 ndim,
//! u32 dims[ndim], raw little-endian elements. All integers little-endian,
//! no padding anywhere.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"NOCK1";

/// A tensor read back from a checkpoint, keeping its stored precision.
#[derive(Debug, Clone)]
pub struct RawTensor {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    data: RawData,
}

#[derive(Debug, Clone)]
enum RawData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl RawTensor {
    /// Convert to a typed tensor, casting elements if precisions differ.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match &self.data {
            RawData::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            RawData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
        };
        Tensor::new(self.shape.clone(), data)
    }
}

/// Serialize named tensors in the order given.
pub fn save_tensors<T: Scalar, P: AsRef<Path>>(
    path: P,
    entries: &[(&str, &Tensor<T>)],
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        let name_len = u16::try_from(name_bytes.len())
            .map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(T::DTYPE.code());
        let ndim = u8::try_from(tensor.rank())
            .map_err(|_| Error::Checkpoint(format!("rank too high for {name}")))?;
        out.push(ndim);
        for &d in tensor.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::Checkpoint(format!("dim too large in {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read back every tensor of a checkpoint, in file order.
pub fn load_tensors<P: AsRef<Path>>(path: P) -> Result<Vec<RawTensor>> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor { buf: &bytes, at: 0 };
    let magic = cur.take(5)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a NOCK1 file".into()));
    }
    let count = cur.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = Dtype::from_code(cur.u8()?)
            .ok_or_else(|| Error::Checkpoint(format!("unknown dtype code in {name}")))?;
        let ndim = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = match dtype {
            Dtype::F32 => {
                let raw = cur.take(n * 4)?;
                RawData::F32(raw.chunks_exact(4).map(f32::read_le).collect())
            }
            Dtype::F64 => {
                let raw = cur.take(n * 8)?;
                RawData::F64(raw.chunks_exact(8).map(f64::read_le).collect())
            }
        };
        tensors.push(RawTensor {
            name,
            dtype,
            shape,
            data,
        });
    }
    if cur.at != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - cur.at
        )));
    }
    Ok(tensors)
}

/// Load tensors into a name → tensor map at the requested precision.
pub fn load_tensor_map<T: Scalar, P: AsRef<Path>>(
    path: P,
) -> Result<std::collections::HashMap<String, Tensor<T>>> {
    let raw = load_tensors(path)?;
    let mut map = std::collections::HashMap::with_capacity(raw.len());
    for t in raw {
        let tensor = t.to_tensor::<T>()?;
        if map.insert(t.name.clone(), tensor).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor name {}", t.name)));
        }
    }
    Ok(map)
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nock");
        let a = Tensor::<f32>::new(vec![2, 2], vec![1.5, -2.25, 0.0, 3.75]).unwrap();
        let b = Tensor::<f32>::scalar(0.125);
        save_tensors(&path, &[("layer.w", &a), ("layer.b", &b)]).unwrap();

        let loaded = load_tensors(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].name, "layer.w");
        assert_eq!(loaded[0].dtype, Dtype::F32);
        assert_eq!(loaded[1].shape, Vec::<usize>::new());
        assert!(loaded[0].to_tensor::<f32>().unwrap().bit_eq(&a));
        assert!(loaded[1].to_tensor::<f32>().unwrap().bit_eq(&b));
    }

    #[test]
    fn f64_entries_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t64.nock");
        let a = Tensor::<f64>::new(vec![3], vec![std::f64::consts::PI, -1.0, 1e-300]).unwrap();
        save_tensors(&path, &[("x", &a)]).unwrap();
        let m = load_tensor_map::<f64, _>(&path).unwrap();
        assert!(m["x"].bit_eq(&a));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nock");
        fs::write(&path, b"XOCK1\x00\x00\x00\x00").unwrap();
        let err = load_tensors(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.nock");
        let a = Tensor::<f32>::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        save_tensors(&path, &[("x", &a)]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        let err = load_tensors(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn byte_layout_matches_the_format_spec() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("layout.nock");
        let a = Tensor::<f32>::new(vec![2], vec![1.0, 2.0]).unwrap();
        save_tensors(&path, &[("ab", &a)]).unwrap();
        let bytes = fs::read(&path).unwrap();
        // 5 magic + 4 count + 2 name len + 2 name + 1 dtype + 1 ndim + 4 dim + 8 data
        assert_eq!(bytes.len(), 5 + 4 + 2 + 2 + 1 + 1 + 4 + 8);
        assert_eq!(&bytes[0..5], b"NOCK1");
        assert_eq!(bytes[5..9], 1u32.to_le_bytes());
        assert_eq!(bytes[9..11], 2u16.to_le_bytes());
        assert_eq!(&bytes[11..13], b"ab");
        assert_eq!(bytes[13], 0); // f32
        assert_eq!(bytes[14], 1); // ndim
        assert_eq!(bytes[15..19], 2u32.to_le_bytes());
        assert_eq!(bytes[19..23], 1.0f32.to_le_bytes());
    }
}
