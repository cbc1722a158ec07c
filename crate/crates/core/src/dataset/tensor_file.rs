//! `NFPD` binary tensor container.
//!
//! Layout: 4-byte magic `NFPD`, `u32` version (1), `u32` rank, `u64` dims,
//! then the row-major payload. All integers and payload elements are
//! little-endian; the payload is `f32` or `u64` depending on the tensor.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"NFPD";
pub const VERSION: u32 = 1;

/// Element types storable in an `NFPD` payload.
pub trait Element: Copy + Default {
    const SIZE: usize;
    const NAME: &'static str;
    fn put(self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const SIZE: usize = 4;
    const NAME: &'static str = "f32";
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte element"))
    }
}

impl Element for u64 {
    const SIZE: usize = 8;
    const NAME: &'static str = "u64";
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        u64::from_le_bytes(bytes.try_into().expect("8-byte element"))
    }
}

/// A decoded tensor and the CRC-32 of its payload.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
    pub crc32: u32,
}

fn header(dims: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * dims.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out
}

/// Serializes one tensor; returns the bytes and the payload CRC-32.
pub fn encode<T: Element>(dims: &[usize], data: &[T]) -> Result<(Vec<u8>, u32)> {
    let count: usize = dims.iter().product();
    if count != data.len() {
        return Err(Error::Contract(format!(
            "tensor dims {dims:?} hold {count} elements, got {}",
            data.len()
        )));
    }
    let mut out = header(dims);
    let start = out.len();
    out.reserve(count * T::SIZE);
    for &v in data {
        v.put(&mut out);
    }
    let crc = crc32fast::hash(&out[start..]);
    Ok((out, crc))
}

/// Parses one tensor from the front of `bytes`; returns it and the number of
/// bytes consumed. `origin` only labels errors.
pub fn decode<T: Element>(bytes: &[u8], origin: &Path) -> Result<(RawTensor<T>, usize)> {
    let corrupt = |reason: String| Error::Corrupt {
        path: origin.to_path_buf(),
        reason,
    };
    let format = |reason: String| Error::Format {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 {
        return Err(corrupt(format!("truncated header ({} bytes)", bytes.len())));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        let mut swapped = MAGIC;
        swapped.reverse();
        return Err(if magic == swapped {
            format("foreign byte order (big-endian magic)".into())
        } else {
            format(format!("bad magic {magic:02x?}"))
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format(format!("version {version}, expected {VERSION}")));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_len = 12 + 8 * rank;
    if bytes.len() < header_len {
        return Err(corrupt(format!("truncated header: rank {rank}")));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let at = 12 + 8 * i;
            u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize
        })
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| corrupt(format!("dims {dims:?} overflow")))?;
    let payload_len = count
        .checked_mul(T::SIZE)
        .ok_or_else(|| corrupt(format!("dims {dims:?} overflow")))?;
    let available = bytes.len() - header_len;
    if available < payload_len {
        return Err(corrupt(format!(
            "truncated payload: dims {dims:?} need {payload_len} bytes of {}, found {available}",
            T::NAME
        )));
    }
    let payload = &bytes[header_len..header_len + payload_len];
    let data = payload.chunks_exact(T::SIZE).map(T::get).collect();
    Ok((
        RawTensor {
            dims,
            data,
            crc32: crc32fast::hash(payload),
        },
        header_len + payload_len,
    ))
}

pub fn write_tensor<T: Element>(path: &Path, dims: &[usize], data: &[T]) -> Result<u32> {
    let (bytes, crc) = encode(dims, data)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(crc)
}

/// Reads a single-tensor file. The whole file must be consumed, and the
/// payload checksum must match `expected_crc` when given.
pub fn read_tensor<T: Element>(path: &Path, expected_crc: Option<u32>) -> Result<RawTensor<T>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let (tensor, used) = decode::<T>(&bytes, path)?;
    if used != bytes.len() {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes after payload", bytes.len() - used),
        });
    }
    if let Some(want) = expected_crc {
        if want != tensor.crc32 {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("checksum mismatch: manifest {want:08x}, payload {:08x}", tensor.crc32),
            });
        }
    }
    Ok(tensor)
}

/// Streams rows into a tensor file whose dims are fixed up front.
pub struct TensorWriter<T: Element> {
    path: PathBuf,
    out: BufWriter<File>,
    dims: Vec<usize>,
    expected: usize,
    written: usize,
    hasher: crc32fast::Hasher,
    scratch: Vec<u8>,
    _elem: PhantomData<T>,
}

impl<T: Element> TensorWriter<T> {
    pub fn create(path: &Path, dims: &[usize]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&header(dims)).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
            dims: dims.to_vec(),
            expected: dims.iter().product(),
            written: 0,
            hasher: crc32fast::Hasher::new(),
            scratch: Vec::new(),
            _elem: PhantomData,
        })
    }

    pub fn append(&mut self, values: &[T]) -> Result<()> {
        if self.written + values.len() > self.expected {
            return Err(Error::Contract(format!(
                "{}: appending {} values overflows dims {:?}",
                self.path.display(),
                values.len(),
                self.dims
            )));
        }
        self.scratch.clear();
        for &v in values {
            v.put(&mut self.scratch);
        }
        self.hasher.update(&self.scratch);
        self.out
            .write_all(&self.scratch)
            .map_err(|e| Error::io(&self.path, e))?;
        self.written += values.len();
        Ok(())
    }

    /// Flushes and returns the payload CRC-32.
    pub fn finish(mut self) -> Result<u32> {
        if self.written != self.expected {
            return Err(Error::Contract(format!(
                "{}: wrote {} of {} values",
                self.path.display(),
                self.written,
                self.expected
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let (bytes, _) = encode::<f32>(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(&bytes[0..4], b"NFPD");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..20], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[20..28], &[3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[28..32], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 28 + 24);
    }

    #[test]
    fn streamed_matches_one_shot() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<u64> = (0..10).map(|i| i * 7 + u64::MAX / 3).collect();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        let crc_a = write_tensor(&a, &[5, 2], &data).unwrap();
        let mut w = TensorWriter::<u64>::create(&b, &[5, 2]).unwrap();
        w.append(&data[..4]).unwrap();
        w.append(&data[4..]).unwrap();
        assert!(w.append(&[1]).is_err());
        let crc_b = w.finish().unwrap();
        assert_eq!(crc_a, crc_b);
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let t = read_tensor::<u64>(&b, Some(crc_a)).unwrap();
        assert_eq!(t.data, data);
        assert_eq!(t.dims, vec![5, 2]);
    }

    #[test]
    fn truncated_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("features.bin");
        write_tensor::<f32>(&p, &[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        let err = read_tensor::<f32>(&p, None).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }));
        assert!(err.to_string().contains("features.bin"), "{err}");
    }

    #[test]
    fn foreign_endian_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("be.bin");
        let mut bytes = b"DPFN".to_vec();
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&1u64.to_be_bytes());
        bytes.extend_from_slice(&1.0f32.to_be_bytes());
        std::fs::write(&p, bytes).unwrap();
        let err = read_tensor::<f32>(&p, None).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("foreign"));
    }

    #[test]
    fn checksum_and_version_guards() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let crc = write_tensor::<f32>(&p, &[2], &[0.5, -0.5]).unwrap();
        assert!(matches!(read_tensor::<f32>(&p, Some(crc ^ 1)), Err(Error::Corrupt { .. })));
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 2;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_tensor::<f32>(&p, None), Err(Error::Format { .. })));
        assert!(encode::<f32>(&[3], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(data in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..64)) {
            let dims = [data.len()];
            let (bytes, crc) = encode(&dims, &data).unwrap();
            let (t, used) = decode::<f32>(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(t.crc32, crc);
            prop_assert_eq!(t.data, data);
        }
    }
}
