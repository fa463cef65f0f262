//! Binary tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes   "FFT1"
//! version  u32       1
//! dtype    u8        0 = f32
//! rank     u8
//! dims     rank × u32
//! payload  prod(dims) × f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FFT1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::param(
                "data",
                format!("dims {dims:?} need {expected} values, got {}", data.len()),
            ));
        }
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::param("data", "tensor rank or dimension too large"));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad magic {magic:?}"),
            });
        }
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported version {version}"),
            });
        }
        let dtype = cur.take(1, "dtype")?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::Format {
                offset: 8,
                msg: format!("unsupported dtype tag {dtype}"),
            });
        }
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("dimension")? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format {
                offset: cur.pos as u64,
                msg: "element count overflows".into(),
            })?;
        let payload_len = count.checked_mul(4).ok_or_else(|| Error::Format {
            offset: cur.pos as u64,
            msg: "payload size overflows".into(),
        })?;
        let payload = cur.take(payload_len, "payload")?;
        if cur.pos != bytes.len() {
            return Err(Error::Format {
                offset: cur.pos as u64,
                msg: format!("{} trailing bytes", bytes.len() - cur.pos),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.bytes.len() as u64,
                msg: format!(
                    "truncated {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let b = t.encode();
        assert_eq!(&b[..4], b"FFT1");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(b[8], 0);
        assert_eq!(b[9], 2);
        assert_eq!(&b[10..14], &2u32.to_le_bytes());
        assert_eq!(&b[14..18], &1u32.to_le_bytes());
        assert_eq!(&b[18..22], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 26);
    }

    #[test]
    fn empty_tensor_round_trips() {
        let t = Tensor::new(vec![3, 0, 5], vec![]).unwrap();
        assert_eq!(Tensor::decode(&t.encode()).unwrap(), t);
        let scalar = Tensor::new(vec![], vec![7.0]).unwrap();
        assert_eq!(Tensor::decode(&scalar.encode()).unwrap(), scalar);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let t = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut b = t.encode();
        b.truncate(b.len() - 3);
        match Tensor::decode(&b) {
            Err(Error::Format { offset, msg }) => {
                assert_eq!(offset, b.len() as u64);
                assert!(msg.contains("payload"), "{msg}");
                assert!(msg.contains("offset 14"), "{msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_trailing_bytes_rejected() {
        let t = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut b = t.encode();
        b[0] = b'X';
        assert!(matches!(Tensor::decode(&b), Err(Error::Format { offset: 0, .. })));
        let mut b = t.encode();
        b.push(0);
        assert!(matches!(Tensor::decode(&b), Err(Error::Format { .. })));
        assert!(matches!(Tensor::decode(b"FF"), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in proptest::collection::vec(0usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32 * 97)))
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = Tensor::decode(&t.encode()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
