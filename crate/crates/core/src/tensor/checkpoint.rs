//! Parameter checkpoint files.
//!
//! Layout (all integers little-endian):
//!   magic "MVTR" | version u16 | tensor count u32 | entries...
//! Each entry:
//!   name length u32 | UTF-8 name | rank u32 | dims u32 each |
//!   raw little-endian IEEE-754 f32 values (product of dims).
//! Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MVTR";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn checkpoint_bytes(tensors: &[CheckpointTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::domain("too many tensors for checkpoint"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        let expect: usize = t.shape.iter().product();
        if t.data.len() != expect {
            return Err(Error::domain(format!(
                "checkpoint tensor '{}': {} values vs shape {:?}",
                t.name,
                t.data.len(),
                t.shape
            )));
        }
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, tensors: &[CheckpointTensor]) -> Result<()> {
    let bytes = checkpoint_bytes(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::format(format!(
                "checkpoint truncated at byte offset {}: expected {n} more bytes for {what}",
                self.offset
            )));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointTensor>> {
    let mut r = Reader { bytes, offset: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "bad checkpoint magic {magic:?} at byte offset 0, expected \"MVTR\""
        )));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version} at byte offset 4"
        )));
    }
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name_offset = r.offset;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| {
                Error::format(format!(
                    "tensor {i} name at byte offset {name_offset} is not UTF-8"
                ))
            })?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4, "tensor values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(CheckpointTensor { name, shape, data });
    }
    if r.offset != bytes.len() {
        return Err(Error::format(format!(
            "trailing garbage at byte offset {} in checkpoint",
            r.offset
        )));
    }
    Ok(tensors)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointTensor>> {
    let bytes =
        fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<CheckpointTensor> {
        vec![
            CheckpointTensor {
                name: "encoder.conv1".into(),
                shape: vec![2, 1, 3, 3],
                data: (0..18).map(|v| v as f32 * 0.25 - 1.0).collect(),
            },
            CheckpointTensor {
                name: "head.bias".into(),
                shape: vec![4],
                data: vec![0.0, -1.5, f32::MIN_POSITIVE, 3.25],
            },
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let tensors = sample();
        let bytes = checkpoint_bytes(&tensors).unwrap();
        let back = parse_checkpoint(&bytes).unwrap();
        assert_eq!(tensors, back);
        let again = checkpoint_bytes(&back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = checkpoint_bytes(&sample()).unwrap();
        bytes[0] = b'X';
        let err = parse_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncation_names_offset() {
        let bytes = checkpoint_bytes(&sample()).unwrap();
        let err = parse_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("offset"), "{err}");
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = checkpoint_bytes(&sample()).unwrap();
        bytes[4] = 9;
        assert!(parse_checkpoint(&bytes).is_err());
    }
}
