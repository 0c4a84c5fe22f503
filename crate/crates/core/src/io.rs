//! `IVT1` tensor files.
//!
//! Layout (little-endian): the four magic bytes `IVT1`, a `u32` rank, `rank`
//! `u32` extents, then the elements as `f32` in row-major order. Values are
//! rounded to `f32` on write and widened back to `f64` on read.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"IVT1";

/// Serialized size in bytes of a tensor with the given shape.
pub fn encoded_len(shape: &[usize]) -> usize {
    4 + 4 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

pub fn encode(t: &Tensor, out: &mut Vec<u8>) {
    out.reserve(encoded_len(t.shape()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Decode one tensor from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode(bytes: &[u8]) -> std::result::Result<(Tensor, usize), String> {
    let mut cur = bytes;
    let mut word = |what: &str| -> std::result::Result<u32, String> {
        let mut b = [0u8; 4];
        cur.read_exact(&mut b).map_err(|_| format!("truncated {what}"))?;
        Ok(u32::from_le_bytes(b))
    };
    let magic = word("magic")?.to_le_bytes();
    if &magic != MAGIC {
        return Err(format!("bad magic {magic:?}"));
    }
    let rank = word("rank")? as usize;
    if rank > 16 {
        return Err(format!("implausible rank {rank}"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(word("extent")? as usize);
    }
    let n: usize = shape.iter().product();
    let header = 8 + 4 * rank;
    let end = header + 4 * n;
    if bytes.len() < end {
        return Err(format!("payload truncated: need {} bytes, have {}", end, bytes.len()));
    }
    let data = bytes[header..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let t = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
    Ok((t, end))
}

pub fn write_ivt1(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    encode(t, &mut buf);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_ivt1(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, used) = decode(&bytes).map_err(|m| Error::format(path, m))?;
    if used != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(t)
}

/// Round every element to the nearest `f32`, the precision `IVT1` stores.
pub fn quantize_f32(t: &Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}

/// A text header of `key value` lines followed by named `IVT1` records.
///
/// ```text
/// <tag>
/// <key> <value>        (repeated)
/// end
/// <name>\n<IVT1 bytes> (repeated)
/// ```
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub header: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self, tag: &str) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(tag.as_bytes());
        out.push(b'\n');
        for (k, v) in &self.header {
            out.extend_from_slice(format!("{k} {v}\n").as_bytes());
        }
        out.extend_from_slice(b"end\n");
        for (name, t) in &self.tensors {
            out.extend_from_slice(name.as_bytes());
            out.push(b'\n');
            encode(t, &mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], tag: &str) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let next_line = |pos: &mut usize| -> std::result::Result<String, String> {
            let rest = &bytes[*pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or("unterminated line")?;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| "non-UTF-8 header")?;
            *pos += end + 1;
            Ok(line.to_string())
        };
        let first = next_line(&mut pos)?;
        if first != tag {
            return Err(format!("expected tag {tag:?}, found {first:?}"));
        }
        let mut c = Container::default();
        loop {
            let line = next_line(&mut pos)?;
            if line == "end" {
                break;
            }
            let (k, v) = line.split_once(' ').ok_or_else(|| format!("bad header line {line:?}"))?;
            c.header.push((k.to_string(), v.to_string()));
        }
        while pos < bytes.len() {
            let name = next_line(&mut pos)?;
            let (t, used) = decode(&bytes[pos..])?;
            pos += used;
            c.tensors.push((name, t));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path, tag: &str) -> Result<()> {
        fs::write(path, self.to_bytes(tag)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, tag: &str) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, tag).map_err(|m| Error::format(path, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(&[2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        encode(&t, &mut buf);
        let expected: Vec<u8> = [
            b"IVT1".to_vec(),
            2u32.to_le_bytes().to_vec(),
            2u32.to_le_bytes().to_vec(),
            1u32.to_le_bytes().to_vec(),
            1.0f32.to_le_bytes().to_vec(),
            (-2.5f32).to_le_bytes().to_vec(),
        ]
        .concat();
        assert_eq!(buf, expected);
        assert_eq!(buf.len(), encoded_len(&[2, 1]));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"IVT2\0\0\0\0").is_err());
        let mut buf = Vec::new();
        encode(&Tensor::zeros(&[3]), &mut buf);
        assert!(decode(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn container_roundtrip() {
        let c = Container {
            header: vec![("blocks".into(), "4".into()), ("c".into(), "0.7".into())],
            tensors: vec![
                ("a".into(), Tensor::new(&[2], vec![1.0, 2.0]).unwrap()),
                ("b".into(), Tensor::zeros(&[1, 2, 2, 1])),
            ],
        };
        let back = Container::from_bytes(&c.to_bytes("TAG 1"), "TAG 1").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.get("c"), Some("0.7"));
        assert!(Container::from_bytes(&c.to_bytes("TAG 1"), "TAG 2").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_f32_values(
            dims in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64 - 500.0) / 7.0)
                .collect();
            let t = quantize_f32(&Tensor::new(&dims, data).unwrap());
            let mut buf = Vec::new();
            encode(&t, &mut buf);
            let (back, used) = decode(&buf).unwrap();
            prop_assert_eq!(used, buf.len());
            prop_assert_eq!(back, t);
        }
    }
}
