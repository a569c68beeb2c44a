//! `BLVT` container: magic, u32 version, u32 entry count, then per entry a
//! u16 name length, ASCII name, u8 rank, u64 dims, and little-endian f64
//! payload. All integers little-endian.

use std::collections::HashSet;
use std::path::Path;

use super::{DataError, Result};
use crate::tensor::Array;

pub const BLVT_MAGIC: &[u8; 4] = b"BLVT";
pub const BLVT_VERSION: u32 = 1;

pub fn encode_tensors(entries: &[(String, Array)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let count =
        u32::try_from(entries.len()).map_err(|_| DataError::Format("too many entries".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(BLVT_MAGIC);
    out.extend_from_slice(&BLVT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (name, arr) in entries {
        if !name.is_ascii() {
            return Err(DataError::Format(format!("name {name:?} is not ASCII")));
        }
        if !seen.insert(name.as_str()) {
            return Err(DataError::Format(format!("duplicate name {name:?}")));
        }
        let len = u16::try_from(name.len())
            .map_err(|_| DataError::Format(format!("name {name:?} too long")))?;
        let rank =
            u8::try_from(arr.ndim()).map_err(|_| DataError::Format("rank above 255".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in arr.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in arr.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| DataError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode_tensors(buf: &[u8]) -> Result<Vec<(String, Array)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)
        .map_err(|_| DataError::Format("missing magic".into()))?
        != BLVT_MAGIC
    {
        return Err(DataError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != BLVT_VERSION {
        return Err(DataError::Version {
            found: version,
            expected: BLVT_VERSION,
        });
    }
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .ok()
            .filter(|s| s.is_ascii())
            .ok_or_else(|| DataError::Format("entry name is not ASCII".into()))?
            .to_string();
        let rank = r.array::<1>()?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(r.array()?);
            shape.push(
                usize::try_from(d).map_err(|_| DataError::Format("dimension overflow".into()))?,
            );
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| DataError::Format("element count overflow".into()))?;
        let bytes = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| DataError::Format("payload overflow".into()))?,
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        out.push((name, Array::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(DataError::Format(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, entries: &[(String, Array)]) -> Result<()> {
    std::fs::write(path, encode_tensors(entries)?)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Array)>> {
    decode_tensors(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let b = encode_tensors(&[("ab".into(), Array::from_vec(vec![1.5]))]).unwrap();
        assert_eq!(&b[..4], b"BLVT");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..14], &2u16.to_le_bytes());
        assert_eq!(&b[14..16], b"ab");
        assert_eq!(b[16], 1);
        assert_eq!(&b[17..25], &1u64.to_le_bytes());
        assert_eq!(&b[25..33], &1.5f64.to_le_bytes());
        assert_eq!(b.len(), 33);
    }

    #[test]
    fn errors() {
        let good = encode_tensors(&[("w".into(), Array::zeros(&[2, 2]))]).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensors(&bad), Err(DataError::Format(_))));
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(
            decode_tensors(&v2),
            Err(DataError::Version { found: 2, .. })
        ));
        assert!(matches!(
            decode_tensors(&good[..good.len() - 1]),
            Err(DataError::Format(_))
        ));
        let dup = vec![
            ("a".to_string(), Array::scalar(1.0)),
            ("a".to_string(), Array::scalar(2.0)),
        ];
        assert!(encode_tensors(&dup).is_err());
        assert!(encode_tensors(&[("é".into(), Array::scalar(1.0))]).is_err());
    }
}
