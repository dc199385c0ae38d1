//! EMB1 embedding interchange files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "EMB1"  u32 dim  u32 count
//! count x ( u32 id_len  id_len bytes of UTF-8 id  dim x f32 )
//! ```

use std::path::Path;

use crate::error::{Error, Result};

use super::Embedding;

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";

pub fn encode_emb1(records: &[Embedding]) -> Result<Vec<u8>> {
    let dim = records.first().map_or(0, Embedding::dim);
    if let Some(bad) = records.iter().find(|r| r.dim() != dim) {
        return Err(Error::usage(format!(
            "'{}' has dimension {} but the file uses {dim}",
            bad.id(),
            bad.dim()
        )));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::usage(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(12 + records.len() * (8 + dim * 4));
    out.extend_from_slice(EMB1_MAGIC);
    out.extend_from_slice(&to_u32(dim, "dimension")?.to_le_bytes());
    out.extend_from_slice(&to_u32(records.len(), "record count")?.to_le_bytes());
    for r in records {
        out.extend_from_slice(&to_u32(r.id().len(), "id length")?.to_le_bytes());
        out.extend_from_slice(r.id().as_bytes());
        for &v in r.vector() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_emb1(path: impl AsRef<Path>, records: &[Embedding]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_emb1(records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                Error::format(
                    self.bytes.len() as u64,
                    format!("truncated file while reading {what}"),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Strict parser. With `expected_dim` set, a file of any other dimension is rejected.
pub fn decode_emb1(bytes: &[u8], expected_dim: Option<usize>) -> Result<Vec<Embedding>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != EMB1_MAGIC {
        return Err(Error::format(0, "missing EMB1 magic"));
    }
    let dim = cur.u32("dimension")? as usize;
    if dim == 0 {
        return Err(Error::format(4, "dimension must be positive"));
    }
    if let Some(expected) = expected_dim {
        if expected != dim {
            return Err(Error::format(4, format!("dimension {dim}, expected {expected}")));
        }
    }
    let count = cur.u32("record count")? as usize;
    let mut out = Vec::with_capacity(count.min(bytes.len() / (4 + dim * 4)));
    for _ in 0..count {
        let start = cur.pos as u64;
        let id_len = cur.u32("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|_| Error::format(start + 4, "id is not UTF-8"))?
            .to_string();
        let vector = cur
            .take(dim * 4, "vector")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let embedding = Embedding::new(id, vector).map_err(|e| Error::format(start, e.to_string()))?;
        out.push(embedding);
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            cur.pos as u64,
            format!("{} trailing bytes after {count} records", bytes.len() - cur.pos),
        ));
    }
    Ok(out)
}

pub fn read_emb1(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Vec<Embedding>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_emb1(&bytes, expected_dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(id: &str, v: &[f64]) -> Embedding {
        Embedding::new(id, v.to_vec()).unwrap()
    }

    #[test]
    fn byte_layout() {
        let bytes = encode_emb1(&[emb("ab", &[1.0, -2.0])]).unwrap();
        let mut expected = b"EMB1".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_files() {
        let good = encode_emb1(&[emb("a", &[1.0, 0.5]), emb("b", &[0.0, 1.0])]).unwrap();
        assert!(decode_emb1(&good, Some(2)).is_ok());
        assert!(decode_emb1(&good, Some(3)).is_err());
        assert!(decode_emb1(&good[..good.len() - 1], None).is_err());
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(decode_emb1(&trailing, None).is_err());
        let mut magic = good.clone();
        magic[3] = b'2';
        assert!(decode_emb1(&magic, None).is_err());
        let mut huge_count = good;
        huge_count[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_emb1(&huge_count, None).is_err());
    }

    #[test]
    fn rejects_mixed_dimensions_on_write() {
        assert!(encode_emb1(&[emb("a", &[1.0]), emb("b", &[1.0, 2.0])]).is_err());
    }

    #[test]
    fn empty_record_set_is_unreadable() {
        // no records: the header carries dimension 0, which readers refuse
        let bytes = encode_emb1(&[]).unwrap();
        assert_eq!(bytes.len(), 12);
        assert!(decode_emb1(&bytes, None).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_through_f32(
            dim in 1usize..16,
            rows in proptest::collection::vec(("[a-z0-9_@=.-]{1,12}", proptest::collection::vec(0.01f32..1.0, 16)), 1..8),
        ) {
            let records: Vec<Embedding> = rows
                .iter()
                .map(|(id, v)| emb(id, &v[..dim].iter().map(|&x| x as f64).collect::<Vec<_>>()))
                .collect();
            let decoded = decode_emb1(&encode_emb1(&records).unwrap(), Some(dim)).unwrap();
            prop_assert_eq!(decoded, records);
        }
    }
}
