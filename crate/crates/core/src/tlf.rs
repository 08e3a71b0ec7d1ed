//! The TLF container: a flat list of named float32 records with a CRC32
//! footer.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TLF1"
//! repeated: tag u8 | name_len u32 | name (UTF-8) | ndims u32 | dims u32 * ndims | payload f32 * prod(dims)
//! crc32 u32 over every preceding byte
//! ```
//!
//! Fields and masks are stored range-major with dims `[n_range, n_depth]`.
//! Byte blobs such as JSON metadata are stored as tensors holding one byte
//! value per element.

use std::fs;
use std::path::Path;

use crate::acoustics::TLField;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::scenario::MaskGrid;

pub const MAGIC: &[u8; 4] = b"TLF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum RecordKind {
    Field = 1,
    Mask = 2,
    Tensor = 3,
}

impl RecordKind {
    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(RecordKind::Field),
            2 => Some(RecordKind::Mask),
            3 => Some(RecordKind::Tensor),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub kind: RecordKind,
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Record {
    pub fn new(kind: RecordKind, name: impl Into<String>, dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let n: u64 = dims.iter().map(|&d| d as u64).product();
        if n != data.len() as u64 {
            let dims: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
            return Err(Error::shape("record payload", &[data.len()], &dims));
        }
        Ok(Record {
            kind,
            name: name.into(),
            dims,
            data,
        })
    }

    pub fn field(name: impl Into<String>, field: &TLField) -> Self {
        let [r, d] = field.grid.shape();
        Record {
            kind: RecordKind::Field,
            name: name.into(),
            dims: vec![r as u32, d as u32],
            data: field.values.clone(),
        }
    }

    pub fn mask(name: impl Into<String>, mask: &MaskGrid) -> Self {
        let [r, d] = mask.grid.shape();
        Record {
            kind: RecordKind::Mask,
            name: name.into(),
            dims: vec![r as u32, d as u32],
            data: mask.values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn bytes(name: impl Into<String>, bytes: &[u8]) -> Self {
        Record {
            kind: RecordKind::Tensor,
            name: name.into(),
            dims: vec![bytes.len() as u32],
            data: bytes.iter().map(|&b| b as f32).collect(),
        }
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    /// Inverse of [`Record::bytes`].
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.data
            .iter()
            .map(|&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(Error::Domain(format!("record {} does not hold bytes", self.name)))
                }
            })
            .collect()
    }

    pub fn to_field(&self, grid: GridSpec, clip_db: f64) -> Result<TLField> {
        self.check_grid(&grid)?;
        TLField::new(grid, self.data.clone(), clip_db)
    }

    pub fn to_mask(&self, grid: GridSpec) -> Result<MaskGrid> {
        self.check_grid(&grid)?;
        let values = self
            .data
            .iter()
            .map(|&v| match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                _ => Err(Error::Domain(format!("mask record {} holds {v}", self.name))),
            })
            .collect::<Result<Vec<u8>>>()?;
        MaskGrid::new(grid, values)
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.dims_usize() != grid.shape() {
            return Err(Error::shape(format!("record {}", self.name), &self.dims_usize(), &grid.shape()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub records: Vec<Record>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: Record) {
        self.records.push(record);
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Like [`Container::get`] but a missing record is a format error.
    pub fn require(&self, name: &str, path: &Path) -> Result<&Record> {
        self.get(name).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: format!("missing record {name}"),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload: usize = self.records.iter().map(|r| 9 + r.name.len() + 4 * (r.dims.len() + r.data.len())).sum();
        let mut out = Vec::with_capacity(8 + payload);
        out.extend_from_slice(MAGIC);
        for r in &self.records {
            out.push(r.kind as u8);
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
            for d in &r.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// `path` is only used in error messages.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing TLF1 magic".into()));
        }
        let (body, footer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(footer.try_into().expect("4-byte footer"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Crc {
                path: path.to_path_buf(),
                stored,
                computed,
            });
        }
        let mut cur = Cursor { buf: body, pos: 4 };
        let mut records = Vec::new();
        while cur.pos < body.len() {
            let tag = cur.take(1).ok_or_else(|| bad("truncated record tag".into()))?[0];
            let kind = RecordKind::from_tag(tag).ok_or_else(|| bad(format!("unknown record tag {tag}")))?;
            let name_len = cur.u32().ok_or_else(|| bad("truncated name length".into()))? as usize;
            let name = cur.take(name_len).ok_or_else(|| bad("truncated name".into()))?;
            let name = String::from_utf8(name.to_vec()).map_err(|_| bad("record name is not UTF-8".into()))?;
            let ndims = cur.u32().ok_or_else(|| bad(format!("{name}: truncated dims count")))? as usize;
            let dims = (0..ndims)
                .map(|_| cur.u32())
                .collect::<Option<Vec<u32>>>()
                .ok_or_else(|| bad(format!("{name}: truncated dims")))?;
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            let raw = n
                .and_then(|n| n.checked_mul(4))
                .and_then(|len| cur.take(len))
                .ok_or_else(|| bad(format!("{name}: payload shorter than dims {dims:?}")))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4"))).collect();
            records.push(Record { kind, name, dims, data });
        }
        Ok(Container { records })
    }

    /// Writes through a temporary file so readers never see a partial file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tlf.partial");
        fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.push(Record::new(RecordKind::Tensor, "w", vec![2, 3], vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, 7.0]).unwrap());
        c.push(Record::bytes("meta.json", br#"{"a":1}"#));
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.encode();
        assert_eq!(&bytes[..4], b"TLF1");
        let back = Container::decode(&bytes, Path::new("x.tlf")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.get("meta.json").unwrap().to_bytes().unwrap(), br#"{"a":1}"#);
    }

    #[test]
    fn corruption_is_a_crc_error() {
        let mut bytes = sample().encode();
        bytes[12] ^= 0x40;
        let err = Container::decode(&bytes, Path::new("broken.tlf")).unwrap_err();
        assert!(matches!(err, Error::Crc { .. }));
        assert!(err.to_string().contains("broken.tlf"));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(Record::new(RecordKind::Tensor, "x", vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Container::decode(b"TLF", Path::new("t")).is_err());
    }
}
