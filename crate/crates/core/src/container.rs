//! Single-file dataset container.
//!
//! Layout (little-endian): magic `C2FD`, u16 version, u32 record count,
//! u16 class count, then per record: u16 id length, UTF-8 id, u8 domain tag,
//! u16 height, u16 width, `3*H*W` f32 planar image, `H*W` u8 labels
//! (255 = IGNORE), `H*W` u8 provenance (0 manual, 1 pseudo, 2 ignore).

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use crate::dataset::{DomainTag, Record, SceneDataset};
use crate::error::{Error, Result};
use crate::label::{LabelMask, Provenance, IGNORE};
use crate::tensorops::Tensor;

pub const MAGIC: &[u8; 4] = b"C2FD";
pub const VERSION: u16 = 1;

fn provenance_of(label: &LabelMask) -> Vec<Provenance> {
    match label.provenance() {
        Some(p) => p.to_vec(),
        None => {
            label.labels().iter().map(|&l| if l == IGNORE { Provenance::Ignore } else { Provenance::Manual }).collect()
        }
    }
}

/// Encode a dataset. Images are stored as f32; labels without provenance
/// are written as manual (or ignore for IGNORE pixels).
pub fn to_bytes(data: &SceneDataset) -> Result<Vec<u8>> {
    let narrow = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit the container format")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(data.len()).map_err(|_| Error::invalid("too many records"))?;
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&narrow(data.num_classes, "class count")?.to_le_bytes());
    for r in &data.records {
        let (c, h, w) = r.image.dims3()?;
        if c != 3 || r.label.height() != h || r.label.width() != w {
            return Err(Error::shape(format!("record {} must have a [3, H, W] image matching its label", r.id)));
        }
        out.extend_from_slice(&narrow(r.id.len(), "id length")?.to_le_bytes());
        out.extend_from_slice(r.id.as_bytes());
        out.push(r.tag as u8);
        out.extend_from_slice(&narrow(h, "height")?.to_le_bytes());
        out.extend_from_slice(&narrow(w, "width")?.to_le_bytes());
        for &v in r.image.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(r.label.labels());
        out.extend(provenance_of(&r.label).into_iter().map(|p| p as u8));
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(data: &SceneDataset, mut out: W) -> Result<()> {
    out.write_all(&to_bytes(data)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// A record as laid out on disk, with byte offsets of its sections.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub offset: u64,
    pub id: String,
    pub tag: u8,
    pub height: usize,
    pub width: usize,
    pub image: Vec<f32>,
    pub image_offset: u64,
    pub labels: Vec<u8>,
    pub labels_offset: u64,
    pub provenance: Vec<u8>,
    pub provenance_offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawContainer {
    pub version: u16,
    pub num_classes: usize,
    pub records: Vec<RawRecord>,
}

/// Structural parse: header, record framing, UTF-8 ids. Value-level checks
/// are left to [`verify`] and [`from_bytes`].
pub fn parse_raw(bytes: &[u8]) -> Result<RawContainer> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected C2FD".into() });
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::Format { offset: 4, message: format!("unsupported version {version}") });
    }
    let count = cur.u32("record count")?;
    let num_classes = usize::from(cur.u16("class count")?);
    let mut records = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let offset = cur.pos as u64;
        let id_len = usize::from(cur.u16("id length")?);
        let id_at = cur.pos;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|_| Error::Format { offset: id_at as u64, message: "id is not valid UTF-8".into() })?
            .to_string();
        let tag = cur.u8("domain tag")?;
        let height = usize::from(cur.u16("height")?);
        let width = usize::from(cur.u16("width")?);
        let n = height * width;
        let image_offset = cur.pos as u64;
        let image = cur
            .take(n * 12, "image payload")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let labels_offset = cur.pos as u64;
        let labels = cur.take(n, "label payload")?.to_vec();
        let provenance_offset = cur.pos as u64;
        let provenance = cur.take(n, "provenance payload")?.to_vec();
        records.push(RawRecord {
            offset,
            id,
            tag,
            height,
            width,
            image,
            image_offset,
            labels,
            labels_offset,
            provenance,
            provenance_offset,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            offset: cur.pos as u64,
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok(RawContainer { version, num_classes, records })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub record: Option<String>,
    pub offset: u64,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.record {
            Some(id) => write!(f, "record {id} at byte {}: {}", self.offset, self.message),
            None => write!(f, "at byte {}: {}", self.offset, self.message),
        }
    }
}

fn check_record(r: &RawRecord, num_classes: usize, out: &mut Vec<Violation>) {
    let mut flag = |offset: u64, message: String| {
        out.push(Violation { record: Some(r.id.clone()), offset, message });
    };
    let tag = DomainTag::from_u8(r.tag);
    if tag.is_none() {
        flag(r.offset + 2 + r.id.len() as u64, format!("unknown domain tag {}", r.tag));
    }
    if r.height == 0 || r.width == 0 {
        flag(r.offset, format!("empty raster {}x{}", r.height, r.width));
    }
    if let Some(i) = r.image.iter().position(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
        flag(r.image_offset + 4 * i as u64, format!("image value {} outside [0, 1]", r.image[i]));
    }
    if let Some(i) = r.labels.iter().position(|&l| l != IGNORE && usize::from(l) >= num_classes) {
        flag(r.labels_offset + i as u64, format!("label {} outside {num_classes} classes", r.labels[i]));
    }
    for (i, (&p, &l)) in r.provenance.iter().zip(&r.labels).enumerate() {
        let at = r.provenance_offset + i as u64;
        match Provenance::from_u8(p) {
            None => flag(at, format!("unknown provenance code {p}")),
            Some(Provenance::Ignore) if l != IGNORE => flag(at, format!("pixel {i} is labeled {l} but flagged ignore")),
            Some(Provenance::Manual | Provenance::Pseudo) if l == IGNORE => {
                flag(at, format!("pixel {i} is IGNORE but flagged {}", if p == 0 { "manual" } else { "pseudo" }))
            }
            Some(Provenance::Pseudo) if tag != Some(DomainTag::RealCoarse) => {
                flag(at, format!("pixel {i} has a pseudo label outside coarse data"))
            }
            _ => continue,
        }
        // One consistency report per record is enough.
        break;
    }
}

/// Every violation of the container invariants, in file order.
pub fn verify(bytes: &[u8]) -> Vec<Violation> {
    let raw = match parse_raw(bytes) {
        Ok(raw) => raw,
        Err(Error::Format { offset, message }) => return vec![Violation { record: None, offset, message }],
        Err(e) => return vec![Violation { record: None, offset: 0, message: e.to_string() }],
    };
    let mut out = Vec::new();
    if raw.num_classes == 0 || raw.num_classes > usize::from(IGNORE) {
        out.push(Violation {
            record: None,
            offset: 10,
            message: format!("class count {} out of range", raw.num_classes),
        });
    }
    let mut seen = HashSet::new();
    for r in &raw.records {
        if !seen.insert(r.id.as_str()) {
            out.push(Violation { record: Some(r.id.clone()), offset: r.offset, message: "duplicate id".into() });
        }
        check_record(r, raw.num_classes, &mut out);
    }
    out
}

/// Decode a container, rejecting the first invariant violation.
pub fn from_bytes(bytes: &[u8]) -> Result<SceneDataset> {
    if let Some(v) = verify(bytes).into_iter().next() {
        return Err(Error::Format { offset: v.offset, message: v.to_string() });
    }
    let raw = parse_raw(bytes)?;
    let mut data = SceneDataset::new(raw.num_classes);
    for r in raw.records {
        let image = Tensor::new(vec![3, r.height, r.width], r.image.iter().map(|&v| f64::from(v)).collect())?;
        let prov = r.provenance.iter().map(|&p| Provenance::from_u8(p).expect("verified")).collect();
        let label = LabelMask::new(r.height, r.width, r.labels)?.with_provenance(prov)?;
        let tag = DomainTag::from_u8(r.tag).expect("verified");
        data.push(Record { id: r.id, tag, image, label })?;
    }
    Ok(data)
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<SceneDataset> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
