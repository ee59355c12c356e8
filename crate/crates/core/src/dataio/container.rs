//! Single-file index container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "POLYIDX\0" | version u32 | kind u32 | section count u32
//! section*: tag [u8; 4] | payload length u64 | payload
//! crc32 of everything above, u32
//! ```
//!
//! Sections: `META` (key=value lines), `PQ  ` (quantizer), `FLAT` (ids and
//! codes), `CRSE` (coarse codebooks), `LIST` (inverted lists and default
//! threshold). Unknown sections are skipped so later minor additions stay
//! readable.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::coarseindex::{CoarseIndex, CoarseQuantizer};
use crate::error::{Error, Result};
use crate::flatindex::FlatIndex;
use crate::pqcore::ProductQuantizer;

const MAGIC: &[u8; 8] = b"POLYIDX\0";
pub const FORMAT_VERSION: u32 = 1;

/// What a container holds.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredIndex {
    Quantizer(ProductQuantizer),
    Flat(FlatIndex),
    Coarse(CoarseIndex),
}

impl StoredIndex {
    fn kind_tag(&self) -> u32 {
        match self {
            Self::Quantizer(_) => 0,
            Self::Flat(_) => 1,
            Self::Coarse(_) => 2,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Quantizer(_) => "quantizer",
            Self::Flat(_) => "flat",
            Self::Coarse(_) => "coarse",
        }
    }

    pub fn pq(&self) -> &ProductQuantizer {
        match self {
            Self::Quantizer(pq) => pq,
            Self::Flat(f) => f.pq(),
            Self::Coarse(c) => c.pq(),
        }
    }
}

/// Free-form hyperparameters and seeds, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IndexMeta {
    entries: Vec<(String, String)>,
}

impl IndexMeta {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    fn encode(&self) -> Result<Vec<u8>> {
        let mut s = String::new();
        for (k, v) in &self.entries {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::invalid(format!("metadata entry '{k}' cannot be stored")));
            }
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        Ok(s.into_bytes())
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let s = std::str::from_utf8(bytes).map_err(|_| Error::Corrupt("metadata is not UTF-8".into()))?;
        let mut meta = Self::new();
        for line in s.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Corrupt(format!("malformed metadata line '{line}'")))?;
            meta.set(k, v);
        }
        Ok(meta)
    }
}

#[derive(Default)]
struct Buf(Vec<u8>);

impl Buf {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn u64s(&mut self, v: &[u64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.u64(*x);
        }
    }
    fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.0.extend_from_slice(v);
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Corrupt(format!("{} section is truncated", self.what)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| Error::Corrupt(format!("{} length overflows", self.what)))?;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(Error::Corrupt(format!("{} section is truncated", self.what)));
        }
        Ok(n)
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.len(4)?;
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn u64s(&mut self) -> Result<Vec<u64>> {
        let n = self.len(8)?;
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.len(1)?;
        Ok(self.take(n)?.to_vec())
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Corrupt(format!("{} value overflows", self.what)))
    }
}

fn corrupt_from(e: Error) -> Error {
    match e {
        Error::Invalid(m) => Error::Corrupt(m),
        Error::DimensionMismatch { expected, actual } => {
            Error::Corrupt(format!("stored shapes disagree: expected {expected}, found {actual}"))
        }
        other => other,
    }
}

fn pq_section(pq: &ProductQuantizer) -> Vec<u8> {
    let mut b = Buf::default();
    b.u64(pq.dim() as u64);
    b.u64(pq.m() as u64);
    b.u32(pq.nbits());
    b.f32s(pq.centroids());
    b.bytes(pq.assignments());
    b.0
}

fn read_pq(buf: &[u8]) -> Result<ProductQuantizer> {
    let mut c = Cursor::new(buf, "quantizer");
    let dim = c.usize()?;
    let m = c.usize()?;
    let nbits = c.u32()?;
    let centroids = c.f32s()?;
    let assign = c.bytes()?;
    ProductQuantizer::from_parts(dim, m, nbits, centroids, Some(assign)).map_err(corrupt_from)
}

fn coarse_section(q: &CoarseQuantizer) -> Vec<u8> {
    let mut b = Buf::default();
    match q {
        CoarseQuantizer::Ivf { dim, k, centroids } => {
            b.u32(0);
            b.u64(*dim as u64);
            b.u64(*k as u64);
            b.f32s(centroids);
        }
        CoarseQuantizer::Imi {
            dim,
            k,
            split,
            first,
            second,
        } => {
            b.u32(1);
            b.u64(*dim as u64);
            b.u64(*k as u64);
            b.u64(*split as u64);
            b.f32s(first);
            b.f32s(second);
        }
    }
    b.0
}

fn read_coarse(buf: &[u8]) -> Result<CoarseQuantizer> {
    let mut c = Cursor::new(buf, "coarse quantizer");
    let kind = c.u32()?;
    let dim = c.usize()?;
    let k = c.usize()?;
    let q = match kind {
        0 => {
            let centroids = c.f32s()?;
            if centroids.len() != dim * k {
                return Err(Error::Corrupt("coarse codebook size mismatch".into()));
            }
            CoarseQuantizer::Ivf { dim, k, centroids }
        }
        1 => {
            let split = c.usize()?;
            let first = c.f32s()?;
            let second = c.f32s()?;
            if split > dim || first.len() != split * k || second.len() != (dim - split) * k {
                return Err(Error::Corrupt("multi-index codebook size mismatch".into()));
            }
            CoarseQuantizer::Imi {
                dim,
                k,
                split,
                first,
                second,
            }
        }
        other => return Err(Error::Corrupt(format!("unknown coarse kind tag {other}"))),
    };
    Ok(q)
}

/// Writes `index` and `meta` to `path`.
pub fn save_index(path: impl AsRef<Path>, index: &StoredIndex, meta: &IndexMeta) -> Result<()> {
    let path = path.as_ref();
    let mut sections: Vec<(&[u8; 4], Vec<u8>)> = vec![(b"META", meta.encode()?), (b"PQ  ", pq_section(index.pq()))];
    match index {
        StoredIndex::Quantizer(_) => {}
        StoredIndex::Flat(f) => {
            let mut b = Buf::default();
            b.u64s(f.ids());
            b.bytes(f.codes());
            sections.push((b"FLAT", b.0));
        }
        StoredIndex::Coarse(ci) => {
            sections.push((b"CRSE", coarse_section(ci.coarse())));
            let mut b = Buf::default();
            b.u32(ci.tau());
            b.u64s(ci.offsets());
            b.u64s(ci.ids());
            b.bytes(ci.codes());
            sections.push((b"LIST", b.0));
        }
    }
    let mut out = Buf::default();
    out.0.extend_from_slice(MAGIC);
    out.u32(FORMAT_VERSION);
    out.u32(index.kind_tag());
    out.u32(sections.len() as u32);
    for (tag, payload) in &sections {
        out.0.extend_from_slice(*tag);
        out.u64(payload.len() as u64);
        out.0.extend_from_slice(payload);
    }
    let crc = crc32fast::hash(&out.0);
    out.u32(crc);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&out.0).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a container written by [`save_index`], verifying version and checksum.
pub fn load_index(path: impl AsRef<Path>) -> Result<(StoredIndex, IndexMeta)> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

fn decode(buf: &[u8]) -> Result<(StoredIndex, IndexMeta)> {
    let header = MAGIC.len() + 12;
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::Corrupt("missing container magic; not an index file".into()));
    }
    if buf.len() < header + 4 {
        return Err(Error::Corrupt("container is truncated".into()));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let body = buf.len() - 4;
    let stored = u32::from_le_bytes(buf[body..].try_into().unwrap());
    if crc32fast::hash(&buf[..body]) != stored {
        return Err(Error::Corrupt("checksum mismatch (file truncated or damaged)".into()));
    }
    let mut c = Cursor::new(&buf[..body], "container header");
    c.take(8)?;
    c.u32()?;
    let kind = c.u32()?;
    let count = c.u32()?;
    let (mut meta, mut pq, mut flat, mut coarse, mut lists) = (None, None, None, None, None);
    for _ in 0..count {
        c.what = "section header";
        let tag: [u8; 4] = c.take(4)?.try_into().unwrap();
        let n = c.usize()?;
        c.what = "section payload";
        let payload = c.take(n)?;
        match &tag {
            b"META" => meta = Some(IndexMeta::decode(payload)?),
            b"PQ  " => pq = Some(read_pq(payload)?),
            b"FLAT" => flat = Some(payload),
            b"CRSE" => coarse = Some(read_coarse(payload)?),
            b"LIST" => lists = Some(payload),
            _ => log::warn!("skipping unknown container section {:?}", String::from_utf8_lossy(&tag)),
        }
    }
    if c.pos != body {
        return Err(Error::Corrupt("trailing bytes after the last section".into()));
    }
    let meta = meta.unwrap_or_default();
    let pq = pq.ok_or_else(|| Error::Corrupt("quantizer section missing".into()))?;
    let index = match kind {
        0 => StoredIndex::Quantizer(pq),
        1 => {
            let mut c = Cursor::new(flat.ok_or_else(|| Error::Corrupt("code section missing".into()))?, "codes");
            let ids = c.u64s()?;
            let codes = c.bytes()?;
            StoredIndex::Flat(FlatIndex::from_parts(pq, codes, ids).map_err(corrupt_from)?)
        }
        2 => {
            let coarse = coarse.ok_or_else(|| Error::Corrupt("coarse section missing".into()))?;
            let mut c = Cursor::new(
                lists.ok_or_else(|| Error::Corrupt("inverted list section missing".into()))?,
                "inverted lists",
            );
            let tau = c.u32()?;
            let offsets = c.u64s()?;
            let ids = c.u64s()?;
            let codes = c.bytes()?;
            StoredIndex::Coarse(CoarseIndex::from_parts(coarse, pq, offsets, ids, codes, tau).map_err(corrupt_from)?)
        }
        other => return Err(Error::Corrupt(format!("unknown index kind tag {other}"))),
    };
    Ok((index, meta))
}
