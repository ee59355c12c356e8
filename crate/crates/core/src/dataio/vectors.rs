//! Dense vector collections and the BIGANN `.fvecs` / `.bvecs` / `.ivecs`
//! file formats.
//!
//! Every record is a little-endian `i32` dimension followed by that many
//! payload elements: `f32` for fvecs, `u8` for bvecs and `i32` for ivecs.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest magnitude an ivecs entry may have and still be stored exactly in
/// an `f32` row.
const IVECS_EXACT_LIMIT: i64 = 1 << 24;

/// A row-major set of `dim`-dimensional vectors with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorSet {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<u64>,
}

impl VectorSet {
    /// Builds a set labelled `0..n`.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        let n = Self::check_shape(dim, &data)?;
        Ok(Self {
            dim,
            data,
            ids: (0..n as u64).collect(),
        })
    }

    pub fn with_ids(dim: usize, data: Vec<f32>, ids: Vec<u64>) -> Result<Self> {
        let n = Self::check_shape(dim, &data)?;
        if ids.len() != n {
            return Err(Error::invalid(format!(
                "{} ids supplied for {} vectors",
                ids.len(),
                n
            )));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("vector ids must be unique"));
        }
        Ok(Self { dim, data, ids })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            ids: Vec::new(),
        }
    }

    fn check_shape(dim: usize, data: &[f32]) -> Result<usize> {
        if dim == 0 {
            if !data.is_empty() {
                return Err(Error::invalid("zero-dimensional set with payload"));
            }
            return Ok(0);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "payload of {} values is not a multiple of dimension {}",
                data.len(),
                dim
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value in row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(data.len() / dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact(0) panics; a zero-dim set has no rows anyway.
        self.data.chunks_exact(self.dim.max(1))
    }

    /// The first `n` rows (or all of them).
    pub fn head(&self, n: usize) -> VectorSet {
        let n = n.min(self.len());
        VectorSet {
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
            ids: self.ids[..n].to_vec(),
        }
    }

    /// Rows at the given positions, keeping their ids.
    pub fn select(&self, positions: &[usize]) -> VectorSet {
        let mut data = Vec::with_capacity(positions.len() * self.dim);
        let mut ids = Vec::with_capacity(positions.len());
        for &p in positions {
            data.extend_from_slice(self.row(p));
            ids.push(self.ids[p]);
        }
        VectorSet {
            dim: self.dim,
            data,
            ids,
        }
    }

    pub fn into_parts(self) -> (usize, Vec<f32>, Vec<u64>) {
        (self.dim, self.data, self.ids)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VecFormat {
    Fvecs,
    Bvecs,
    Ivecs,
}

impl VecFormat {
    fn elem_size(self) -> usize {
        match self {
            VecFormat::Bvecs => 1,
            VecFormat::Fvecs | VecFormat::Ivecs => 4,
        }
    }

    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

impl FromStr for VecFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fvecs" => Ok(VecFormat::Fvecs),
            "bvecs" => Ok(VecFormat::Bvecs),
            "ivecs" => Ok(VecFormat::Ivecs),
            other => Err(Error::invalid(format!(
                "unknown vector format '{other}' (expected fvecs, bvecs or ivecs)"
            ))),
        }
    }
}

impl fmt::Display for VecFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VecFormat::Fvecs => "fvecs",
            VecFormat::Bvecs => "bvecs",
            VecFormat::Ivecs => "ivecs",
        })
    }
}

/// Reads up to `limit` vectors from a file.
pub fn read_vectors(path: impl AsRef<Path>, format: VecFormat, limit: Option<usize>) -> Result<VectorSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_vectors_from(BufReader::new(file), format, limit)
}

/// Reads `count` vectors starting at record `start`, using the first
/// record's dimension to seek. Ids are the absolute record numbers.
pub fn read_vectors_range(
    path: impl AsRef<Path>,
    format: VecFormat,
    start: usize,
    count: usize,
) -> Result<VectorSet> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 4];
    match file.read_exact(&mut head) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(VectorSet::empty(0)),
        Err(e) => return Err(Error::io(path, e)),
    }
    let dim = i32::from_le_bytes(head);
    if dim <= 0 {
        return Err(Error::Format {
            offset: 0,
            message: format!("non-positive dimension {dim}"),
        });
    }
    let record = 4 + dim as u64 * format.elem_size() as u64;
    let offset = record * start as u64;
    file.seek(SeekFrom::Start(offset))
        .map_err(|e| Error::io(path, e))?;
    let mut reader = RecordReader::new(BufReader::new(file), format, offset);
    let mut set = reader.read(Some(count))?;
    for id in &mut set.ids {
        *id += start as u64;
    }
    Ok(set)
}

pub fn read_vectors_from<R: Read>(reader: R, format: VecFormat, limit: Option<usize>) -> Result<VectorSet> {
    RecordReader::new(reader, format, 0).read(limit)
}

/// Integer rows of an ivecs file, kept as `i32` (ground-truth files).
pub fn read_ivecs_rows(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Vec<Vec<i32>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut offset = 0u64;
    while limit.is_none_or(|l| rows.len() < l) {
        let Some(dim) = read_dim(&mut reader, offset)? else {
            break;
        };
        let mut buf = vec![0u8; dim * 4];
        read_payload(&mut reader, &mut buf, offset)?;
        rows.push(
            buf.chunks_exact(4)
                .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
        offset += 4 + buf.len() as u64;
    }
    Ok(rows)
}

/// Writes integer rows as ivecs. Rows may have different lengths.
pub fn write_ivecs_rows<W: Write>(mut w: W, rows: &[Vec<i32>]) -> Result<()> {
    for row in rows {
        w.write_all(&(row.len() as i32).to_le_bytes())?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_vectors(path: impl AsRef<Path>, format: VecFormat, set: &VectorSet) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_vectors_to(BufWriter::new(file), format, set)
}

/// Serializes a set. Values must be representable in the target format:
/// integral 0..=255 for bvecs, integral for ivecs.
pub fn write_vectors_to<W: Write>(mut w: W, format: VecFormat, set: &VectorSet) -> Result<()> {
    let dim = set.dim() as i32;
    for (r, row) in set.rows().enumerate() {
        w.write_all(&dim.to_le_bytes())?;
        match format {
            VecFormat::Fvecs => {
                for v in row {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            VecFormat::Bvecs => {
                for v in row {
                    if v.fract() != 0.0 || !(0.0..=255.0).contains(v) {
                        return Err(Error::invalid(format!(
                            "row {r}: value {v} does not fit an unsigned byte"
                        )));
                    }
                    w.write_all(&[*v as u8])?;
                }
            }
            VecFormat::Ivecs => {
                for v in row {
                    if v.fract() != 0.0 || v.abs() > IVECS_EXACT_LIMIT as f32 {
                        return Err(Error::invalid(format!(
                            "row {r}: value {v} is not an exactly representable integer"
                        )));
                    }
                    w.write_all(&(*v as i32).to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_dim<R: Read>(r: &mut R, offset: u64) -> Result<Option<usize>> {
    let mut head = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut head[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    match got {
        0 => Ok(None),
        4 => {
            let dim = i32::from_le_bytes(head);
            if dim <= 0 {
                Err(Error::Format {
                    offset,
                    message: format!("non-positive dimension {dim}"),
                })
            } else {
                Ok(Some(dim as usize))
            }
        }
        _ => Err(Error::Format {
            offset,
            message: format!("truncated record header ({got} of 4 bytes)"),
        }),
    }
}

fn read_payload<R: Read>(r: &mut R, buf: &mut [u8], offset: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Format {
                offset,
                message: format!("truncated record: expected {} payload bytes", buf.len()),
            }
        } else {
            Error::Stream(e)
        }
    })
}

struct RecordReader<R> {
    inner: R,
    format: VecFormat,
    offset: u64,
}

impl<R: Read> RecordReader<R> {
    fn new(inner: R, format: VecFormat, offset: u64) -> Self {
        Self {
            inner,
            format,
            offset,
        }
    }

    fn read(&mut self, limit: Option<usize>) -> Result<VectorSet> {
        let mut dim: Option<usize> = None;
        let mut data = Vec::new();
        let mut buf = Vec::new();
        let mut n = 0usize;
        while limit.is_none_or(|l| n < l) {
            let record_start = self.offset;
            let Some(d) = read_dim(&mut self.inner, record_start)? else {
                break;
            };
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::Format {
                        offset: record_start,
                        message: format!(
                            "inconsistent dimension: first record has {expected}, this record has {d}"
                        ),
                    })
                }
                Some(_) => {}
            }
            buf.resize(d * self.format.elem_size(), 0);
            read_payload(&mut self.inner, &mut buf, record_start)?;
            match self.format {
                VecFormat::Fvecs => {
                    for (j, b) in buf.chunks_exact(4).enumerate() {
                        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                        if !v.is_finite() {
                            return Err(Error::Format {
                                offset: record_start + 4 + 4 * j as u64,
                                message: format!("non-finite value {v}"),
                            });
                        }
                        data.push(v);
                    }
                }
                VecFormat::Bvecs => data.extend(buf.iter().map(|&b| b as f32)),
                VecFormat::Ivecs => {
                    for (j, b) in buf.chunks_exact(4).enumerate() {
                        let v = i32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                        if (v as i64).abs() > IVECS_EXACT_LIMIT {
                            return Err(Error::Format {
                                offset: record_start + 4 + 4 * j as u64,
                                message: format!(
                                    "ivecs value {v} cannot be held exactly as a real; read it with read_ivecs_rows"
                                ),
                            });
                        }
                        data.push(v as f32);
                    }
                }
            }
            self.offset += 4 + buf.len() as u64;
            n += 1;
        }
        VectorSet::new(dim.unwrap_or(0), data)
    }
}
