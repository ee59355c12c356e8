//! Approximate k-nearest-neighbor graphs and their on-disk form.
//!
//! File layout, little-endian: magic `PKNNG\0\0\0`, version `u32`, `k` `u32`,
//! then one record per vector (`id u64`, `count u32`, `count` pairs of
//! `neighbor u64` and `distance f32`), then a trailer of the record count
//! (`u64`) and a CRC32 of every preceding byte.

use std::io::{Read, Write};

use crate::dataio::VectorSet;
use crate::error::{Error, Result};
use crate::flatindex::{FlatIndex, Hit, SearchParams};

use super::{CoarseIndex, CoarseSearchParams};

const MAGIC: &[u8; 8] = b"PKNNG\0\0\0";
const VERSION: u32 = 1;

/// Anything that returns approximate neighbors of a query, nearest first.
pub trait NeighborSearch: Sync {
    fn neighbors(&self, query: &[f32], k: usize) -> Result<Vec<Hit>>;
}

impl NeighborSearch for (&FlatIndex, SearchParams) {
    fn neighbors(&self, query: &[f32], k: usize) -> Result<Vec<Hit>> {
        let params = SearchParams { k, ..self.1 };
        Ok(self.0.search(query, &params)?.hits)
    }
}

impl NeighborSearch for (&CoarseIndex, CoarseSearchParams) {
    fn neighbors(&self, query: &[f32], k: usize) -> Result<Vec<Hit>> {
        let params = CoarseSearchParams { k, ..self.1 };
        Ok(self.0.search(query, &params)?.hits)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphRow {
    pub id: u64,
    pub neighbors: Vec<Hit>,
}

/// Neighbors of every vector in `vectors`, excluding the vector itself
/// (matched by id). Rows may be shorter than `k` when the search returns
/// fewer candidates.
pub fn knn_graph(search: &dyn NeighborSearch, vectors: &VectorSet, k: usize) -> Result<Vec<GraphRow>> {
    crate::par::map_range(vectors.len(), |i| {
        let id = vectors.ids()[i];
        let mut hits = search.neighbors(vectors.row(i), k + 1)?;
        hits.retain(|h| h.id != id);
        hits.truncate(k);
        Ok(GraphRow { id, neighbors: hits })
    })
    .into_iter()
    .collect()
}

/// Streams graph rows to a writer, then closes with the checksum trailer.
pub struct GraphWriter<W: Write> {
    inner: W,
    crc: crc32fast::Hasher,
    k: u32,
    rows: u64,
}

impl<W: Write> GraphWriter<W> {
    pub fn new(mut inner: W, k: usize) -> Result<Self> {
        let k = u32::try_from(k).map_err(|_| Error::invalid("k does not fit in 32 bits"))?;
        let mut crc = crc32fast::Hasher::new();
        let mut head = Vec::with_capacity(16);
        head.extend_from_slice(MAGIC);
        head.extend_from_slice(&VERSION.to_le_bytes());
        head.extend_from_slice(&k.to_le_bytes());
        crc.update(&head);
        inner.write_all(&head)?;
        Ok(Self { inner, crc, k, rows: 0 })
    }

    pub fn write_rows(&mut self, rows: &[GraphRow]) -> Result<()> {
        let mut buf = Vec::new();
        for row in rows {
            if row.neighbors.len() > self.k as usize {
                return Err(Error::invalid(format!(
                    "row {} has {} neighbors, more than k = {}",
                    row.id,
                    row.neighbors.len(),
                    self.k
                )));
            }
            buf.extend_from_slice(&row.id.to_le_bytes());
            buf.extend_from_slice(&(row.neighbors.len() as u32).to_le_bytes());
            for h in &row.neighbors {
                buf.extend_from_slice(&h.id.to_le_bytes());
                buf.extend_from_slice(&h.score.to_le_bytes());
            }
        }
        self.crc.update(&buf);
        self.inner.write_all(&buf)?;
        self.rows += rows.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        let count = self.rows.to_le_bytes();
        self.crc.update(&count);
        self.inner.write_all(&count)?;
        self.inner.write_all(&self.crc.finalize().to_le_bytes())?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    pub rows: Vec<GraphRow>,
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let s = buf
        .get(*pos..*pos + n)
        .ok_or_else(|| Error::Corrupt(format!("graph file truncated at byte {}", *pos)))?;
    *pos += n;
    Ok(s)
}

fn u32_at(buf: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, pos, 4)?.try_into().unwrap()))
}

fn u64_at(buf: &[u8], pos: &mut usize) -> Result<u64> {
    Ok(u64::from_le_bytes(take(buf, pos, 8)?.try_into().unwrap()))
}

/// Reads and verifies a graph written by [`GraphWriter`].
pub fn read_graph<R: Read>(mut reader: R) -> Result<KnnGraph> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    if buf.len() < MAGIC.len() + 8 + 12 || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::Corrupt("not a neighbor graph file".into()));
    }
    let body = buf.len() - 4;
    let stored = u32::from_le_bytes(buf[body..].try_into().unwrap());
    if crc32fast::hash(&buf[..body]) != stored {
        return Err(Error::Corrupt("neighbor graph checksum mismatch".into()));
    }
    let mut pos = MAGIC.len();
    let version = u32_at(&buf, &mut pos)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let k = u32_at(&buf, &mut pos)? as usize;
    let records_end = body - 8;
    let mut rows = Vec::new();
    while pos < records_end {
        let id = u64_at(&buf, &mut pos)?;
        let count = u32_at(&buf, &mut pos)? as usize;
        if count > k {
            return Err(Error::Corrupt(format!("row {id} lists {count} neighbors, more than k = {k}")));
        }
        let mut neighbors = Vec::with_capacity(count);
        for _ in 0..count {
            let nid = u64_at(&buf, &mut pos)?;
            let score = f32::from_le_bytes(take(&buf, &mut pos, 4)?.try_into().unwrap());
            neighbors.push(Hit { id: nid, score });
        }
        rows.push(GraphRow { id, neighbors });
    }
    if pos != records_end {
        return Err(Error::Corrupt("graph records overrun the trailer".into()));
    }
    let count = u64_at(&buf, &mut pos)?;
    if count != rows.len() as u64 {
        return Err(Error::Corrupt(format!(
            "trailer announces {count} rows, file holds {}",
            rows.len()
        )));
    }
    Ok(KnnGraph { k, rows })
}

/// Neighbor ids as ivecs rows, padded with -1 up to `k`.
pub fn write_graph_ivecs<W: Write>(w: W, graph: &KnnGraph) -> Result<()> {
    let rows: Vec<Vec<i32>> = graph
        .rows
        .iter()
        .map(|r| {
            let mut ids: Vec<i32> = r
                .neighbors
                .iter()
                .map(|h| i32::try_from(h.id).map_err(|_| Error::invalid(format!("id {} does not fit ivecs", h.id))))
                .collect::<Result<_>>()?;
            ids.resize(graph.k, -1);
            Ok(ids)
        })
        .collect::<Result<_>>()?;
    crate::dataio::write_ivecs_rows(w, &rows)
}
