//! Precomputed subject/object histories for every meta quadruple.
//!
//! Binary layout (`hist.bin`), little-endian:
//! ```text
//! magic "TKGH1\n"
//! u32 record_count, u32 ell, u32 n_max
//! per record, subject window then object window, per snapshot:
//!   u32 pair_count, pair_count × (u32 relation, u32 entity)
//! ```

use std::io::{Read, Write};

use rayon::prelude::*;

use super::DatasetError;
use crate::kg::{EntityId, HistoryWindow, Quadruple, RelationId, TemporalKG};

pub const HIST_MAGIC: &[u8; 6] = b"TKGH1\n";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryCache {
    pub ell: usize,
    pub n_max: usize,
    /// `(subject history, object history)` per few-shot line.
    pub records: Vec<(HistoryWindow, HistoryWindow)>,
}

/// Histories for each quadruple of `meta_quads`, computed on `graph`.
pub fn build_history_cache(graph: &TemporalKG, meta_quads: &[Quadruple], ell: usize, n_max: usize) -> HistoryCache {
    let records = meta_quads
        .par_iter()
        .map(|q| {
            (
                graph.temporal_neighborhood(q.subject, q.time, ell, n_max),
                graph.temporal_neighborhood(q.object, q.time, ell, n_max),
            )
        })
        .collect();
    HistoryCache { ell, n_max, records }
}

fn bad(reason: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        file: "hist.bin".into(),
        reason: reason.into(),
    }
}

impl HistoryCache {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(HIST_MAGIC);
        for v in [self.records.len(), self.ell, self.n_max] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for (s, o) in &self.records {
            for window in [s, o] {
                for snap in &window.snapshots {
                    buf.extend_from_slice(&(snap.len() as u32).to_le_bytes());
                    for (r, e) in snap {
                        buf.extend_from_slice(&r.0.to_le_bytes());
                        buf.extend_from_slice(&e.0.to_le_bytes());
                    }
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a cache; `meta_quads` supplies the query times so each window
    /// carries its anchor time.
    pub fn read_from<R: Read>(mut r: R, meta_quads: &[Quadruple]) -> Result<Self, DatasetError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 18 || &bytes[..6] != HIST_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut pos = 6;
        let mut next = || -> Result<u32, DatasetError> {
            let b = bytes.get(pos..pos + 4).ok_or_else(|| bad("truncated"))?;
            pos += 4;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };
        let count = next()? as usize;
        let ell = next()? as usize;
        let n_max = next()? as usize;
        if count != meta_quads.len() {
            return Err(bad(format!(
                "record count {count} does not match {} few-shot lines",
                meta_quads.len()
            )));
        }
        let mut records = Vec::with_capacity(count);
        for q in meta_quads {
            let mut pair = Vec::with_capacity(2);
            for _ in 0..2 {
                let mut snapshots = Vec::with_capacity(ell);
                for _ in 0..ell {
                    let n = next()? as usize;
                    if n > n_max {
                        return Err(bad(format!("snapshot holds {n} pairs, cap is {n_max}")));
                    }
                    let mut snap = Vec::with_capacity(n);
                    for _ in 0..n {
                        let rel = next()?;
                        let ent = next()?;
                        snap.push((RelationId(rel), EntityId(ent)));
                    }
                    snapshots.push(snap);
                }
                pair.push(HistoryWindow { time: q.time, snapshots });
            }
            let o = pair.pop().unwrap();
            let s = pair.pop().unwrap();
            records.push((s, o));
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(HistoryCache { ell, n_max, records })
    }
}
