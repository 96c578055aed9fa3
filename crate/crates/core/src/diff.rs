//! Snapshot diffs: claims removed, added or changed between two releases.
//!
//! Claims are keyed by (provider, technology, location). A claim counts as
//! modified only when a service field changes (download, upload or the
//! latency flag); brand, cell, state and category edits are not service
//! changes and produce no delta.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geo::CellId;
use crate::ingest::{open_output, AvailabilityClaim, ClaimKey, IngestError, JsonLines, MapSnapshot, Technology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeltaKind {
    Added,
    Removed,
    Modified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimDelta {
    pub kind: DeltaKind,
    pub provider_id: u64,
    pub technology: Technology,
    pub location_id: u64,
    pub cell: CellId,
    pub before: Option<AvailabilityClaim>,
    pub after: Option<AvailabilityClaim>,
}

impl ClaimDelta {
    pub fn key(&self) -> ClaimKey {
        (self.provider_id, self.technology, self.location_id)
    }
}

/// Download, upload and latency flag.
pub fn service_changed(a: &AvailabilityClaim, b: &AvailabilityClaim) -> bool {
    a.max_down_mbps != b.max_down_mbps || a.max_up_mbps != b.max_up_mbps || a.low_latency != b.low_latency
}

fn by_key(s: &MapSnapshot) -> BTreeMap<ClaimKey, &AvailabilityClaim> {
    s.claims.iter().map(|c| (c.key(), c)).collect()
}

/// Deltas ordered by key.
pub fn diff_snapshots(old: &MapSnapshot, new: &MapSnapshot) -> Vec<ClaimDelta> {
    let (a, b) = (by_key(old), by_key(new));
    let keys: BTreeSet<&ClaimKey> = a.keys().chain(b.keys()).collect();
    let mut out = Vec::new();
    for key in keys {
        let (before, after) = (a.get(key).copied(), b.get(key).copied());
        let (kind, cell) = match (before, after) {
            (Some(x), None) => (DeltaKind::Removed, x.cell),
            (None, Some(y)) => (DeltaKind::Added, y.cell),
            (Some(x), Some(y)) if service_changed(x, y) => (DeltaKind::Modified, y.cell),
            _ => continue,
        };
        out.push(ClaimDelta {
            kind,
            provider_id: key.0,
            technology: key.1,
            location_id: key.2,
            cell,
            before: before.cloned(),
            after: after.cloned(),
        });
    }
    out
}

/// Applies deltas to `old`; claims come back ordered by key. Equals the new
/// snapshot up to non-service fields of unmodified claims.
pub fn apply_deltas(old: &MapSnapshot, deltas: &[ClaimDelta]) -> Vec<AvailabilityClaim> {
    let mut claims: BTreeMap<ClaimKey, AvailabilityClaim> = old.claims.iter().map(|c| (c.key(), c.clone())).collect();
    for d in deltas {
        match (&d.kind, &d.after) {
            (DeltaKind::Removed, _) => {
                claims.remove(&d.key());
            }
            (DeltaKind::Added | DeltaKind::Modified, Some(after)) => {
                claims.insert(d.key(), after.clone());
            }
            (_, None) => {}
        }
    }
    claims.into_values().collect()
}

/// A withdrawn claim at the observation grain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RemovalEvidence {
    pub provider_id: u64,
    pub cell: CellId,
    pub technology: Technology,
}

/// Removed claims only, one row per (provider, cell, technology).
pub fn removals_as_labels(deltas: &[ClaimDelta]) -> Vec<RemovalEvidence> {
    deltas
        .iter()
        .filter(|d| d.kind == DeltaKind::Removed)
        .map(|d| RemovalEvidence { provider_id: d.provider_id, cell: d.cell, technology: d.technology })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn write_deltas(path: &Path, deltas: &[ClaimDelta]) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    let mut out = open_output(path)?;
    for d in deltas {
        serde_json::to_writer(&mut out, d).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.finish().map_err(io_err)
}

pub fn read_deltas(path: &Path) -> Result<Vec<ClaimDelta>, IngestError> {
    JsonLines::open(path)?.map(|r| r.map(|(_, d)| d)).collect()
}
