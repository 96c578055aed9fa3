//! Speed-test evidence on the hex grid.
//!
//! Ookla tiles are duplicated into every cell they overlap and aggregated
//! per cell. MLab tests are attributed to providers through their ASN and
//! localized to the provider's claimed cells within the test's accuracy
//! radius.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::entity_match::{providers_by_asn, ProviderAsnMatch};
use crate::geo::{quadkey_to_tile, tile_bounds, CellId, GeoError, HexGrid};
use crate::ingest::{MlabTest, OoklaTile};

/// Tests with a coarser geolocation are discarded.
pub const MAX_ACCURACY_RADIUS_KM: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTestStats {
    pub cell: CellId,
    pub ookla_tests: u64,
    pub ookla_devices: u64,
    pub max_avg_down_kbps: f64,
    pub max_avg_up_kbps: f64,
    pub min_avg_latency_ms: f64,
}

impl CellTestStats {
    fn from_tile(cell: CellId, t: &OoklaTile) -> Self {
        Self {
            cell,
            ookla_tests: t.tests,
            ookla_devices: t.devices,
            max_avg_down_kbps: t.avg_down_kbps,
            max_avg_up_kbps: t.avg_up_kbps,
            min_avg_latency_ms: t.avg_latency_ms,
        }
    }

    /// Commutative, associative merge.
    pub fn merge(&mut self, other: &CellTestStats) {
        self.ookla_tests += other.ookla_tests;
        self.ookla_devices += other.ookla_devices;
        self.max_avg_down_kbps = self.max_avg_down_kbps.max(other.max_avg_down_kbps);
        self.max_avg_up_kbps = self.max_avg_up_kbps.max(other.max_avg_up_kbps);
        self.min_avg_latency_ms = self.min_avg_latency_ms.min(other.min_avg_latency_ms);
    }
}

/// Aggregates tiles per overlapping cell, ordered by cell. Tiles with no
/// tests and no devices carry no signal and are skipped.
pub fn reproject_ookla(tiles: &[OoklaTile], grid: &dyn HexGrid) -> Result<Vec<CellTestStats>, GeoError> {
    let mut cells: BTreeMap<CellId, CellTestStats> = BTreeMap::new();
    for t in tiles {
        if t.tests == 0 && t.devices == 0 {
            continue;
        }
        let b = tile_bounds(quadkey_to_tile(&t.quadkey)?)?;
        for cell in grid.cells_overlapping_box(b.min, b.max) {
            let s = CellTestStats::from_tile(cell, t);
            cells.entry(cell).and_modify(|acc| acc.merge(&s)).or_insert(s);
        }
    }
    Ok(cells.into_values().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProviderCellEvidence {
    pub provider_id: u64,
    pub cell: CellId,
    pub mlab_test_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Localization {
    /// Ordered by (provider, cell).
    pub evidence: Vec<ProviderCellEvidence>,
    /// Tests whose ASN matched at least one provider.
    pub attributed: u64,
    /// Attributed tests that touched none of their providers' claimed cells.
    pub attributed_without_cells: u64,
    /// Tests whose ASN matched no provider.
    pub unattributed: u64,
    pub radius_filtered: u64,
    /// Unattributed test counts per ASN.
    pub unknown_asns: BTreeMap<u32, u64>,
}

impl Localization {
    pub fn total(&self) -> u64 {
        self.attributed + self.unattributed + self.radius_filtered
    }

    pub fn evidence_map(&self) -> BTreeMap<(u64, CellId), u64> {
        self.evidence.iter().map(|e| ((e.provider_id, e.cell), e.mlab_test_count)).collect()
    }
}

/// A test counts once in each claimed cell its radius reaches, for every
/// provider its ASN matched.
pub fn attribute_and_localize(
    tests: &[MlabTest],
    matches: &[ProviderAsnMatch],
    claims_by_provider: &BTreeMap<u64, BTreeSet<CellId>>,
    grid: &dyn HexGrid,
) -> Localization {
    let by_asn = providers_by_asn(matches);
    let mut out = Localization::default();
    let mut counts: BTreeMap<(u64, CellId), u64> = BTreeMap::new();
    for t in tests {
        if !(t.accuracy_radius_km <= MAX_ACCURACY_RADIUS_KM) {
            out.radius_filtered += 1;
            continue;
        }
        let Some(providers) = by_asn.get(&t.asn) else {
            out.unattributed += 1;
            *out.unknown_asns.entry(t.asn).or_default() += 1;
            continue;
        };
        out.attributed += 1;
        let mut touched = false;
        for &p in providers {
            let Some(claimed) = claims_by_provider.get(&p) else { continue };
            let cells = grid.cells_within_radius_where(t.geo, t.accuracy_radius_km, &mut |c| claimed.contains(&c));
            for c in cells {
                touched = true;
                *counts.entry((p, c)).or_default() += 1;
            }
        }
        if !touched {
            out.attributed_without_cells += 1;
        }
    }
    out.evidence = counts
        .into_iter()
        .map(|((provider_id, cell), mlab_test_count)| ProviderCellEvidence { provider_id, cell, mlab_test_count })
        .collect();
    out
}
