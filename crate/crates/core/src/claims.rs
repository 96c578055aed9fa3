//! Terrestrial claims grouped at the observation grain (provider, cell,
//! technology).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geo::CellId;
use crate::ingest::{AvailabilityClaim, Technology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObservationKey {
    pub provider_id: u64,
    pub cell: CellId,
    pub technology: Technology,
}

impl ObservationKey {
    pub fn new(provider_id: u64, cell: CellId, technology: Technology) -> Self {
        Self { provider_id, cell, technology }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimGroup {
    /// Lexicographically smallest state among the grouped claims; a cell on a
    /// state line is assigned deterministically.
    pub state: String,
    pub claims: Vec<AvailabilityClaim>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClaimIndex {
    groups: BTreeMap<ObservationKey, ClaimGroup>,
    cells_by_provider: BTreeMap<u64, BTreeSet<CellId>>,
    satellite_claims: usize,
}

impl ClaimIndex {
    /// Satellite claims are counted and left out.
    pub fn build<'a>(claims: impl IntoIterator<Item = &'a AvailabilityClaim>) -> Self {
        let mut idx = Self::default();
        for c in claims {
            if c.technology.is_satellite() {
                idx.satellite_claims += 1;
                continue;
            }
            let key = ObservationKey::new(c.provider_id, c.cell, c.technology);
            let g = idx.groups.entry(key).or_insert_with(|| ClaimGroup { state: c.state.clone(), claims: Vec::new() });
            if c.state < g.state {
                g.state = c.state.clone();
            }
            g.claims.push(c.clone());
            idx.cells_by_provider.entry(c.provider_id).or_default().insert(c.cell);
        }
        idx
    }

    pub fn group(&self, key: &ObservationKey) -> Option<&ClaimGroup> {
        self.groups.get(key)
    }

    pub fn contains(&self, key: &ObservationKey) -> bool {
        self.groups.contains_key(key)
    }

    pub fn state_of(&self, key: &ObservationKey) -> Option<&str> {
        self.groups.get(key).map(|g| g.state.as_str())
    }

    pub fn groups(&self) -> impl Iterator<Item = (&ObservationKey, &ClaimGroup)> {
        self.groups.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ObservationKey> {
        self.groups.keys()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Cells a provider claims with any terrestrial technology.
    pub fn claimed_cells(&self, provider_id: u64) -> Option<&BTreeSet<CellId>> {
        self.cells_by_provider.get(&provider_id)
    }

    pub fn cells_by_provider(&self) -> &BTreeMap<u64, BTreeSet<CellId>> {
        &self.cells_by_provider
    }

    pub fn satellite_claims(&self) -> usize {
        self.satellite_claims
    }
}
