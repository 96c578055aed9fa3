//! Labeled observations at the (provider, cell, technology) grain.
//!
//! Unserved labels come from successful challenges and from claims removed
//! between snapshots; Served labels from failed challenges and from
//! likely-served cells, where crowdsourced device density, provider-attributed
//! tests and the provider's own claim coincide. Likely-served cells are
//! held back as a candidate pool used to balance classes per provider and
//! state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::attribution::{CellTestStats, ProviderCellEvidence};
use crate::claims::{ClaimIndex, ObservationKey};
use crate::diff::RemovalEvidence;
use crate::geo::CellId;
use crate::ingest::{ChallengeOutcome, ChallengeReason, ChallengeRecord, HexLocationCount, Technology};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LabelError {
    #[error("cell {0} has test statistics and attributed evidence but no location count")]
    MissingBslCount(CellId),
    #[error("location count for cell {0} is zero")]
    ZeroBslCount(CellId),
    #[error("label precedence must list every source exactly once")]
    InvalidPrecedence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Served,
    Unserved,
}

impl Label {
    /// 1.0 for Unserved: the classifier scores how likely a claim is to fail.
    pub fn target(self) -> f64 {
        match self {
            Label::Served => 0.0,
            Label::Unserved => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LabelSource {
    ChallengeSucceeded,
    ChallengeFailed,
    ChangeRemoved,
    SyntheticLikelyServed,
}

impl LabelSource {
    pub const ALL: [LabelSource; 4] = [
        LabelSource::ChallengeSucceeded,
        LabelSource::ChallengeFailed,
        LabelSource::ChangeRemoved,
        LabelSource::SyntheticLikelyServed,
    ];

    pub fn label(self) -> Label {
        match self {
            LabelSource::ChallengeSucceeded | LabelSource::ChangeRemoved => Label::Unserved,
            LabelSource::ChallengeFailed | LabelSource::SyntheticLikelyServed => Label::Served,
        }
    }

    pub fn is_challenge(self) -> bool {
        matches!(self, LabelSource::ChallengeSucceeded | LabelSource::ChallengeFailed)
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledObservation {
    pub provider_id: u64,
    pub cell: CellId,
    pub technology: Technology,
    pub state: String,
    pub label: Label,
    pub source: LabelSource,
    pub coverage_score: Option<f64>,
    /// The label rests on a regulator decision (upheld or overturned).
    pub fcc_adjudicated: bool,
}

impl LabeledObservation {
    pub fn new(key: ObservationKey, state: &str, source: LabelSource) -> Self {
        Self {
            provider_id: key.provider_id,
            cell: key.cell,
            technology: key.technology,
            state: state.to_string(),
            label: source.label(),
            source,
            coverage_score: None,
            fcc_adjudicated: false,
        }
    }

    pub fn key(&self) -> ObservationKey {
        ObservationKey::new(self.provider_id, self.cell, self.technology)
    }
}

/// Devices per broadband serviceable location.
pub fn coverage_score(stats: &CellTestStats, count: &HexLocationCount) -> Result<f64, LabelError> {
    if count.bsl_count == 0 {
        return Err(LabelError::ZeroBslCount(count.cell));
    }
    Ok(stats.ookla_devices as f64 / f64::from(count.bsl_count))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeLabelStats {
    pub records: usize,
    pub before_cutoff: usize,
    /// Records for a key with no terrestrial claim in the base snapshot.
    pub without_claim: usize,
    pub observations: usize,
}

/// Aggregates challenge records to the hex: one successful record marks the
/// whole key Unserved, otherwise the key is Served. Records resolved before
/// `cutoff` are discarded.
pub fn challenge_labels(
    records: &[ChallengeRecord],
    claims: &ClaimIndex,
    cutoff: Option<NaiveDate>,
) -> (Vec<LabeledObservation>, ChallengeLabelStats) {
    let mut stats = ChallengeLabelStats { records: records.len(), ..Default::default() };
    // (any success, adjudicated success, adjudicated failure)
    let mut by_key: BTreeMap<ObservationKey, (bool, bool, bool)> = BTreeMap::new();
    for r in records {
        if cutoff.is_some_and(|c| r.resolved_date < c) {
            stats.before_cutoff += 1;
            continue;
        }
        let key = ObservationKey::new(r.provider_id, r.cell, r.technology);
        if !claims.contains(&key) {
            stats.without_claim += 1;
            continue;
        }
        let e = by_key.entry(key).or_default();
        let success = r.outcome.is_success();
        e.0 |= success;
        e.1 |= success && r.outcome.is_adjudicated();
        e.2 |= !success && r.outcome.is_adjudicated();
    }
    let obs: Vec<_> = by_key
        .into_iter()
        .map(|(key, (success, adj_success, adj_failure))| {
            let source = if success { LabelSource::ChallengeSucceeded } else { LabelSource::ChallengeFailed };
            let mut o = LabeledObservation::new(key, claims.state_of(&key).unwrap_or_default(), source);
            o.fcc_adjudicated = if success { adj_success } else { adj_failure };
            o
        })
        .collect();
    stats.observations = obs.len();
    (obs, stats)
}

/// Removed claims become Unserved; keys without a terrestrial claim in the
/// base snapshot (satellite) are skipped.
pub fn change_labels(removals: &[RemovalEvidence], claims: &ClaimIndex) -> Vec<LabeledObservation> {
    removals
        .iter()
        .map(|r| ObservationKey::new(r.provider_id, r.cell, r.technology))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter_map(|key| Some(LabeledObservation::new(key, claims.state_of(&key)?, LabelSource::ChangeRemoved)))
        .collect()
}

/// Claimed keys whose cell has more than one device per location and where
/// the provider has attributed tests in that cell.
pub fn likely_served(
    stats: &[CellTestStats],
    counts: &[HexLocationCount],
    evidence: &[ProviderCellEvidence],
    claims: &ClaimIndex,
) -> Result<Vec<LabeledObservation>, LabelError> {
    let stats: BTreeMap<CellId, &CellTestStats> = stats.iter().map(|s| (s.cell, s)).collect();
    let counts: BTreeMap<CellId, &HexLocationCount> = counts.iter().map(|c| (c.cell, c)).collect();
    let evidence: BTreeSet<(u64, CellId)> =
        evidence.iter().filter(|e| e.mlab_test_count > 0).map(|e| (e.provider_id, e.cell)).collect();
    let mut out = Vec::new();
    for (key, group) in claims.groups() {
        if !evidence.contains(&(key.provider_id, key.cell)) {
            continue;
        }
        let Some(s) = stats.get(&key.cell) else { continue };
        let count = counts.get(&key.cell).ok_or(LabelError::MissingBslCount(key.cell))?;
        let score = coverage_score(s, count)?;
        if score > 1.0 {
            let mut o = LabeledObservation::new(*key, &group.state, LabelSource::SyntheticLikelyServed);
            o.coverage_score = Some(score);
            out.push(o);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingConfig {
    /// Challenge records resolved before this date are discarded.
    pub challenge_cutoff: Option<NaiveDate>,
    /// Strongest first; decides which source wins when a key repeats.
    pub precedence: Vec<LabelSource>,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self { challenge_cutoff: None, precedence: LabelSource::ALL.to_vec() }
    }
}

impl LabelingConfig {
    fn rank(&self) -> Result<BTreeMap<LabelSource, usize>, LabelError> {
        let rank: BTreeMap<_, _> = self.precedence.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        if rank.len() != LabelSource::ALL.len() || self.precedence.len() != LabelSource::ALL.len() {
            return Err(LabelError::InvalidPrecedence);
        }
        Ok(rank)
    }
}

/// Deduplicates by key, keeping the row whose source ranks highest. Output
/// is ordered by key.
pub fn assemble_dataset(
    sources: &[&[LabeledObservation]],
    precedence: &[LabelSource],
) -> Result<Vec<LabeledObservation>, LabelError> {
    let rank = LabelingConfig { challenge_cutoff: None, precedence: precedence.to_vec() }.rank()?;
    let mut best: BTreeMap<ObservationKey, &LabeledObservation> = BTreeMap::new();
    for o in sources.iter().flat_map(|s| s.iter()) {
        best.entry(o.key())
            .and_modify(|cur| {
                if rank[&o.source] < rank[&cur.source] {
                    *cur = o;
                }
            })
            .or_insert(o);
    }
    Ok(best.into_values().cloned().collect())
}

/// Descending score, then cell, provider and technology ascending.
fn pool_order(a: &LabeledObservation, b: &LabeledObservation) -> std::cmp::Ordering {
    let sa = a.coverage_score.unwrap_or(f64::NEG_INFINITY);
    let sb = b.coverage_score.unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa)
        .then(a.cell.cmp(&b.cell))
        .then(a.provider_id.cmp(&b.provider_id))
        .then(a.technology.cmp(&b.technology))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub added_per_provider: usize,
    pub added_per_state: usize,
    /// (provider, state) groups left with fewer Served than Unserved rows
    /// after the provider pass.
    pub starved_groups: Vec<(u64, String)>,
    /// States still short of Served rows after the state pass.
    pub imbalanced_states: Vec<String>,
}

/// Adds Served candidates until each (provider, state) has as many Served as
/// Unserved rows, then tops up each state as a whole from whatever remains.
/// Never removes rows. Candidates already present in `dataset` are ignored.
pub fn balance(dataset: &[LabeledObservation], candidates: &[LabeledObservation]) -> (Vec<LabeledObservation>, BalanceReport) {
    let present: BTreeSet<ObservationKey> = dataset.iter().map(|o| o.key()).collect();
    let mut pool: Vec<&LabeledObservation> = candidates.iter().filter(|c| !present.contains(&c.key())).collect();
    pool.sort_by(|a, b| pool_order(a, b));
    let mut seen = BTreeSet::new();
    pool.retain(|c| seen.insert(c.key()));
    let mut used = vec![false; pool.len()];

    // Unserved minus Served.
    let mut group_gap: BTreeMap<(u64, &str), i64> = BTreeMap::new();
    let mut state_gap: BTreeMap<&str, i64> = BTreeMap::new();
    for o in dataset {
        let d = if o.label == Label::Unserved { 1 } else { -1 };
        *group_gap.entry((o.provider_id, o.state.as_str())).or_default() += d;
        *state_gap.entry(o.state.as_str()).or_default() += d;
    }

    // Pool indices per group and per state, each already in pool order.
    let mut by_group: BTreeMap<(u64, &str), Vec<usize>> = BTreeMap::new();
    let mut by_state: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in pool.iter().enumerate() {
        by_group.entry((c.provider_id, c.state.as_str())).or_default().push(i);
        by_state.entry(c.state.as_str()).or_default().push(i);
    }

    let mut report = BalanceReport::default();
    let mut added: Vec<LabeledObservation> = Vec::new();
    for (&(provider, state), gap) in group_gap.iter_mut() {
        for &i in by_group.get(&(provider, state)).into_iter().flatten() {
            if *gap <= 0 {
                break;
            }
            used[i] = true;
            *gap -= 1;
            *state_gap.get_mut(state).expect("state seen") -= 1;
            added.push(pool[i].clone());
            report.added_per_provider += 1;
        }
        if *gap > 0 {
            report.starved_groups.push((provider, state.to_string()));
        }
    }
    for (&state, gap) in state_gap.iter_mut() {
        for &i in by_state.get(state).into_iter().flatten() {
            if *gap <= 0 {
                break;
            }
            if !used[i] {
                used[i] = true;
                *gap -= 1;
                added.push(pool[i].clone());
                report.added_per_state += 1;
            }
        }
        if *gap > 0 {
            report.imbalanced_states.push(state.to_string());
        }
    }

    let mut out: Vec<LabeledObservation> = dataset.iter().cloned().chain(added).collect();
    out.sort_by_key(|o| o.key());
    (out, report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub total: usize,
    pub by_source: BTreeMap<LabelSource, usize>,
    pub by_label: BTreeMap<Label, usize>,
}

impl Composition {
    pub fn of(rows: &[LabeledObservation]) -> Self {
        let mut c = Composition { total: rows.len(), ..Default::default() };
        for s in LabelSource::ALL {
            c.by_source.insert(s, 0);
        }
        for o in rows {
            *c.by_source.entry(o.source).or_default() += 1;
            *c.by_label.entry(o.label).or_default() += 1;
        }
        c
    }

    pub fn fraction(&self, source: LabelSource) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.by_source.get(&source).copied().unwrap_or(0) as f64 / self.total as f64
        }
    }
}

/// Outcome and reason distributions over raw challenge records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChallengeSummary {
    pub total: usize,
    pub outcomes: BTreeMap<String, usize>,
    pub reasons: BTreeMap<String, usize>,
}

pub fn challenge_summary(records: &[ChallengeRecord]) -> ChallengeSummary {
    let mut s = ChallengeSummary { total: records.len(), ..Default::default() };
    for o in ChallengeOutcome::ALL {
        s.outcomes.insert(o.label().to_string(), 0);
    }
    for r in ChallengeReason::ALL {
        s.reasons.insert(r.label().to_string(), 0);
    }
    for r in records {
        *s.outcomes.entry(r.outcome.label().to_string()).or_default() += 1;
        *s.reasons.entry(r.reason.label().to_string()).or_default() += 1;
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub observations: Vec<LabeledObservation>,
    pub composition: Composition,
    pub challenges: ChallengeLabelStats,
    pub balance: BalanceReport,
    /// Likely-served candidates before balancing.
    pub synthetic_pool: usize,
}

/// Challenges, then removals, then likely-served candidates used for
/// balancing.
pub fn build_labeled_set(
    challenges: &[ChallengeRecord],
    removals: &[RemovalEvidence],
    synthetic: &[LabeledObservation],
    claims: &ClaimIndex,
    config: &LabelingConfig,
) -> Result<LabeledSet, LabelError> {
    let (challenge_obs, challenge_stats) = challenge_labels(challenges, claims, config.challenge_cutoff);
    let change_obs = change_labels(removals, claims);
    let base = assemble_dataset(&[&challenge_obs, &change_obs], &config.precedence)?;
    let (observations, balance_report) = balance(&base, synthetic);
    Ok(LabeledSet {
        composition: Composition::of(&observations),
        observations,
        challenges: challenge_stats,
        balance: balance_report,
        synthetic_pool: synthetic.len(),
    })
}
