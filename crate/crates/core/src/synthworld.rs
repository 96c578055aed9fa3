//! Synthetic scenario generator with ground truth.
//!
//! A world is a handful of rectangular state blocks of hex cells. Each
//! provider truly serves a few contiguous blobs in its home state and
//! additionally claims contiguous overclaim blobs it does not serve. Ookla
//! device density, MLab tests, challenges, a later map snapshot and
//! registration/WHOIS records are derived from that truth, so every stage of
//! the pipeline can be checked against it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::claims::ObservationKey;
use crate::geo::{tile_of, tile_to_quadkey, CellId, GeoError, GeoPoint, GridConfig, HexGrid, ReferenceGrid, EARTH_RADIUS_KM};
use crate::ingest::{
    self, AvailabilityClaim, Category, ChallengeOutcome, ChallengeReason, ChallengeRecord, FrnRegistration,
    HexLocationCount, IngestError, MethodologyKey, MlabTest, OoklaTile, RegistryObject, Technology, STATE_CODES,
};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid world configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Mixture of accuracy radii: `(weight, min_km, max_km)`, drawn uniformly
/// within the chosen component.
pub type RadiusMixture = Vec<(f64, f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedMisreport {
    /// Provider index (0-based) that receives the planted region.
    pub provider: usize,
    /// Share of that provider's claims inside the planted region.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_states: usize,
    pub n_providers: usize,
    pub cells_per_state: usize,
    /// Fraction of each provider's terrestrial claims that are overclaims.
    pub overclaim_rate: f64,
    /// Fraction of a provider's home state it truly serves, as a range.
    pub served_share: (f64, f64),
    /// Probability an overclaimed cell is challenged.
    pub challenge_coverage: f64,
    /// Spread of challenge attention across providers: even-indexed
    /// providers see `coverage * (1 + skew)`, odd ones `coverage * (1 - skew)`.
    pub challenge_skew: f64,
    pub challenge_success_given_overclaim: f64,
    /// Probability a truly served cell is challenged (such challenges fail).
    pub served_challenge_rate: f64,
    /// Probability an unchallenged overclaimed cell is quietly dropped from
    /// the later snapshot.
    pub change_rate: f64,
    /// Mean devices per location in cells some terrestrial provider serves.
    pub test_density_served: f64,
    /// Scales served density by how often each technology's customers run
    /// speed tests (fiber most, unlicensed wireless least).
    pub technology_test_propensity: bool,
    pub test_density_unserved: f64,
    /// Mean MLab tests per (provider, served cell).
    pub mlab_tests_per_cell: f64,
    /// Planar standard deviation of reported test positions, km.
    pub geoloc_noise_km: f64,
    pub geoloc_radius: RadiusMixture,
    /// Probability each cosmetic perturbation is applied to a registry value.
    pub name_noise_level: f64,
    /// Adds a satellite provider claiming every cell.
    pub satellite_provider: bool,
    pub planted: Option<PlantedMisreport>,
    pub grid: GridConfig,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_states: 5,
            n_providers: 20,
            cells_per_state: 600,
            overclaim_rate: 0.1,
            served_share: (0.1, 0.25),
            challenge_coverage: 0.3,
            challenge_skew: 0.8,
            challenge_success_given_overclaim: 0.85,
            served_challenge_rate: 0.03,
            change_rate: 0.4,
            test_density_served: 2.5,
            technology_test_propensity: true,
            test_density_unserved: 0.15,
            mlab_tests_per_cell: 3.0,
            geoloc_noise_km: 0.2,
            geoloc_radius: vec![(0.75, 0.05, 1.0), (0.15, 1.0, 5.0), (0.05, 5.0, 20.0), (0.05, 20.5, 50.0)],
            name_noise_level: 0.0,
            satellite_provider: true,
            planted: None,
            grid: GridConfig::default(),
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.n_states == 0 || self.n_states > STATE_CODES.len() {
            return bad("n_states must be in 1..=56");
        }
        if self.n_providers == 0 {
            return bad("n_providers must be positive");
        }
        if self.cells_per_state < 16 {
            return bad("cells_per_state must be at least 16");
        }
        if !(0.0..1.0).contains(&self.overclaim_rate) {
            return bad("overclaim_rate must be in [0, 1)");
        }
        let (lo, hi) = self.served_share;
        if !(lo > 0.0 && lo <= hi && hi <= 0.6) {
            return bad("served_share must satisfy 0 < lo <= hi <= 0.6");
        }
        for (name, v) in [
            ("challenge_coverage", self.challenge_coverage),
            ("challenge_skew", self.challenge_skew),
            ("challenge_success_given_overclaim", self.challenge_success_given_overclaim),
            ("served_challenge_rate", self.served_challenge_rate),
            ("change_rate", self.change_rate),
            ("name_noise_level", self.name_noise_level),
        ] {
            if !unit(v) {
                return Err(SynthError::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        for (name, v) in [
            ("test_density_served", self.test_density_served),
            ("test_density_unserved", self.test_density_unserved),
            ("mlab_tests_per_cell", self.mlab_tests_per_cell),
            ("geoloc_noise_km", self.geoloc_noise_km),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SynthError::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if self.geoloc_radius.is_empty()
            || self.geoloc_radius.iter().any(|&(w, a, b)| !(w >= 0.0 && a >= 0.0 && a <= b && b.is_finite()))
            || self.geoloc_radius.iter().map(|c| c.0).sum::<f64>() <= 0.0
        {
            return bad("geoloc_radius needs components (weight >= 0, 0 <= min <= max) with positive total weight");
        }
        if let Some(p) = &self.planted {
            if p.provider >= self.n_providers || !(p.fraction > 0.0 && p.fraction < 0.9) {
                return bad("planted provider out of range or fraction outside (0, 0.9)");
            }
        }
        ReferenceGrid::new(self.grid)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderTruth {
    pub provider_id: u64,
    pub technology: Technology,
    pub home_state: String,
    pub asns: BTreeSet<u32>,
    pub served: BTreeSet<CellId>,
    pub overclaimed: BTreeSet<CellId>,
    /// Overclaimed cells inside the planted region, if this provider has one.
    pub planted: BTreeSet<CellId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldTruth {
    pub providers: Vec<ProviderTruth>,
    pub cell_states: BTreeMap<CellId, String>,
}

impl WorldTruth {
    fn provider(&self, provider_id: u64, technology: Technology) -> Option<&ProviderTruth> {
        self.providers.iter().find(|p| p.provider_id == provider_id && p.technology == technology)
    }

    /// `Some(true)` for an overclaim, `Some(false)` for a truly served key.
    pub fn is_overclaim(&self, key: &ObservationKey) -> Option<bool> {
        let p = self.provider(key.provider_id, key.technology)?;
        if p.overclaimed.contains(&key.cell) {
            Some(true)
        } else if p.served.contains(&key.cell) {
            Some(false)
        } else {
            None
        }
    }

    pub fn total_overclaimed(&self) -> usize {
        self.providers.iter().filter(|p| p.technology.is_terrestrial()).map(|p| p.overclaimed.len()).sum()
    }

    pub fn total_claimed_cells(&self) -> usize {
        self.providers.iter().filter(|p| p.technology.is_terrestrial()).map(|p| p.served.len() + p.overclaimed.len()).sum()
    }

    pub fn asns_by_provider(&self) -> BTreeMap<u64, BTreeSet<u32>> {
        let mut out: BTreeMap<u64, BTreeSet<u32>> = BTreeMap::new();
        for p in &self.providers {
            out.entry(p.provider_id).or_default().extend(&p.asns);
        }
        out
    }
}

/// A generated universe: every input dataset in memory plus the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub base_claims: Vec<AvailabilityClaim>,
    pub later_claims: Vec<AvailabilityClaim>,
    pub methodology: BTreeMap<MethodologyKey, String>,
    pub challenges: Vec<ChallengeRecord>,
    pub ookla: Vec<OoklaTile>,
    pub mlab: Vec<MlabTest>,
    pub frn: Vec<FrnRegistration>,
    pub whois: Vec<RegistryObject>,
    pub hex_counts: Vec<HexLocationCount>,
    pub truth: WorldTruth,
}

/// File names inside a bundle directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundlePaths {
    pub claims_base: PathBuf,
    pub claims_later: PathBuf,
    pub methodology: PathBuf,
    pub challenges: PathBuf,
    pub ookla: PathBuf,
    pub mlab: PathBuf,
    pub frn: PathBuf,
    pub whois: PathBuf,
    pub hex_counts: PathBuf,
    pub truth: PathBuf,
    pub config: PathBuf,
}

impl BundlePaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            claims_base: dir.join("claims_base.csv"),
            claims_later: dir.join("claims_later.csv"),
            methodology: dir.join("methodology.csv"),
            challenges: dir.join("challenges.csv"),
            ookla: dir.join("ookla.csv"),
            mlab: dir.join("mlab.ndjson"),
            frn: dir.join("frn.csv"),
            whois: dir.join("whois.ndjson"),
            hex_counts: dir.join("hex_counts.csv"),
            truth: dir.join("truth.json"),
            config: dir.join("world.json"),
        }
    }
}

impl World {
    pub fn write_bundle(&self, dir: &Path) -> Result<BundlePaths, SynthError> {
        std::fs::create_dir_all(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
        let p = BundlePaths::in_dir(dir);
        ingest::write_claims(&p.claims_base, &self.base_claims)?;
        ingest::write_claims(&p.claims_later, &self.later_claims)?;
        ingest::write_methodology(&p.methodology, &self.methodology)?;
        ingest::write_challenges(&p.challenges, &self.challenges)?;
        ingest::write_ookla(&p.ookla, &self.ookla)?;
        ingest::write_mlab_ndjson(&p.mlab, &self.mlab)?;
        ingest::write_frn(&p.frn, &self.frn)?;
        ingest::write_whois(&p.whois, &self.whois)?;
        ingest::write_hex_counts(&p.hex_counts, &self.hex_counts)?;
        write_json(&p.truth, &self.truth)?;
        write_json(&p.config, &self.config)?;
        Ok(p)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SynthError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| SynthError::Json { path: path.to_path_buf(), source })?;
    std::fs::write(path, text + "\n").map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<WorldTruth, SynthError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| SynthError::Json { path: path.to_path_buf(), source })
}

/// Preferred state order; the rest of the table follows.
const STATE_ORDER: [&str; 8] = ["NE", "GA", "OK", "MO", "IN", "SC", "KS", "IA"];

const METHODOLOGY_TEMPLATES: [&str; 4] = [
    "Coverage reflects subscriber addresses with active service drawn from our billing system and field records",
    "Availability is derived from a propagation model of our fixed wireless towers with engineering link budgets",
    "We report the entire census block as served wherever our network passes any location in that block",
    "Locations are included where our fiber route engineering confirms a drop can be installed within ten business days",
];

const NAME_STEMS: [&str; 16] = [
    "Prairie", "Summit", "River", "Valley", "Pioneer", "Heartland", "Bluestem", "Cedar", "Granite", "Meadow", "Lakeside",
    "Frontier", "Harbor", "Ridge", "Canyon", "Aurora",
];
const NAME_KINDS: [&str; 6] = ["Networks", "Telephone", "Broadband", "Communications", "Fiber", "Wireless"];
const STREET_NAMES: [&str; 10] = ["Main", "Oak", "Maple", "Cedar", "Elm", "Pine", "Washington", "Lake", "Hill", "Park"];
const STREET_SUFFIXES: [&str; 6] = ["Street", "Avenue", "Road", "Boulevard", "Drive", "Lane"];
const DIRECTIONS: [&str; 4] = ["North", "South", "East", "West"];

fn tech_for(i: usize) -> Technology {
    [Technology::Fiber, Technology::Cable, Technology::Copper, Technology::LicensedFixedWireless, Technology::UnlicensedFixedWireless][i % 5]
}

fn speeds_for(t: Technology) -> (f64, f64) {
    match t {
        Technology::Fiber => (1000.0, 1000.0),
        Technology::Cable => (1000.0, 35.0),
        Technology::Copper => (100.0, 10.0),
        Technology::LicensedFixedWireless => (100.0, 20.0),
        Technology::UnlicensedFixedWireless => (50.0, 10.0),
        Technology::GsoSatellite | Technology::NgsoSatellite => (100.0, 3.0),
    }
}

fn test_propensity(t: Technology) -> f64 {
    match t {
        Technology::Fiber => 1.2,
        Technology::Cable => 1.0,
        Technology::Copper => 0.8,
        Technology::LicensedFixedWireless => 0.6,
        Technology::UnlicensedFixedWireless => 0.5,
        Technology::GsoSatellite | Technology::NgsoSatellite => 0.3,
    }
}

struct StateBlock {
    code: String,
    cells: Vec<CellId>,
    neighbors: BTreeMap<CellId, Vec<CellId>>,
}

/// Cells of a `w x h` block of hex centres starting at the cell containing
/// `anchor`, laid out in the grid's planar frame so each lattice step lands
/// in the next cell.
fn state_block(grid: &ReferenceGrid, code: &str, anchor: GeoPoint, n: usize) -> Result<StateBlock, SynthError> {
    let cfg = grid.config();
    let e = cfg.edge_km;
    let start = grid.cell_centroid(grid.cell_of(anchor))?;
    let cos0 = cfg.origin.lat.to_radians().cos();
    let w = (n as f64).sqrt().ceil() as usize;
    let mut cells = Vec::with_capacity(n);
    let mut lattice: BTreeMap<(i64, i64), CellId> = BTreeMap::new();
    'outer: for row in 0.. {
        for col in 0..w {
            if cells.len() == n {
                break 'outer;
            }
            let x = 1.5 * e * col as f64;
            let y = 3f64.sqrt() * e * (row as f64 + if col % 2 == 1 { 0.5 } else { 0.0 });
            let p = GeoPoint::new(
                start.lat + (y / EARTH_RADIUS_KM).to_degrees(),
                start.lon + (x / (EARTH_RADIUS_KM * cos0)).to_degrees(),
            )?;
            let c = grid.cell_of(p);
            lattice.insert((col as i64, row as i64), c);
            cells.push(c);
        }
    }
    let mut neighbors = BTreeMap::new();
    for (&(col, row), &c) in &lattice {
        let shift = if col % 2 == 1 { 1 } else { -1 };
        let around = [(col, row - 1), (col, row + 1), (col - 1, row), (col + 1, row), (col - 1, row + shift), (col + 1, row + shift)];
        let ns: Vec<CellId> = around.iter().filter_map(|k| lattice.get(k).copied()).collect();
        neighbors.insert(c, ns);
    }
    Ok(StateBlock { code: code.to_string(), cells, neighbors })
}

/// Grows a connected blob of `size` cells from `seed`, never entering
/// `blocked`. Returns fewer cells if the component is exhausted.
fn grow_blob(
    rng: &mut ChaCha8Rng,
    block: &StateBlock,
    seed: CellId,
    size: usize,
    blocked: &BTreeSet<CellId>,
) -> BTreeSet<CellId> {
    let mut blob = BTreeSet::new();
    if blocked.contains(&seed) || size == 0 {
        return blob;
    }
    blob.insert(seed);
    let mut frontier: Vec<CellId> = Vec::new();
    let push_neighbors = |c: CellId, blob: &BTreeSet<CellId>, frontier: &mut Vec<CellId>| {
        for &n in &block.neighbors[&c] {
            if !blob.contains(&n) && !blocked.contains(&n) && !frontier.contains(&n) {
                frontier.push(n);
            }
        }
    };
    push_neighbors(seed, &blob, &mut frontier);
    while blob.len() < size && !frontier.is_empty() {
        let i = rng.random_range(0..frontier.len());
        let c = frontier.swap_remove(i);
        blob.insert(c);
        push_neighbors(c, &blob, &mut frontier);
    }
    blob
}

/// Cells at graph distance at least `gap` from every cell in `avoid`.
fn far_from(block: &StateBlock, avoid: &BTreeSet<CellId>, gap: usize) -> Vec<CellId> {
    let mut dist: BTreeMap<CellId, usize> = avoid.iter().map(|&c| (c, 0)).collect();
    let mut queue: VecDeque<CellId> = avoid.iter().copied().collect();
    while let Some(c) = queue.pop_front() {
        let d = dist[&c];
        if d >= gap {
            continue;
        }
        for &n in &block.neighbors[&c] {
            if !dist.contains_key(&n) {
                dist.insert(n, d + 1);
                queue.push_back(n);
            }
        }
    }
    block.cells.iter().copied().filter(|c| dist.get(c).is_none_or(|&d| d >= gap)).collect()
}

fn noisy_case(rng: &mut ChaCha8Rng, s: &str, level: f64) -> String {
    match rng.random_range(0..3) {
        _ if !rng.random_bool(level) => s.to_string(),
        0 => s.to_uppercase(),
        1 => s.to_lowercase(),
        _ => format!("  {s} "),
    }
}

fn noisy_company(rng: &mut ChaCha8Rng, name: &str, level: f64) -> String {
    let mut s = noisy_case(rng, name, level);
    if rng.random_bool(level) {
        s.push_str([", LLC", " Inc.", " LLC", ", Inc"][rng.random_range(0..4)]);
    }
    if rng.random_bool(level) {
        s = s.replace(' ', " - ");
    }
    s
}

fn noisy_address(rng: &mut ChaCha8Rng, number: u32, direction: &str, street: &str, suffix: &str, level: f64) -> String {
    let abbreviate = rng.random_bool(level);
    let (d, suf) = if abbreviate {
        (&direction[..1], crate::entity_match::canonicalize_address(suffix).to_uppercase())
    } else {
        (direction, suffix.to_string())
    };
    let punct = if rng.random_bool(level) { "." } else { "" };
    noisy_case(rng, &format!("{number} {d}{punct} {street} {suf}{punct}"), level)
}

fn noisy_email(rng: &mut ChaCha8Rng, email: &str, level: f64) -> String {
    noisy_case(rng, email, level)
}

struct ProviderPlan {
    provider_id: u64,
    technology: Technology,
    state: usize,
    asns: Vec<u32>,
    served: BTreeSet<CellId>,
    overclaimed: BTreeSet<CellId>,
    planted: BTreeSet<CellId>,
}

pub fn generate(config: &WorldConfig) -> Result<World, SynthError> {
    config.validate()?;
    let grid = ReferenceGrid::new(config.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // States: blocks about 1.5 degrees apart around the grid origin.
    let codes: Vec<&str> = STATE_ORDER
        .iter()
        .copied()
        .chain(STATE_CODES.iter().copied().filter(|c| !STATE_ORDER.contains(c)))
        .take(config.n_states)
        .collect();
    let mut states = Vec::with_capacity(codes.len());
    for (i, code) in codes.iter().enumerate() {
        let anchor = GeoPoint::new(
            (config.grid.origin.lat - 3.0 + 1.5 * (i / 4) as f64).clamp(-80.0, 80.0),
            config.grid.origin.lon - 3.0 + 1.5 * (i % 4) as f64,
        )?;
        states.push(state_block(&grid, code, anchor, config.cells_per_state)?);
    }
    let mut cell_states = BTreeMap::new();
    for s in &states {
        for &c in &s.cells {
            cell_states.insert(c, s.code.clone());
        }
    }

    // Locations per cell.
    let bsl_dist = Poisson::new(3.0).expect("positive mean");
    let mut bsl: BTreeMap<CellId, u32> = BTreeMap::new();
    let mut location_base: BTreeMap<CellId, u64> = BTreeMap::new();
    for (i, s) in states.iter().enumerate() {
        for (j, &c) in s.cells.iter().enumerate() {
            bsl.insert(c, 1 + bsl_dist.sample(&mut rng) as u32);
            location_base.insert(c, ((i as u64 + 1) * 1_000_000 + j as u64) * 100);
        }
    }

    // True service areas.
    let mut plans: Vec<ProviderPlan> = Vec::with_capacity(config.n_providers);
    for p in 0..config.n_providers {
        let state = p % config.n_states;
        let block = &states[state];
        let share = rng.random_range(config.served_share.0..=config.served_share.1);
        let target = ((share * block.cells.len() as f64).round() as usize).max(1);
        let n_blobs = rng.random_range(1..=3usize).min(target);
        let mut served = BTreeSet::new();
        for b in 0..n_blobs {
            let size = target / n_blobs + usize::from(b < target % n_blobs);
            let seed = *block.cells.choose(&mut rng).expect("non-empty block");
            served.extend(grow_blob(&mut rng, block, seed, size, &served));
        }
        let n_asns = 1 + usize::from(rng.random_bool(0.4));
        plans.push(ProviderPlan {
            provider_id: 130_000 + p as u64 * 7,
            technology: tech_for(p),
            state,
            asns: (0..n_asns).map(|k| 64_512 + (p * 4 + k) as u32).collect(),
            served,
            overclaimed: BTreeSet::new(),
            planted: BTreeSet::new(),
        });
    }

    // Overclaims: contiguous blobs away from the provider's own service and,
    // where room allows, outside every other provider's service too.
    let served_by_state: Vec<BTreeSet<CellId>> = (0..states.len())
        .map(|s| plans.iter().filter(|p| p.state == s).flat_map(|p| p.served.iter().copied()).collect())
        .collect();
    for (p, plan) in plans.iter_mut().enumerate() {
        let block = &states[plan.state];
        let planted = config.planted.as_ref().filter(|pl| pl.provider == p);
        let rate = planted.map_or(config.overclaim_rate, |pl| pl.fraction);
        let target = (rate / (1.0 - rate) * plan.served.len() as f64).round() as usize;
        if target == 0 {
            continue;
        }
        let n_blobs = if planted.is_some() { 1 } else { rng.random_range(1..=2usize).min(target) };
        let mut over = BTreeSet::new();
        for b in 0..n_blobs {
            let size = target / n_blobs + usize::from(b < target % n_blobs);
            let own: BTreeSet<CellId> = plan.served.union(&over).copied().collect();
            let everyone: BTreeSet<CellId> = served_by_state[plan.state].union(&over).copied().collect();
            let near_own = far_from(block, &own, 3);
            let mut placed = false;
            for blocked in [&everyone, &own] {
                let mut seeds: Vec<CellId> = near_own.iter().copied().filter(|c| !blocked.contains(c)).collect();
                seeds.shuffle(&mut rng);
                for seed in seeds.into_iter().take(8) {
                    let blob = grow_blob(&mut rng, block, seed, size, blocked);
                    if blob.len() == size {
                        over.extend(blob);
                        placed = true;
                        break;
                    }
                }
                if placed {
                    break;
                }
            }
            if !placed && planted.is_none() {
                let free: Vec<CellId> = block.cells.iter().copied().filter(|c| !own.contains(c)).collect();
                if let Some(&seed) = free.choose(&mut rng) {
                    over.extend(grow_blob(&mut rng, block, seed, size, &own));
                }
            }
        }
        if planted.is_some() {
            plan.planted = over.clone();
        }
        plan.overclaimed = over;
    }

    let mut served_density: BTreeMap<CellId, f64> = BTreeMap::new();
    for p in &plans {
        let d = config.test_density_served * if config.technology_test_propensity { test_propensity(p.technology) } else { 1.0 };
        for &c in &p.served {
            let e = served_density.entry(c).or_insert(0.0);
            *e = e.max(d);
        }
    }

    // Claims in the base snapshot.
    let mut base_claims = Vec::new();
    let mut claimed_locations: BTreeMap<(usize, CellId), Vec<u64>> = BTreeMap::new();
    for (p, plan) in plans.iter().enumerate() {
        let (down, up) = speeds_for(plan.technology);
        for &c in plan.served.iter().chain(&plan.overclaimed) {
            let n = bsl[&c];
            let mut locs: Vec<u64> = (0..u64::from(n)).filter(|_| rng.random_bool(0.9)).map(|k| location_base[&c] + k).collect();
            if locs.is_empty() {
                locs.push(location_base[&c]);
            }
            for &location_id in &locs {
                base_claims.push(AvailabilityClaim {
                    provider_id: plan.provider_id,
                    brand: format!("{} {}", NAME_STEMS[p % NAME_STEMS.len()], NAME_KINDS[p % NAME_KINDS.len()]),
                    technology: plan.technology,
                    max_down_mbps: down,
                    max_up_mbps: up,
                    low_latency: true,
                    location_id,
                    cell: c,
                    state: cell_states[&c].clone(),
                    category: if rng.random_bool(0.9) { Category::Residential } else { Category::Both },
                });
            }
            claimed_locations.insert((p, c), locs);
        }
    }
    let satellite_id = 130_000 + config.n_providers as u64 * 7;
    if config.satellite_provider {
        let (down, up) = speeds_for(Technology::GsoSatellite);
        for (&c, &n) in &bsl {
            for k in 0..u64::from(n) {
                base_claims.push(AvailabilityClaim {
                    provider_id: satellite_id,
                    brand: "Orbital Sky".into(),
                    technology: Technology::GsoSatellite,
                    max_down_mbps: down,
                    max_up_mbps: up,
                    low_latency: false,
                    location_id: location_base[&c] + k,
                    cell: c,
                    state: cell_states[&c].clone(),
                    category: Category::Residential,
                });
            }
        }
    }

    // Challenges.
    let start = NaiveDate::from_ymd_opt(2023, 7, 1).expect("valid date");
    let mut challenges = Vec::new();
    let mut removed: BTreeSet<(usize, CellId)> = BTreeSet::new();
    let reasons = ChallengeReason::ALL;
    for (p, plan) in plans.iter().enumerate() {
        for &c in &plan.overclaimed {
            let skew = if p % 2 == 0 { 1.0 + config.challenge_skew } else { 1.0 - config.challenge_skew };
            if !rng.random_bool((config.challenge_coverage * skew).min(1.0)) {
                if rng.random_bool(config.change_rate) {
                    removed.insert((p, c));
                }
                continue;
            }
            let success = rng.random_bool(config.challenge_success_given_overclaim);
            let locs = &claimed_locations[&(p, c)];
            let n = rng.random_range(1..=locs.len().min(3));
            for &location_id in locs.choose_multiple(&mut rng, n) {
                let outcome = if success {
                    *[ChallengeOutcome::ProviderConceded, ChallengeOutcome::ServiceChanged, ChallengeOutcome::FccUpheld]
                        .choose(&mut rng)
                        .expect("non-empty")
                } else {
                    *[ChallengeOutcome::ChallengeWithdrawn, ChallengeOutcome::FccOverturned].choose(&mut rng).expect("non-empty")
                };
                challenges.push(ChallengeRecord {
                    provider_id: plan.provider_id,
                    location_id,
                    cell: c,
                    technology: plan.technology,
                    outcome,
                    reason: *reasons.choose(&mut rng).expect("non-empty"),
                    resolved_date: start + Days::new(rng.random_range(0..365)),
                });
            }
            if success {
                removed.insert((p, c));
            }
        }
        for &c in &plan.served {
            if !rng.random_bool(config.served_challenge_rate) {
                continue;
            }
            let locs = &claimed_locations[&(p, c)];
            challenges.push(ChallengeRecord {
                provider_id: plan.provider_id,
                location_id: *locs.choose(&mut rng).expect("non-empty"),
                cell: c,
                technology: plan.technology,
                outcome: *[ChallengeOutcome::ChallengeWithdrawn, ChallengeOutcome::FccOverturned].choose(&mut rng).expect("non-empty"),
                reason: *reasons.choose(&mut rng).expect("non-empty"),
                resolved_date: start + Days::new(rng.random_range(0..365)),
            });
        }
    }

    // Later snapshot: removals plus a few speed upgrades on served cells.
    let provider_index: BTreeMap<u64, usize> = plans.iter().enumerate().map(|(i, p)| (p.provider_id, i)).collect();
    let mut later_claims = Vec::with_capacity(base_claims.len());
    for c in &base_claims {
        let idx = provider_index.get(&c.provider_id).copied();
        if idx.is_some_and(|i| removed.contains(&(i, c.cell))) {
            continue;
        }
        let mut c = c.clone();
        if idx.is_some_and(|i| plans[i].served.contains(&c.cell)) && rng.random_bool(0.02) {
            c.max_down_mbps *= 2.0;
        }
        later_claims.push(c);
    }

    // Ookla: one small tile at every cell centroid.
    let mut ookla = Vec::new();
    for (&c, &n) in &bsl {
        let served = served_density.contains_key(&c);
        let density = served_density.get(&c).copied().unwrap_or(config.test_density_unserved);
        let devices = poisson(&mut rng, density * f64::from(n));
        let tests = devices + poisson(&mut rng, 0.5 * devices as f64);
        if tests == 0 && devices == 0 {
            continue;
        }
        let centroid = grid.cell_centroid(c)?;
        let down: f64 = if served { rng.random_range(20_000.0..300_000.0) } else { rng.random_range(1_000.0..30_000.0) };
        ookla.push(OoklaTile {
            quadkey: tile_to_quadkey(tile_of(centroid, 17)?),
            tests,
            devices,
            avg_down_kbps: down.round(),
            avg_up_kbps: (down / 8.0).round(),
            avg_latency_ms: rng.random_range(8.0..60.0_f64).round(),
        });
    }

    // MLab tests from customers in truly served cells, plus transit noise.
    let noise = Normal::new(0.0, config.geoloc_noise_km.max(1e-9)).expect("finite sd");
    let weights: f64 = config.geoloc_radius.iter().map(|c| c.0).sum();
    let transit_asns: Vec<u32> = (0..4).map(|k| 3_000 + k).collect();
    let mut mlab = Vec::new();
    let t0 = Utc.with_ymd_and_hms(2023, 7, 1, 0, 0, 0).single().expect("valid timestamp");
    let test = |rng: &mut ChaCha8Rng, asn: u32, c: CellId| -> Result<MlabTest, SynthError> {
        let centroid = grid.cell_centroid(c)?;
        let (dx, dy) = (noise.sample(rng), noise.sample(rng));
        let geo = GeoPoint::new(
            centroid.lat + (dy / EARTH_RADIUS_KM).to_degrees(),
            centroid.lon + (dx / (EARTH_RADIUS_KM * centroid.lat.to_radians().cos())).to_degrees(),
        )?;
        let mut pick = rng.random::<f64>() * weights;
        let mut component = config.geoloc_radius[config.geoloc_radius.len() - 1];
        for &c in &config.geoloc_radius {
            if pick < c.0 {
                component = c;
                break;
            }
            pick -= c.0;
        }
        let (_, lo, hi) = component;
        let radius = if hi > lo { rng.random_range(lo..hi) } else { lo };
        Ok(MlabTest {
            timestamp: t0 + chrono::Duration::seconds(rng.random_range(0..365 * 86_400)),
            asn,
            geo,
            accuracy_radius_km: (radius * 1000.0).round() / 1000.0,
            down_mbps: (rng.random_range(5.0..900.0_f64) * 10.0).round() / 10.0,
            up_mbps: (rng.random_range(1.0..200.0_f64) * 10.0).round() / 10.0,
            min_rtt_ms: (rng.random_range(4.0..80.0_f64) * 10.0).round() / 10.0,
        })
    };
    for plan in &plans {
        for &c in &plan.served {
            for _ in 0..poisson(&mut rng, config.mlab_tests_per_cell) {
                let asn = *plan.asns.choose(&mut rng).expect("at least one ASN");
                mlab.push(test(&mut rng, asn, c)?);
            }
        }
    }
    for &c in bsl.keys() {
        if rng.random_bool(0.02) {
            let asn = *transit_asns.choose(&mut rng).expect("non-empty");
            mlab.push(test(&mut rng, asn, c)?);
        }
    }

    // Registration and registry records.
    let level = config.name_noise_level;
    let mut frn = Vec::new();
    let mut whois = Vec::new();
    let mut methodology = BTreeMap::new();
    let mut all: Vec<(u64, Vec<u32>, String)> =
        plans.iter().enumerate().map(|(p, plan)| (plan.provider_id, plan.asns.clone(), company_name(p))).collect();
    if config.satellite_provider {
        all.push((satellite_id, vec![64_512 + config.n_providers as u32 * 4], "Orbital Sky Internet".to_string()));
    }
    for (p, (provider_id, asns, name)) in all.iter().enumerate() {
        let slug: String = name.to_lowercase().split_whitespace().collect::<Vec<_>>().join("-");
        let domain = format!("{slug}.net");
        let email = format!("noc@{domain}");
        let number = 100 + p as u32;
        let (dir, street, suffix) = (
            DIRECTIONS[p % DIRECTIONS.len()],
            STREET_NAMES[(p / DIRECTIONS.len()) % STREET_NAMES.len()],
            STREET_SUFFIXES[p % STREET_SUFFIXES.len()],
        );
        let n_frn = 1 + usize::from(p % 3 == 0);
        for k in 0..n_frn {
            frn.push(FrnRegistration {
                frn: 2_000_000 + *provider_id * 10 + k as u64,
                provider_id: *provider_id,
                company_name: noisy_company(&mut rng, name, level),
                contact_email: noisy_email(&mut rng, &email, level),
                physical_address: noisy_address(&mut rng, number, dir, street, suffix, level),
            });
        }
        // Every ASN of a provider uses the same path kind, so the methods
        // that fire agree exactly.
        for (k, &asn) in asns.iter().enumerate() {
            let h = format!("{p}-{k}");
            let poc = format!("POC-{h}");
            let address = noisy_address(&mut rng, number, dir, street, suffix, level);
            match p % 3 {
                0 => {
                    whois.push(RegistryObject::Asn { asn, org: None, pocs: vec![poc.clone()] });
                    whois.push(RegistryObject::Poc { handle: poc, email: Some(noisy_email(&mut rng, &email, level)), address: Some(address) });
                }
                1 => {
                    let org = format!("ORG-{h}");
                    whois.push(RegistryObject::Asn { asn, org: Some(org.clone()), pocs: vec![] });
                    whois.push(RegistryObject::Org {
                        handle: org,
                        name: noisy_company(&mut rng, name, level),
                        address: Some(address),
                        pocs: vec![poc.clone()],
                        nets: vec![],
                    });
                    whois.push(RegistryObject::Poc { handle: poc, email: Some(noisy_email(&mut rng, &email, level)), address: None });
                }
                _ => {
                    let org = format!("ORG-{h}");
                    let net = format!("NET-{h}");
                    whois.push(RegistryObject::Asn { asn, org: Some(org.clone()), pocs: vec![] });
                    whois.push(RegistryObject::Org {
                        handle: org,
                        name: noisy_company(&mut rng, name, level),
                        address: Some(address),
                        pocs: vec![],
                        nets: vec![net.clone()],
                    });
                    whois.push(RegistryObject::Net { handle: net, pocs: vec![poc.clone()] });
                    whois.push(RegistryObject::Poc { handle: poc, email: Some(noisy_email(&mut rng, &email, level)), address: None });
                }
            }
        }
        let template = METHODOLOGY_TEMPLATES[p % METHODOLOGY_TEMPLATES.len()];
        methodology.insert((*provider_id, None), format!("{template}."));
    }
    for (k, &asn) in transit_asns.iter().enumerate() {
        let poc = format!("POC-T{k}");
        whois.push(RegistryObject::Asn { asn, org: None, pocs: vec![poc.clone()] });
        whois.push(RegistryObject::Poc { handle: poc, email: Some(format!("peering@transit{k}.example")), address: None });
    }

    let hex_counts = bsl.iter().map(|(&cell, &bsl_count)| HexLocationCount { cell, bsl_count }).collect();
    let mut providers: Vec<ProviderTruth> = plans
        .iter()
        .map(|p| ProviderTruth {
            provider_id: p.provider_id,
            technology: p.technology,
            home_state: states[p.state].code.clone(),
            asns: p.asns.iter().copied().collect(),
            served: p.served.clone(),
            overclaimed: p.overclaimed.clone(),
            planted: p.planted.clone(),
        })
        .collect();
    if config.satellite_provider {
        providers.push(ProviderTruth {
            provider_id: satellite_id,
            technology: Technology::GsoSatellite,
            home_state: String::new(),
            asns: BTreeSet::from([64_512 + config.n_providers as u32 * 4]),
            served: bsl.keys().copied().collect(),
            overclaimed: BTreeSet::new(),
            planted: BTreeSet::new(),
        });
    }

    Ok(World {
        config: config.clone(),
        base_claims,
        later_claims,
        methodology,
        challenges,
        ookla,
        mlab,
        frn,
        whois,
        hex_counts,
        truth: WorldTruth { providers, cell_states },
    })
}

fn company_name(p: usize) -> String {
    let stem = NAME_STEMS[p % NAME_STEMS.len()];
    let kind = NAME_KINDS[(p / NAME_STEMS.len()) % NAME_KINDS.len()];
    let round = p / (NAME_STEMS.len() * NAME_KINDS.len());
    if round == 0 {
        format!("{stem} {kind}")
    } else {
        format!("{stem} {kind} {}", round + 1)
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive mean").sample(rng) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthScore {
    /// Suspicion scores against the overclaim indicator.
    pub auc: Option<f64>,
    /// Overclaimed keys scored above the threshold.
    pub flag_rate: f64,
    /// Truly served keys scored above the threshold.
    pub false_flag_rate: f64,
    pub overclaimed: usize,
    pub served: usize,
    /// Keys the truth knows nothing about.
    pub unknown: usize,
}

/// `predictions` are (key, probability the claim is an overclaim).
pub fn score_against_truth(predictions: &[(ObservationKey, f64)], truth: &WorldTruth, threshold: f64) -> TruthScore {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut unknown = 0;
    for (k, p) in predictions {
        match truth.is_overclaim(k) {
            Some(over) => {
                scores.push(*p);
                labels.push(if over { 1.0 } else { 0.0 });
            }
            None => unknown += 1,
        }
    }
    let rate = |want: f64| {
        let (hit, n) = scores
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == want)
            .fold((0usize, 0usize), |(h, n), (&s, _)| (h + usize::from(s > threshold), n + 1));
        if n == 0 { 0.0 } else { hit as f64 / n as f64 }
    };
    TruthScore {
        auc: nbm_gbdt::metrics::auc(&scores, &labels),
        flag_rate: rate(1.0),
        false_flag_rate: rate(0.0),
        overclaimed: labels.iter().filter(|&&l| l == 1.0).count(),
        served: labels.iter().filter(|&&l| l == 0.0).count(),
        unknown,
    }
}
