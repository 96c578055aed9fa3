//! The deterministic preprocessing chain shared by the CLI and end-to-end
//! tests: diff, provider matching, reprojection, attribution, labeling and
//! the feature context built on top of them.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attribution::{attribute_and_localize, reproject_ookla, CellTestStats, Localization};
use crate::claims::ClaimIndex;
use crate::diff::{diff_snapshots, removals_as_labels, ClaimDelta, RemovalEvidence};
use crate::entity_match::{flatten_whois, match_providers, ProviderAsnMatch, WhoisWarning};
use crate::features::{FeatureContext, FeatureError, MethodologySource};
use crate::geo::{GeoError, HexGrid};
use crate::ingest::{
    self, ChallengeRecord, FrnRegistration, HexLocationCount, IngestError, MapSnapshot, MethodologyKey, MlabTest, OoklaTile,
    RegistryObject,
};
use crate::labeling::{build_labeled_set, likely_served, LabelError, LabeledObservation, LabeledSet, LabelingConfig};
use crate::synthworld::{BundlePaths, World};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Locations of every input dataset. The later snapshot and methodology are
/// optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    pub claims_base: PathBuf,
    pub claims_later: Option<PathBuf>,
    pub methodology: Option<PathBuf>,
    pub challenges: PathBuf,
    pub ookla: PathBuf,
    pub mlab: PathBuf,
    pub frn: PathBuf,
    pub whois: PathBuf,
    pub hex_counts: PathBuf,
}

impl InputPaths {
    pub fn all(&self) -> Vec<&PathBuf> {
        let mut out = vec![&self.claims_base];
        out.extend(self.claims_later.iter());
        out.extend(self.methodology.iter());
        out.extend([&self.challenges, &self.ookla, &self.mlab, &self.frn, &self.whois, &self.hex_counts]);
        out
    }
}

impl From<&BundlePaths> for InputPaths {
    fn from(b: &BundlePaths) -> Self {
        Self {
            claims_base: b.claims_base.clone(),
            claims_later: Some(b.claims_later.clone()),
            methodology: Some(b.methodology.clone()),
            challenges: b.challenges.clone(),
            ookla: b.ookla.clone(),
            mlab: b.mlab.clone(),
            frn: b.frn.clone(),
            whois: b.whois.clone(),
            hex_counts: b.hex_counts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub base: MapSnapshot,
    pub later: Option<MapSnapshot>,
    pub methodology: BTreeMap<MethodologyKey, String>,
    pub challenges: Vec<ChallengeRecord>,
    pub ookla: Vec<OoklaTile>,
    pub mlab: Vec<MlabTest>,
    /// MLab rows dropped at ingest for lacking an accuracy radius.
    pub mlab_rejected: usize,
    pub frn: Vec<FrnRegistration>,
    pub whois: Vec<RegistryObject>,
    pub hex_counts: Vec<HexLocationCount>,
}

impl Inputs {
    pub fn load(paths: &InputPaths) -> Result<Self, IngestError> {
        let methodology = match &paths.methodology {
            Some(p) => ingest::parse_methodology(p)?,
            None => BTreeMap::new(),
        };
        let mut base = ingest::parse_snapshot(&paths.claims_base)?;
        base.methodology_texts = methodology.clone();
        let mut later = paths.claims_later.as_deref().map(ingest::parse_snapshot).transpose()?;
        if let Some(l) = &mut later {
            l.methodology_texts = methodology.clone();
        }
        let mlab = ingest::parse_mlab(&paths.mlab)?;
        Ok(Self {
            base,
            later,
            methodology,
            challenges: ingest::parse_challenges(&paths.challenges)?,
            ookla: ingest::parse_ookla(&paths.ookla)?,
            mlab: mlab.tests,
            mlab_rejected: mlab.rejected_missing_radius,
            frn: ingest::parse_frn(&paths.frn)?,
            whois: ingest::parse_whois(&paths.whois)?,
            hex_counts: ingest::parse_hex_counts(&paths.hex_counts)?,
        })
    }

    /// The in-memory equivalent of writing a world's bundle and loading it.
    pub fn from_world(w: &World) -> Self {
        let snapshot = |claims: &[ingest::AvailabilityClaim]| MapSnapshot {
            claims: claims.to_vec(),
            methodology_texts: w.methodology.clone(),
            ..Default::default()
        };
        Self {
            base: snapshot(&w.base_claims),
            later: Some(snapshot(&w.later_claims)),
            methodology: w.methodology.clone(),
            challenges: w.challenges.clone(),
            ookla: w.ookla.clone(),
            mlab: w.mlab.clone(),
            mlab_rejected: 0,
            frn: w.frn.clone(),
            whois: w.whois.clone(),
            hex_counts: w.hex_counts.clone(),
        }
    }
}

/// Outputs of every stage before featurization.
#[derive(Debug, Clone, PartialEq)]
pub struct Stages {
    pub claims: ClaimIndex,
    pub deltas: Vec<ClaimDelta>,
    pub removals: Vec<RemovalEvidence>,
    pub whois_warnings: Vec<WhoisWarning>,
    pub matches: Vec<ProviderAsnMatch>,
    pub cell_stats: Vec<CellTestStats>,
    pub localization: Localization,
    pub likely_served: Vec<LabeledObservation>,
    pub labeled: LabeledSet,
}

pub fn run_stages(inputs: &Inputs, grid: &dyn HexGrid, labeling: &LabelingConfig) -> Result<Stages, PipelineError> {
    let claims = ClaimIndex::build(&inputs.base.claims);
    let deltas = match &inputs.later {
        Some(later) => diff_snapshots(&inputs.base, later),
        None => Vec::new(),
    };
    let removals = removals_as_labels(&deltas);
    let (asns, whois_warnings) = flatten_whois(&inputs.whois);
    let matches = match_providers(&inputs.frn, &asns);
    let cell_stats = reproject_ookla(&inputs.ookla, grid)?;
    let localization = attribute_and_localize(&inputs.mlab, &matches, claims.cells_by_provider(), grid);
    let likely = likely_served(&cell_stats, &inputs.hex_counts, &localization.evidence, &claims)?;
    let labeled = build_labeled_set(&inputs.challenges, &removals, &likely, &claims, labeling)?;
    log::info!(
        "stages: {} claim groups, {} deltas, {} matches, {} labeled observations",
        claims.len(),
        deltas.len(),
        matches.iter().filter(|m| !m.asn_union.is_empty()).count(),
        labeled.observations.len()
    );
    Ok(Stages {
        claims,
        deltas,
        removals,
        whois_warnings,
        matches,
        cell_stats,
        localization,
        likely_served: likely,
        labeled,
    })
}

impl Stages {
    pub fn feature_context<'a>(
        &'a self,
        inputs: &'a Inputs,
        grid: &'a dyn HexGrid,
        methodology: MethodologySource<'a>,
    ) -> FeatureContext<'a> {
        FeatureContext::new(&self.claims, grid, &self.cell_stats, &inputs.hex_counts, &self.localization.evidence, methodology)
    }
}
